"""Achievable and outage rates of decoders that use a channel estimate.

Rates follow the worst-case test-channel characterization of a metric's
achievable rate with i.i.d. Gaussian input. The input covariance is
``p_in * I`` with ``p_in = p_bar / m_t``, so the input meets the total power
constraint and the same power enters the perfect-CSI capacity curves.

For a pair (H, H_hat) the test channel is Upsilon = U diag(mu) V^H, with
H = U diag(lambda) V^H. Its noise variance is fixed by conserving received
power, sigma^2(mu) = (p_in / m_r)(|lambda|^2 - |mu|^2) + sigma_z^2, and the
rate is sum_i log2(1 + p_in |mu_i|^2 / sigma^2(mu)). The closed forms pick mu
along h_tilde = diag(U^H H_hat V) with the smallest norm the metric
constraint allows.

All rates are in bits per channel use. Only square systems are handled.
"""
from __future__ import annotations

import logging
import math
from fractions import Fraction
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .channel import (ChannelEstimate, ChannelRealization, SystemConfig, estimate_channel, sample_channel,
                      sample_posterior)
from .errors import DegenerateDirection, DimensionError, DomainError, UnsupportedConfiguration
from .metrics import DecodingMetricKind
from .numerics import RngStream, scaled_gamma_neg_int, svd

log = logging.getLogger(__name__)

# objective gap above which the numeric minimizer's result is reported against a closed form
WORST_CASE_TOL = 1e-6


def input_power(cfg: SystemConfig) -> float:
    """Per-antenna variance of the Gaussian input."""
    return cfg.p_bar / cfg.m_t


def _require_square(cfg: SystemConfig):
    if cfg.m_t != cfg.m_r:
        raise UnsupportedConfiguration(
            f"rate computations support square systems only (m_t == m_r); got {cfg.m_r}x{cfg.m_t}")


def lemma1_expectation(a, k1: float, k2: float, p_bar: float, m_t: int) -> float:
    """E[(|A X|^2 + K1) / (|X|^2 + K2)] for X ~ CN(0, p_bar I_{m_t}), in closed form.

    With n = m_t - 1 and s = K2 / p_bar the value is
    |A|_F^2/(n+1) + (K1/K2 - |A|_F^2/(n+1)) s^(n+1) e^s Gamma(-n, s).
    """
    if not (k1 > 0 and k2 > 0 and p_bar > 0):
        raise DomainError("K1, K2 and p_bar must be positive")
    a = np.asarray(a, dtype=complex)
    if a.shape[-1] != m_t:
        raise DimensionError(f"A has {a.shape[-1]} columns, expected m_t={m_t}")
    n = m_t - 1
    s = k2 / p_bar
    fro = float(np.sum(np.abs(a) ** 2))
    tail = s * scaled_gamma_neg_int(n, s)  # s^(n+1) e^s Gamma(-n, s)
    return fro / (n + 1) + (k1 / k2 - fro / (n + 1)) * tail


def lambda_n(cfg: SystemConfig, est: ChannelEstimate) -> float:
    """t^n e^t Gamma(-n, t) at t = sigma_z^2 / (delta p_in sigma_eps^2), n = m_t - 1."""
    t = cfg.sigma_z_sq / (est.delta * input_power(cfg) * est.sigma_eps_sq) if est.sigma_eps_sq > 0 else math.inf
    return scaled_gamma_neg_int(cfg.m_t - 1, t)


def a_coefficient(cfg: SystemConfig, est: ChannelEstimate, lam: float | None = None) -> float:
    """Centre scaling a_M of the improved metric's constraint ball (positive)."""
    lam = lambda_n(cfg, est) if lam is None else lam
    p, d, se, sz = input_power(cfg), est.delta, est.sigma_eps_sq, cfg.sigma_z_sq
    return d * (d * se * p - lam * sz) / (cfg.m_t * d * se * lam * p + lam * sz - d * se * p)


def c_constant(h, upsilon, sigma_sq: float, est: ChannelEstimate, cfg: SystemConfig, lam: float | None = None) -> float:
    """Offset C of the metric constraint for a test channel (Upsilon, sigma^2 I).

    It vanishes whenever sigma^2 conserves received power, which is how the
    rate computations choose it.
    """
    lam = lambda_n(cfg, est) if lam is None else lam
    p, d, se, sz = input_power(cfg), est.delta, est.sigma_eps_sq, cfg.sigma_z_sq
    num = (np.sum(np.abs(h) ** 2) - np.sum(np.abs(upsilon) ** 2)
           + (cfg.m_r * sz - cfg.m_r * sigma_sq) / p)
    return float(cfg.m_t * lam * num / (1 - sz * lam / (d * p * se) - cfg.m_t * lam))


@dataclass(frozen=True)
class TestChannelConstants:
    """Quantities fixing the constraint sets for one (H, H_hat) pair.

    ``h_tilde`` is diag(U^H H_hat V); ``b_m`` is the squared radius of the
    improved metric's constraint sphere around ``-a_m * h_tilde``.
    """

    lambda_n: float
    a_m: float
    c_const: float
    b_m: float
    h_tilde: np.ndarray
    lambda_vec: np.ndarray
    u: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    sigma_z_sq: float = field(repr=False, default=1.0)
    p_in: float = field(repr=False, default=1.0)

    def sigma_sq(self, mu) -> np.ndarray:
        return sigma_sq_of(mu, self.lambda_vec, self.p_in, self.sigma_z_sq)

    def objective(self, mu) -> np.ndarray:
        return rate_of(mu, self.lambda_vec, self.p_in, self.sigma_z_sq)


def sigma_sq_of(mu, lam, p_in, sigma_z_sq):
    m_r = np.shape(lam)[-1]
    return p_in / m_r * (np.sum(np.abs(lam) ** 2, -1) - np.sum(np.abs(mu) ** 2, -1)) + sigma_z_sq


def rate_of(mu, lam, p_in, sigma_z_sq):
    """sum_i log2(1 + p_in |mu_i|^2 / sigma^2(mu))."""
    s2 = sigma_sq_of(mu, lam, p_in, sigma_z_sq)
    return np.sum(np.log2(1 + p_in * np.abs(mu) ** 2 / s2[..., None]), -1)


def test_channel_constants(h: ChannelRealization, est: ChannelEstimate, cfg: SystemConfig) -> TestChannelConstants:
    _require_square(cfg)
    hm = np.asarray(h.h if isinstance(h, ChannelRealization) else h, dtype=complex)
    lam = lambda_n(cfg, est)
    a = a_coefficient(cfg, est, lam)
    dec = svd(hm)
    h_tilde, b = _tilde_and_radius(hm, est.h_hat, dec, a)
    return TestChannelConstants(lam, a, 0.0, float(b), h_tilde, dec.singular_values, dec.u, dec.v,
                                cfg.sigma_z_sq, input_power(cfg))


def _tilde_and_radius(hm, h_hat, dec, a):
    ht_mat = np.conj(np.swapaxes(dec.u, -1, -2)) @ h_hat @ dec.v
    h_tilde = np.diagonal(ht_mat, axis1=-2, axis2=-1)
    b = (np.sum(np.abs(hm + a * h_hat) ** 2, axis=(-2, -1))
         - a ** 2 * (np.sum(np.abs(ht_mat) ** 2, axis=(-2, -1)) - np.sum(np.abs(h_tilde) ** 2, -1)))
    return h_tilde, b


@dataclass(frozen=True)
class TestChannelSolution:
    mu_opt: np.ndarray
    sigma_sq_mu: float
    rate_bits: float
    numeric_mu: np.ndarray | None = None
    numeric_rate_bits: float | None = None

    @property
    def numeric_gap(self) -> float | None:
        """Closed-form objective minus the numeric minimum (positive: the closed form is not the minimum)."""
        if self.numeric_rate_bits is None:
            return None
        return self.rate_bits - self.numeric_rate_bits


def improved_coefficient(b_m, a_m, h_tilde_norm):
    """Scalar multiplying h_tilde in the improved closed form; zero when b_m < 0."""
    with np.errstate(invalid="ignore", divide="ignore"):
        coef = np.sqrt(np.maximum(b_m, 0.0)) / h_tilde_norm - abs(a_m)
    return np.where(np.asarray(b_m) >= 0, coef, 0.0)


def mismatched_coefficient(lambda_vec, h_tilde):
    """Re<h_tilde, lambda> / |h_tilde|^2: projection of lambda onto h_tilde."""
    nh2 = np.sum(np.abs(h_tilde) ** 2, -1)
    return np.real(np.sum(lambda_vec * h_tilde, -1)) / nh2


def _solution(consts, mu, numeric=None):
    rate = float(consts.objective(mu))
    if numeric is None:
        return TestChannelSolution(mu, float(consts.sigma_sq(mu)), rate)
    nmu, nrate = numeric
    return TestChannelSolution(mu, float(consts.sigma_sq(mu)), rate, nmu, nrate)


def mu_opt_improved(consts: TestChannelConstants, cfg: SystemConfig | None = None, fallback: bool = True,
                    orientation: str = "derived") -> TestChannelSolution:
    """Closed-form worst-case mu for the improved metric, with the numeric minimum alongside."""
    nh = float(np.linalg.norm(consts.h_tilde))
    if consts.b_m >= 0 and nh == 0:
        raise DegenerateDirection("h_tilde is zero; the closed form has no direction")
    coef = float(improved_coefficient(consts.b_m, consts.a_m, nh)) if nh > 0 else 0.0
    mu = coef * consts.h_tilde
    numeric = minimize_test_channel(consts, DecodingMetricKind.IMPROVED, orientation) if fallback else None
    sol = _solution(consts, mu, numeric)
    if numeric is not None and sol.numeric_gap > WORST_CASE_TOL:
        log.warning("closed-form mu is not the constrained minimum: numeric objective %.6g < closed form %.6g "
                    "(b_m=%.4g, a_m=%.4g, |h_tilde|=%.4g)", sol.numeric_rate_bits, sol.rate_bits,
                    consts.b_m, consts.a_m, nh)
    return sol


def mu_opt_mismatched(consts: TestChannelConstants, cfg: SystemConfig | None = None,
                      fallback: bool = False) -> TestChannelSolution:
    """Closed-form worst-case mu for the mismatched Euclidean metric."""
    if float(np.linalg.norm(consts.h_tilde)) == 0:
        raise DegenerateDirection("h_tilde is zero; the closed form has no direction")
    mu = float(mismatched_coefficient(consts.lambda_vec, consts.h_tilde)) * consts.h_tilde
    numeric = minimize_test_channel(consts, DecodingMetricKind.MISMATCHED_ML) if fallback else None
    return _solution(consts, mu, numeric)


def constraint_margin(mu, consts: TestChannelConstants, kind, orientation: str = "derived"):
    """Nonnegative exactly when ``mu`` satisfies the metric constraint.

    Improved metric: the "derived" set is |mu + a h|^2 >= b_m, the outside of
    the sphere (the metric inequality flips because its coefficient on
    |Upsilon|^2 is negative); "literal" is the ball |mu + a h|^2 <= b_m.
    Mismatched metric: the half-space Re<mu, h> >= Re<lambda, h>.
    """
    kind = DecodingMetricKind.parse(kind)
    mu = np.asarray(mu, dtype=complex)
    if kind is DecodingMetricKind.MISMATCHED_ML:
        h = consts.h_tilde
        return np.real(np.sum(np.conj(h) * mu, -1)) - np.real(np.sum(np.conj(h) * consts.lambda_vec, -1))
    d = np.sum(np.abs(mu + consts.a_m * consts.h_tilde) ** 2, -1) - consts.b_m
    if orientation == "derived":
        return d
    if orientation == "literal":
        return -d
    raise ValueError(f"unknown orientation {orientation!r}")


def minimize_test_channel(consts: TestChannelConstants, kind, orientation: str = "derived",
                          n_random: int = 3, seed: int = 0) -> tuple[np.ndarray, float]:
    """Numeric minimum of the rate over the constraint set intersected with |mu| <= |lambda|.

    The objective grows with every |mu_i|, so when the origin is feasible it is
    the minimizer. Otherwise SLSQP runs on R^(2 m) from the closed-form
    points, lambda, single-coordinate points and random starts, and the best
    feasible result is returned as ``(mu, rate)``.
    """
    kind = DecodingMetricKind.parse(kind)
    lam = np.asarray(consts.lambda_vec, dtype=float)
    m = lam.size
    zero = np.zeros(m, dtype=complex)
    lam_sq = float(np.sum(lam ** 2))
    if constraint_margin(zero, consts, kind, orientation) >= 0:
        return zero, 0.0

    def to_c(w):
        return w[:m] + 1j * w[m:]

    def to_r(z):
        return np.concatenate([np.real(z), np.imag(z)])

    cons = [{"type": "ineq", "fun": lambda w: float(constraint_margin(to_c(w), consts, kind, orientation))},
            {"type": "ineq", "fun": lambda w: lam_sq - float(np.sum(w ** 2))}]

    lam_vec, p_in, sz = consts.lambda_vec, consts.p_in, consts.sigma_z_sq

    def obj(w):
        # trial steps may leave the ball, where sigma^2(mu) can go negative
        z = to_c(w)
        s2 = max(float(sigma_sq_of(z, lam_vec, p_in, sz)), 1e-12 * sz)
        return float(np.sum(np.log2(1 + p_in * np.abs(z) ** 2 / s2)))

    h = consts.h_tilde
    nh = float(np.linalg.norm(h))
    starts = [lam.astype(complex)]
    if nh > 0:
        starts.append(float(improved_coefficient(consts.b_m, consts.a_m, nh)) * h)
        starts.append(float(mismatched_coefficient(lam, h)) * h)
    radius = float(np.linalg.norm(starts[-1]))
    for i in range(m):
        # all of the closed form's norm on one coordinate, same phase as h_tilde
        e = np.zeros(m, dtype=complex)
        e[i] = radius * (h[i] / abs(h[i]) if abs(h[i]) > 0 else 1.0)
        starts.append(e)
    g = np.random.default_rng(seed)
    for _ in range(n_random):
        z = g.standard_normal(m) + 1j * g.standard_normal(m)
        starts.append(z / np.linalg.norm(z) * math.sqrt(lam_sq) * g.uniform(0.2, 1.0))

    best_mu, best = lam.astype(complex), float(consts.objective(lam.astype(complex)))
    for z0 in starts:
        res = minimize(obj, to_r(z0), method="SLSQP", constraints=cons,
                       options={"maxiter": 150, "ftol": 1e-12})
        z = to_c(res.x)
        if (constraint_margin(z, consts, kind, orientation) >= -1e-9
                and np.sum(np.abs(z) ** 2) <= lam_sq * (1 + 1e-9) + 1e-12):
            val = float(consts.objective(z))
            if val < best:
                best, best_mu = val, z
    return best_mu, best


def achievable_rate(h: ChannelRealization, est: ChannelEstimate, kind, cfg: SystemConfig) -> float:
    """Instantaneous achievable rate of a metric at (H, H_hat), from its closed-form mu."""
    kind = DecodingMetricKind.parse(kind)
    consts = test_channel_constants(h, est, cfg)
    if kind is DecodingMetricKind.IMPROVED:
        return mu_opt_improved(consts, cfg, fallback=False).rate_bits
    return mu_opt_mismatched(consts, cfg).rate_bits


def rate_det_form(consts: TestChannelConstants, mu) -> float:
    """log2 det(I + p_in Upsilon Upsilon^H / sigma^2(mu)) with Upsilon = U diag(mu) V^H."""
    ups = (consts.u * np.asarray(mu)[None, :]) @ np.conj(consts.v.T)
    m = ups.shape[0]
    mat = np.eye(m) + consts.p_in * ups @ np.conj(ups.T) / consts.sigma_sq(mu)
    return float(np.linalg.slogdet(mat)[1] / math.log(2))


def perfect_csi_rate(h, cfg: SystemConfig):
    """log2 det(I + (p_bar / m_t) H H^H / sigma_z^2), batched over leading axes."""
    hm = np.asarray(h.h if isinstance(h, ChannelRealization) else h, dtype=complex)
    mat = np.eye(cfg.m_r) + input_power(cfg) * hm @ np.conj(np.swapaxes(hm, -1, -2)) / cfg.sigma_z_sq
    return np.linalg.slogdet(mat)[1] / math.log(2)


def batch_rates(h, est: ChannelEstimate, cfg: SystemConfig, kinds=("mismatched", "improved"), a_m=None):
    """Closed-form rates for a stack of channels H (..., m, m) sharing one estimate.

    Returns a dict keyed by metric value.
    """
    _require_square(cfg)
    hm = np.asarray(h.h if isinstance(h, ChannelRealization) else h, dtype=complex)
    dec = svd(hm)
    lam = dec.singular_values
    a = a_coefficient(cfg, est) if a_m is None else a_m
    h_tilde, b = _tilde_and_radius(hm, est.h_hat, dec, a)
    nh = np.linalg.norm(h_tilde, axis=-1)
    if np.any(nh == 0):
        raise DegenerateDirection("h_tilde is zero for some channel draw")
    p = input_power(cfg)
    out = {}
    for k in kinds:
        k = DecodingMetricKind.parse(k)
        if k is DecodingMetricKind.IMPROVED:
            coef = improved_coefficient(b, a, nh)
        else:
            coef = mismatched_coefficient(lam, h_tilde)
        out[k.value] = rate_of(coef[..., None] * h_tilde, lam, p, cfg.sigma_z_sq)
    return out


def outage_quantile(samples, gamma: float) -> float:
    """sup{R : #{c < R} / n <= gamma} over an empirical sample."""
    if not 0 < gamma < 1:
        raise DomainError("gamma must lie in (0, 1)")
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    # #{c < x[k]} <= k, so the largest k with k <= gamma n; exact rational floor
    k = min(math.floor(Fraction(gamma) * n), n - 1)
    return float(x[k])


def _posterior_draws(est, cfg, n_mc, rng):
    if n_mc < 1000:
        raise DomainError("n_mc must be at least 1000")
    return sample_posterior(est, cfg, rng, n=n_mc).h


def outage_rate(est: ChannelEstimate, gamma: float, kind, cfg: SystemConfig, n_mc: int, rng: RngStream) -> float:
    """Largest rate whose outage probability under H | H_hat is at most gamma."""
    hs = _posterior_draws(est, cfg, n_mc, rng)
    kind = DecodingMetricKind.parse(kind)
    return outage_quantile(batch_rates(hs, est, cfg, (kind,))[kind.value], gamma)


def eio_capacity(est: ChannelEstimate, gamma: float, cfg: SystemConfig, n_mc: int, rng: RngStream) -> float:
    """Outage capacity with Gaussian input: gamma-quantile of the perfect-CSI rate under H | H_hat."""
    hs = _posterior_draws(est, cfg, n_mc, rng)
    return outage_quantile(perfect_csi_rate(hs, cfg), gamma)


def ergodic_capacity_perfect(cfg: SystemConfig, n_mc: int, rng: RngStream) -> float:
    if n_mc < 1000:
        raise DomainError("n_mc must be at least 1000")
    hs = sample_channel(cfg, rng, batch=(n_mc,)).h
    return float(np.mean(perfect_csi_rate(hs, cfg)))


@dataclass(frozen=True)
class RatePoint:
    """Outage rates averaged over channel estimates at one SNR.

    ``per_estimate`` maps each curve name to the per-estimate values, which
    allows paired comparisons between curves.
    """

    snr_db: float
    n_pilots: int
    gamma: float
    n_mc: int
    n_est: int
    ergodic: float
    ergodic_se: float
    per_estimate: dict = field(repr=False)

    def mean(self, name: str) -> float:
        return float(np.mean(self.per_estimate[name]))

    def se(self, name: str) -> float:
        x = self.per_estimate[name]
        return float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")

    def paired_gap(self, upper: str, lower: str) -> tuple[float, float]:
        """Mean and standard error of upper - lower over the same estimates."""
        d = self.per_estimate[upper] - self.per_estimate[lower]
        return float(np.mean(d)), float(np.std(d, ddof=1) / math.sqrt(d.size)) if d.size > 1 else float("nan")


def rate_curve_point(cfg: SystemConfig, gamma: float, n_mc: int, n_est: int, rng: RngStream,
                     kinds=("mismatched", "improved"), n_ergodic: int | None = None) -> RatePoint:
    """Average outage rates over estimates drawn from the joint (H, H_hat) law.

    Estimate i uses ``rng.child(0, i)``: a fresh H, its estimate, then n_mc
    posterior draws shared by every curve. The ergodic capacity uses
    ``rng.child(1)``.
    """
    _require_square(cfg)
    if n_est < 1:
        raise DomainError("n_est must be >= 1")
    names = [DecodingMetricKind.parse(k).value for k in kinds] + ["eio"]
    per = {k: np.empty(n_est) for k in names}
    a = None
    for i in range(n_est):
        s = rng.child(0, i)
        h = sample_channel(cfg, s)
        est = estimate_channel(h, cfg, s)
        if a is None:
            a = a_coefficient(cfg, est)
        hs = _posterior_draws(est, cfg, n_mc, s)
        rates = batch_rates(hs, est, cfg, kinds, a_m=a)
        for k, v in rates.items():
            per[k][i] = outage_quantile(v, gamma)
        per["eio"][i] = outage_quantile(perfect_csi_rate(hs, cfg), gamma)
    n_erg = n_ergodic or max(n_mc, 1000)
    hs = sample_channel(cfg, rng.child(1), batch=(n_erg,)).h
    c = perfect_csi_rate(hs, cfg)
    log.info("SNR %.2f dB N=%d: %s", cfg.snr_db, cfg.n_pilots,
             ", ".join(f"{k}={np.mean(v):.3f}" for k, v in per.items()))
    return RatePoint(cfg.snr_db, cfg.n_pilots, gamma, n_mc, n_est, float(np.mean(c)),
                     float(np.std(c, ddof=1) / math.sqrt(c.size)), per)


def snr_at_rate(snrs, rates, target: float) -> float:
    """SNR (dB) where a nondecreasing rate curve reaches ``target``, by linear interpolation; nan if never."""
    snrs = np.asarray(snrs, dtype=float)
    rates = np.asarray(rates, dtype=float)
    for i in range(len(snrs) - 1):
        r0, r1 = rates[i], rates[i + 1]
        if r0 <= target <= r1 and r1 > r0:
            return float(snrs[i] + (target - r0) / (r1 - r0) * (snrs[i + 1] - snrs[i]))
    return float("nan")


def test_channel_matrix(consts: TestChannelConstants, mu) -> np.ndarray:
    """Upsilon = U diag(mu) V^H."""
    return (consts.u * np.asarray(mu)[..., None, :]) @ np.conj(np.swapaxes(consts.v, -1, -2))


def expected_metric(kind, upsilon, sigma_sq: float, est: ChannelEstimate, cfg: SystemConfig) -> float:
    """E[d(X, Y)] when Y = Upsilon X + CN(0, sigma^2 I) and X ~ CN(0, p_in I).

    The metric constraint on a test channel compares this against the value
    at (H, sigma_z^2). For the improved metric the M_R log s(x) term is the
    same on both sides and is left out; the rest is an expectation of the form computed by
    :func:`lemma1_expectation`.
    """
    kind = DecodingMetricKind.parse(kind)
    p = input_power(cfg)
    ups = np.asarray(upsilon, dtype=complex)
    if kind is DecodingMetricKind.MISMATCHED_ML:
        return float(p * np.sum(np.abs(ups - est.h_hat) ** 2) + cfg.m_r * sigma_sq)
    de = est.delta * est.sigma_eps_sq
    return lemma1_expectation(ups - est.delta * est.h_hat, cfg.m_r * sigma_sq, cfg.sigma_z_sq / de, p, cfg.m_t) / de
