"""Complex linear algebra, special functions and seeded complex Gaussian sampling.

Matrices are plain ``numpy`` complex arrays. Functions that act on matrices
accept stacks with arbitrary leading batch dimensions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

EULER_GAMMA = 0.5772156649015329

_EPS = 1e-16
_FPMIN = 1e-300
_MAXIT = 10_000


@dataclass(frozen=True)
class SvdResult:
    """``m = u @ diag(singular_values) @ v.conj().T`` (batched over leading axes)."""

    u: np.ndarray
    singular_values: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        k = self.singular_values.shape[-1]
        return (self.u[..., :, :k] * self.singular_values[..., None, :]) @ _herm(self.v[..., :, :k])


def _herm(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def svd(m) -> SvdResult:
    """Full SVD with a fixed phase convention.

    Singular values are sorted descending (stable, so ties keep column order).
    Each column of ``v`` is rotated so its first nonzero entry is real positive,
    and the matching column of ``u`` gets the same rotation, which leaves the
    product unchanged.
    """
    m = np.asarray(m, dtype=complex)
    if m.ndim < 2 or m.shape[-1] == 0 or m.shape[-2] == 0:
        raise DomainError("svd needs a nonempty matrix")
    if not np.all(np.isfinite(m)):
        raise DomainError("svd input has non-finite entries")
    u, s, vh = np.linalg.svd(m)
    v = _herm(vh)
    k = s.shape[-1]

    order = np.argsort(-s, axis=-1, kind="stable")
    s = np.take_along_axis(s, order, axis=-1)
    u_k = np.take_along_axis(u[..., :, :k], order[..., None, :], axis=-1)
    v_k = np.take_along_axis(v[..., :, :k], order[..., None, :], axis=-1)
    u = np.concatenate([u_k, u[..., :, k:]], axis=-1)
    v = np.concatenate([v_k, v[..., :, k:]], axis=-1)

    # phase convention on the paired columns
    nonzero = np.abs(v[..., :, :k]) > 1e-12
    first = np.argmax(nonzero, axis=-2)
    pivot = np.take_along_axis(v[..., :, :k], first[..., None, :], axis=-2)[..., 0, :]
    phase = np.where(np.abs(pivot) > 0, np.conj(pivot) / np.where(pivot == 0, 1, np.abs(pivot)), 1.0)
    u = u.copy()
    v = v.copy()
    u[..., :, :k] *= phase[..., None, :]
    v[..., :, :k] *= phase[..., None, :]
    return SvdResult(u=u, singular_values=s, v=v)


def _expn(n: int, t: float, scaled: bool = False) -> float:
    """Generalized exponential integral E_n(t) for n >= 1, t > 0.

    Power series below t = 1, modified Lentz continued fraction above. With
    ``scaled`` the result is multiplied by exp(t); the continued fraction
    produces that product directly, so large t does not underflow.
    """
    if t >= 1.0:
        b = t + n
        c = 1.0 / _FPMIN
        d = 1.0 / b
        h = d
        for i in range(1, _MAXIT):
            an = -i * (n - 1 + i)
            b += 2.0
            d = 1.0 / (an * d + b)
            c = b + an / c
            delta = c * d
            h *= delta
            if abs(delta - 1.0) < _EPS:
                return h if scaled else h * math.exp(-t)
        raise ArithmeticError(f"continued fraction for E_{n}({t}) did not converge")

    nm1 = n - 1
    ans = 1.0 / nm1 if nm1 != 0 else -math.log(t) - EULER_GAMMA
    fact = 1.0
    for i in range(1, _MAXIT):
        fact *= -t / i
        if i != nm1:
            delta = -fact / (i - nm1)
        else:
            psi = -EULER_GAMMA + sum(1.0 / k for k in range(1, nm1 + 1))
            delta = fact * (-math.log(t) + psi)
        ans += delta
        if abs(delta) < abs(ans) * _EPS:
            return ans * math.exp(t) if scaled else ans
    raise ArithmeticError(f"series for E_{n}({t}) did not converge")


def exp_integral(t: float) -> float:
    """Gamma(0, t), the integral of exp(-u)/u over [t, inf)."""
    t = float(t)
    if not t > 0 or not math.isfinite(t):
        raise DomainError(f"exp_integral needs t > 0, got {t}")
    return _expn(1, t)


def gamma_neg_int(n: int, t: float) -> float:
    """Upper incomplete gamma Gamma(-n, t) for integer n >= 0.

    Uses Gamma(-n, t) = t**(-n) * E_{n+1}(t). The closed finite sum in
    :func:`gamma_neg_int_finite_sum` is algebraically equal but subtracts
    nearly equal terms once t is large relative to n, so it is kept only as a
    cross-check.
    """
    n = int(n)
    if n < 0:
        raise DomainError("gamma_neg_int needs n >= 0")
    t = float(t)
    if not t > 0 or not math.isfinite(t):
        raise DomainError(f"gamma_neg_int needs t > 0, got {t}")
    return t ** (-n) * _expn(n + 1, t)


def scaled_gamma_neg_int(n: int, t: float) -> float:
    """t**n * exp(t) * Gamma(-n, t), evaluated without overflow."""
    n = int(n)
    t = float(t)
    if n < 0 or not t > 0 or not math.isfinite(t):
        raise DomainError(f"scaled_gamma_neg_int needs n >= 0, t > 0; got n={n}, t={t}")
    return _expn(n + 1, t, scaled=True)


def gamma_neg_int_finite_sum(n: int, t: float) -> float:
    """Gamma(-n, t) from the alternating finite sum over Gamma(0, t)."""
    n = int(n)
    if n < 0:
        raise DomainError("gamma_neg_int_finite_sum needs n >= 0")
    e1 = exp_integral(t)
    tail = sum((-1) ** i * math.factorial(i) / t ** (i + 1) for i in range(n))
    return (-1) ** n / math.factorial(n) * (e1 - math.exp(-t) * tail)


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream keyed by ``(seed, stream_id)``.

    Two streams built from the same key produce the same samples. ``child``
    derives independent sub-streams, so parallel workers never share state.
    """

    seed: int
    stream_id: int = 0
    path: tuple[int, ...] = ()
    generator: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id), *self.path))
        object.__setattr__(self, "generator", np.random.Generator(np.random.PCG64(ss)))

    def child(self, *keys: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id, self.path + tuple(int(k) for k in keys))


def sample_cgn(mean, per_entry_variance: float, rng: RngStream, shape=None) -> np.ndarray:
    """Circularly symmetric complex Gaussian samples around ``mean``.

    Real and imaginary parts each get variance ``per_entry_variance / 2``.
    ``shape`` broadcasts ``mean`` to a larger array of draws.
    """
    if per_entry_variance < 0:
        raise DomainError("variance must be nonnegative")
    mean = np.asarray(mean, dtype=complex)
    if shape is None:
        shape = mean.shape
    mean = np.broadcast_to(mean, shape)
    if per_entry_variance == 0:
        return mean.copy()
    g = rng.generator
    scale = math.sqrt(per_entry_variance / 2.0)
    return mean + scale * (g.standard_normal(shape) + 1j * g.standard_normal(shape))
