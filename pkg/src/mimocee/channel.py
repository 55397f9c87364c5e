"""Rayleigh block-fading MIMO channel, pilot-based estimation and the channel posterior."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigurationError, DimensionError
from .numerics import RngStream, sample_cgn

# Eb/N0 bookkeeping for the BICM chain: rate-1/2 code, 16-QAM
CODE_RATE = 0.5
BITS_PER_SYMBOL = 4


@dataclass(frozen=True)
class SystemConfig:
    """Physical constants of one link configuration.

    ``p_bar`` is the total transmit power; ``p_t`` the average pilot energy per
    antenna, which defaults to the data symbol energy ``p_bar / m_t``.
    """

    m_t: int
    m_r: int
    sigma_h_sq: float
    sigma_z_sq: float
    p_bar: float = 1.0
    n_pilots: int = 1
    p_t: float | None = None

    def __post_init__(self):
        if self.p_t is None:
            if not int(self.m_t) >= 1:
                raise ConfigurationError(f"m_t must be >= 1, got {self.m_t}")
            object.__setattr__(self, "p_t", self.p_bar / self.m_t)
        self._validate()

    def _validate(self):
        for name in ("m_t", "m_r", "n_pilots"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("sigma_h_sq", "sigma_z_sq", "p_bar", "p_t"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ConfigurationError(f"{name} must be a positive finite number, got {v}")

    @classmethod
    def unchecked(cls, **kwargs) -> "SystemConfig":
        """Build without validation; for degenerate limits in tests (zero noise, zero fading)."""
        obj = object.__new__(cls)
        defaults = {"p_bar": 1.0, "n_pilots": 1, "p_t": None}
        values = {**defaults, **kwargs}
        if values["p_t"] is None:
            values["p_t"] = values["p_bar"] / values["m_t"]
        for f in fields(cls):
            object.__setattr__(obj, f.name, values[f.name])
        return obj

    @classmethod
    def for_snr(cls, m_t, m_r, snr_db, n_pilots, p_bar=1.0, sigma_h_sq=1.0, p_t=None):
        """Noise variance from SNR = p_bar * sigma_h_sq / sigma_z_sq."""
        sigma_z_sq = p_bar * sigma_h_sq / 10 ** (snr_db / 10)
        return cls(m_t, m_r, sigma_h_sq, sigma_z_sq, p_bar, n_pilots, p_t)

    @classmethod
    def for_ebn0(cls, m_t, m_r, ebn0_db, n_pilots, p_bar=1.0, sigma_h_sq=1.0, p_t=None,
                 bits_per_symbol=BITS_PER_SYMBOL, code_rate=CODE_RATE):
        """Eb/N0 = SNR / (code_rate * bits_per_symbol * m_t)."""
        snr_db = ebn0_db + 10 * math.log10(code_rate * bits_per_symbol * m_t)
        return cls.for_snr(m_t, m_r, snr_db, n_pilots, p_bar, sigma_h_sq, p_t)

    @property
    def snr_t(self) -> float:
        """Training SNR, N * P_T / sigma_z_sq."""
        if self.sigma_z_sq == 0:
            return math.inf
        return self.n_pilots * self.p_t / self.sigma_z_sq

    @property
    def sigma_eps_sq(self) -> float:
        """Per-entry estimation error variance for orthogonal pilots."""
        return self.sigma_z_sq / (self.n_pilots * self.p_t)

    @property
    def delta(self) -> float:
        """Posterior mean shrinkage SNR_T sigma_h^2 / (SNR_T sigma_h^2 + 1)."""
        # sigma_h^2 / (sigma_h^2 + sigma_eps^2) is the same quantity and stays finite at SNR_T = inf
        return self.sigma_h_sq / (self.sigma_h_sq + self.sigma_eps_sq)

    @property
    def snr_db(self) -> float:
        return 10 * math.log10(self.p_bar * self.sigma_h_sq / self.sigma_z_sq)


@dataclass(frozen=True)
class ChannelRealization:
    h: np.ndarray


@dataclass(frozen=True)
class ChannelEstimate:
    h_hat: np.ndarray
    sigma_eps_sq: float
    delta: float

    @classmethod
    def perfect(cls, h) -> "ChannelEstimate":
        h = h.h if isinstance(h, ChannelRealization) else h
        return cls(np.asarray(h, dtype=complex), 0.0, 1.0)


def _check_shape(h: np.ndarray, cfg: SystemConfig):
    if h.shape[-2:] != (cfg.m_r, cfg.m_t):
        raise DimensionError(f"channel shape {h.shape[-2:]} does not match ({cfg.m_r}, {cfg.m_t})")


def sample_channel(cfg: SystemConfig, rng: RngStream, batch: tuple[int, ...] = ()) -> ChannelRealization:
    """i.i.d. CN(0, sigma_h^2) entries; ``batch`` prepends independent draws."""
    shape = (*batch, cfg.m_r, cfg.m_t)
    return ChannelRealization(sample_cgn(np.zeros(shape), cfg.sigma_h_sq, rng))


def apply_channel(h: ChannelRealization, x, cfg: SystemConfig, rng: RngStream, noise=None) -> np.ndarray:
    """y = H x + z, z ~ CN(0, sigma_z^2 I).

    ``x`` has shape (..., m_t) or (..., K, m_t) for K channel uses of one
    block; the matching received array has m_r in place of m_t. A given
    ``noise`` array is used instead of a fresh draw.
    """
    hm = np.asarray(h.h if isinstance(h, ChannelRealization) else h)
    _check_shape(hm, cfg)
    x = np.asarray(x, dtype=complex)
    if x.shape[-1] != cfg.m_t:
        raise DimensionError(f"symbol length {x.shape[-1]} != m_t={cfg.m_t}")
    if x.ndim == hm.ndim - 1:
        hx = (hm @ x[..., None])[..., 0]
    else:
        hx = x @ np.swapaxes(hm, -1, -2)
    if noise is None:
        noise = sample_cgn(np.zeros(hx.shape), cfg.sigma_z_sq, rng)
    elif np.shape(noise) != hx.shape:
        raise DimensionError("noise shape does not match H x")
    return hx + noise


def estimate_channel(h: ChannelRealization, cfg: SystemConfig, rng: RngStream) -> ChannelEstimate:
    """ML estimate from N orthogonal pilots: H_hat = H + E, E white with variance sigma_eps^2."""
    if cfg.n_pilots < cfg.m_t:
        raise ConfigurationError(
            f"orthogonal training needs n_pilots >= m_t; got n_pilots={cfg.n_pilots}, m_t={cfg.m_t}")
    _check_shape(h.h, cfg)
    s2 = cfg.sigma_eps_sq
    return ChannelEstimate(sample_cgn(h.h, s2, rng), s2, cfg.delta)


def sample_posterior(est: ChannelEstimate, cfg: SystemConfig, rng: RngStream, n: int | None = None) -> ChannelRealization:
    """Draw H | H_hat ~ CN(delta H_hat, delta sigma_eps^2) per entry; ``n`` draws stacked in front."""
    mean = est.delta * np.asarray(est.h_hat)
    shape = mean.shape if n is None else (n, *mean.shape)
    return ChannelRealization(sample_cgn(mean, est.delta * est.sigma_eps_sq, rng, shape=shape))
