"""Gray-labelled constellations, MIMO symbol mapping and the soft demapper."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ..channel import ChannelEstimate, SystemConfig
from ..errors import DimensionError
from ..metrics import DecodingMetricKind, negative_log_likelihood
from .code import LLR_CLIP

# two Gray-coded bits per axis -> amplitude level
_GRAY_PAM4 = {(0, 0): -3, (0, 1): -1, (1, 1): 1, (1, 0): 3}


@dataclass(frozen=True)
class Constellation:
    """Points indexed by their bit label, MSB first."""

    points: np.ndarray
    bits_per_symbol: int
    labels: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.points) != 1 << self.bits_per_symbol:
            raise ValueError("constellation size must be 2**bits_per_symbol")
        object.__setattr__(self, "labels", _bit_table(self.bits_per_symbol))

    @property
    def energy(self) -> float:
        return float(np.mean(np.abs(self.points) ** 2))


def _bit_table(n_bits: int) -> np.ndarray:
    idx = np.arange(1 << n_bits)
    return ((idx[:, None] >> np.arange(n_bits - 1, -1, -1)) & 1).astype(np.int8)


def gray_qam16(energy: float = 1.0) -> Constellation:
    """Square 16-QAM: bits (b0, b1) pick the in-phase level, (b2, b3) the quadrature."""
    pts = np.empty(16, dtype=complex)
    for i, (b0, b1, b2, b3) in enumerate(_bit_table(4)):
        pts[i] = _GRAY_PAM4[(b0, b1)] + 1j * _GRAY_PAM4[(b2, b3)]
    return Constellation(pts * math.sqrt(energy / 10.0), 4)


def bpsk(energy: float = 1.0) -> Constellation:
    """Label 0 -> -sqrt(E), label 1 -> +sqrt(E)."""
    a = math.sqrt(energy)
    return Constellation(np.array([-a, a], dtype=complex), 1)


def default_constellation(cfg: SystemConfig) -> Constellation:
    """16-QAM with per-antenna energy p_bar / m_t, so tr E[x x^H] = p_bar."""
    return gray_qam16(cfg.p_bar / cfg.m_t)


@lru_cache(maxsize=8)
def _compound(points_key: bytes, bits_per_symbol: int, m_t: int):
    points = np.frombuffer(points_key, dtype=complex)
    nb = bits_per_symbol * m_t
    labels = _bit_table(nb)
    # antenna a takes bits [a*b, (a+1)*b) of the compound label
    weights = 1 << np.arange(bits_per_symbol - 1, -1, -1)
    per_antenna = labels.reshape(-1, m_t, bits_per_symbol) @ weights
    cands = points[per_antenna]
    cands.setflags(write=False)
    labels.setflags(write=False)
    return cands, labels


def compound_candidates(constellation: Constellation, m_t: int):
    """All 2**(b m_t) compound symbols, shape (C, m_t), and their bit labels (C, b m_t)."""
    return _compound(np.ascontiguousarray(constellation.points).tobytes(), constellation.bits_per_symbol, m_t)


def map_frame(bits, cfg: SystemConfig, constellation: Constellation | None = None) -> np.ndarray:
    """Bits (..., n) -> compound symbols (..., n / (b m_t), m_t)."""
    c = constellation or default_constellation(cfg)
    bits = np.asarray(bits, dtype=np.int64)
    group = c.bits_per_symbol * cfg.m_t
    if bits.shape[-1] % group:
        raise DimensionError(f"{bits.shape[-1]} bits is not a multiple of {group}")
    weights = 1 << np.arange(c.bits_per_symbol - 1, -1, -1)
    idx = bits.reshape(*bits.shape[:-1], -1, cfg.m_t, c.bits_per_symbol) @ weights
    return c.points[idx]


def demap_soft(ys, prior_llr, kind: DecodingMetricKind, est: ChannelEstimate, cfg: SystemConfig,
               constellation: Constellation | None = None, costs=None):
    """Extrinsic bit log-ratios from the MIMO soft demapper.

    For bit j of compound symbol k the output is
    log sum_{x: d_j=1} prod_{i!=j} P(d_i) exp(-D(x, y_k)) minus the same sum
    over d_j=0, where D is the chosen metric. The bit's own prior is left out.

    ``ys`` has shape (..., K, m_r) and ``prior_llr`` shape (..., K, b m_t).
    Precomputed ``costs`` (from :func:`symbol_costs`) skip the metric step,
    which is how the iterative receiver reuses them across iterations.
    """
    c = constellation or default_constellation(cfg)
    _, labels = compound_candidates(c, cfg.m_t)
    if costs is None:
        costs = symbol_costs(ys, kind, est, cfg, c)
    prior = np.clip(np.asarray(prior_llr, dtype=float), -LLR_CLIP, LLR_CLIP)
    if prior.shape[-1] != labels.shape[1] or prior.shape[:-1] != costs.shape[:-1]:
        raise DimensionError(f"priors {prior.shape} do not match costs {costs.shape}")
    # symbol log-weight: -D(x) + sum_i d_i L_i; the sum_i log(1 + e^L_i) term cancels
    lab = _float_labels(labels)
    m = -costs + prior @ lab.T
    m -= np.max(m, axis=-1, keepdims=True)
    w = np.exp(m)
    with np.errstate(divide="ignore"):
        out = np.log(w @ lab) - np.log(w @ (1.0 - lab))
    out -= prior
    return np.clip(out, -LLR_CLIP, LLR_CLIP)


@lru_cache(maxsize=8)
def _float_labels_cached(key: bytes, shape):
    return np.frombuffer(key, dtype=np.int8).reshape(shape).astype(float)


def _float_labels(labels):
    return _float_labels_cached(labels.tobytes(), labels.shape)


def symbol_costs(ys, kind, est: ChannelEstimate, cfg: SystemConfig, constellation: Constellation | None = None):
    c = constellation or default_constellation(cfg)
    cands, _ = compound_candidates(c, cfg.m_t)
    ys = np.asarray(ys, dtype=complex)
    if ys.shape[-1] != cfg.m_r:
        raise DimensionError(f"observation length {ys.shape[-1]} != m_r={cfg.m_r}")
    return negative_log_likelihood(kind, cands, ys, est, cfg)


def llr_to_prob(llr):
    """P(d = 1) from log P(d=1)/P(d=0)."""
    return 1.0 / (1.0 + np.exp(-np.asarray(llr, dtype=float)))


def prob_to_llr(p):
    p = np.clip(np.asarray(p, dtype=float), 1e-12, 1 - 1e-12)
    return np.log(p) - np.log1p(-p)
