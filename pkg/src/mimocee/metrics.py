"""Per-letter decoding metrics for a receiver that only holds a channel estimate.

``metric_mismatched`` is the Euclidean distance obtained by plugging the
estimate into the Gaussian likelihood. ``metric_improved`` is the negative
log-density (natural log, without the M_R log(pi) constant) of the channel
averaged over the estimation error, which is CN(delta H_hat x,
(sigma_z^2 + delta sigma_eps^2 |x|^2) I).
"""
from __future__ import annotations

import enum

import numpy as np

from .channel import ChannelEstimate, SystemConfig
from .errors import DimensionError

# lower bound on the per-candidate variance so the noiseless limit stays finite
_VAR_FLOOR = 1e-250


class DecodingMetricKind(enum.Enum):
    MISMATCHED_ML = "mismatched"
    IMPROVED = "improved"

    @classmethod
    def parse(cls, value) -> "DecodingMetricKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"mismatched": cls.MISMATCHED_ML, "mismatched_ml": cls.MISMATCHED_ML, "ml": cls.MISMATCHED_ML,
                   "improved": cls.IMPROVED}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown metric {value!r}; expected one of {sorted(aliases)}") from None


def _dims(x, y, h_hat):
    x = np.asarray(x, dtype=complex)
    y = np.asarray(y, dtype=complex)
    h_hat = np.asarray(h_hat, dtype=complex)
    if h_hat.shape[-1] != x.shape[-1] or h_hat.shape[-2] != y.shape[-1]:
        raise DimensionError(f"H_hat {h_hat.shape[-2:]} incompatible with x {x.shape} and y {y.shape}")
    return x, y, h_hat


def _residual_sq(y, h, x):
    r = y - (h @ x[..., None])[..., 0]
    return np.sum(np.abs(r) ** 2, axis=-1)


def metric_mismatched(x, y, est: ChannelEstimate):
    """|y - H_hat x|^2."""
    x, y, h_hat = _dims(x, y, est.h_hat)
    return _residual_sq(y, h_hat, x)


def metric_improved(x, y, est: ChannelEstimate, cfg: SystemConfig):
    """M_R log(s(x)) + |y - delta H_hat x|^2 / s(x), s(x) = sigma_z^2 + delta sigma_eps^2 |x|^2."""
    x, y, h_hat = _dims(x, y, est.h_hat)
    s = cfg.sigma_z_sq + est.delta * est.sigma_eps_sq * np.sum(np.abs(x) ** 2, axis=-1)
    return cfg.m_r * np.log(s) + _residual_sq(y, est.delta * h_hat, x) / s


def letter_cost(kind: DecodingMetricKind, x, y, est: ChannelEstimate, cfg: SystemConfig):
    kind = DecodingMetricKind.parse(kind)
    if kind is DecodingMetricKind.IMPROVED:
        return metric_improved(x, y, est, cfg)
    return metric_mismatched(x, y, est)


def sequence_cost(kind: DecodingMetricKind, xs, ys, est: ChannelEstimate, cfg: SystemConfig) -> float:
    """Additive sequence metric: mean of the per-letter costs."""
    xs = np.asarray(xs, dtype=complex)
    ys = np.asarray(ys, dtype=complex)
    if xs.shape[0] != ys.shape[0]:
        raise DimensionError(f"sequence lengths differ: {xs.shape[0]} vs {ys.shape[0]}")
    return float(np.mean(letter_cost(kind, xs, ys, est, cfg)))


def negative_log_likelihood(kind: DecodingMetricKind, candidates, ys, est: ChannelEstimate, cfg: SystemConfig):
    """Costs for soft demapping, one per (observation, candidate) pair.

    ``candidates`` has shape (C, m_t); ``ys`` has shape (..., K, m_r) and
    ``est.h_hat`` shape (..., m_r, m_t) with matching leading axes. Returns
    shape (..., K, C).

    Soft outputs depend on the scale of the cost, so the mismatched metric is
    used here as the full negative log-likelihood of the plug-in Gaussian
    channel, |y - H_hat x|^2 / sigma_z^2 + M_R log sigma_z^2. With zero
    estimation error this is identical to the improved metric.
    """
    kind = DecodingMetricKind.parse(kind)
    candidates = np.asarray(candidates, dtype=complex)
    ys = np.asarray(ys, dtype=complex)
    h_hat = np.asarray(est.h_hat, dtype=complex)
    if kind is DecodingMetricKind.IMPROVED:
        scale = est.delta
        s = cfg.sigma_z_sq + est.delta * est.sigma_eps_sq * np.sum(np.abs(candidates) ** 2, axis=-1)
    else:
        scale = 1.0
        s = np.full(candidates.shape[0], float(cfg.sigma_z_sq))
    hx = (scale * h_hat) @ candidates.T  # (..., m_r, C)
    # |y - Hx|^2 expanded to avoid a (K, C, m_r) temporary
    cross = np.real(np.conj(ys) @ hx)  # (..., K, C)
    dist = np.sum(np.abs(ys) ** 2, axis=-1)[..., None] - 2 * cross + np.sum(np.abs(hx) ** 2, axis=-2)[..., None, :]
    dist = np.maximum(dist, 0.0)
    s = np.maximum(s, _VAR_FLOOR)
    return cfg.m_r * np.log(s) + dist / s
