"""Frame assembly, the iterative demapper/decoder loop, and BER Monte Carlo."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import binomtest

from ..channel import ChannelEstimate, ChannelRealization, SystemConfig, apply_channel
from ..errors import DimensionError
from ..metrics import DecodingMetricKind
from ..numerics import RngStream, sample_cgn
from .code import DEFAULT_CODE, ConvCode, conv_encode, siso_decode
from .interleave import gather, permutations, scatter
from .mapping import Constellation, default_constellation, demap_soft, map_frame, symbol_costs

log = logging.getLogger(__name__)

N_SYMBOLS = 100
DEFAULT_ITERS = 4
# float64 entries allowed in one batch's (frames, symbols, candidates) array
_BATCH_BUDGET = 2_500_000


@dataclass
class Frame:
    info_bits: np.ndarray
    coded_bits: np.ndarray
    interleaved_bits: np.ndarray
    symbols: np.ndarray
    permutation_seed: int


def frame_lengths(cfg: SystemConfig, n_sym: int = N_SYMBOLS, constellation: Constellation | None = None,
                  code: ConvCode = DEFAULT_CODE) -> tuple[int, int]:
    """(info bits, coded bits) of one frame; coded bits fill n_sym compound symbols exactly."""
    c = constellation or default_constellation(cfg)
    n_coded = n_sym * cfg.m_t * c.bits_per_symbol
    return code.info_length(n_coded), n_coded


def make_frame(cfg: SystemConfig, rng: RngStream, n_sym: int = N_SYMBOLS,
               constellation: Constellation | None = None, code: ConvCode = DEFAULT_CODE) -> Frame:
    c = constellation or default_constellation(cfg)
    n_info, n_coded = frame_lengths(cfg, n_sym, c, code)
    g = rng.generator
    info = g.integers(0, 2, n_info, dtype=np.int8)
    seed = int(g.integers(0, 2**63 - 1))
    coded = conv_encode(info, code)
    inter = gather(coded, permutations(n_coded, seed))
    return Frame(info, coded, inter, map_frame(inter, cfg, c), seed)


def iterate_receiver(ys, est: ChannelEstimate, kind: DecodingMetricKind, cfg: SystemConfig,
                     n_iters: int = DEFAULT_ITERS, permutation_seed=None, constellation: Constellation | None = None,
                     code: ConvCode = DEFAULT_CODE, perm=None, return_llr: bool = False):
    """Iterative BICM receiver; returns hard decisions on the info bits.

    ``ys`` is (..., n_sym, m_r) with one channel estimate per leading index.
    The permutation is given either by seed(s) or directly as ``perm``.
    Decoder priors start uniform; each pass runs the demapper with the
    interleaved decoder extrinsics as priors, then the decoder on the
    deinterleaved demapper extrinsics.
    """
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    c = constellation or default_constellation(cfg)
    ys = np.asarray(ys, dtype=complex)
    nb = cfg.m_t * c.bits_per_symbol
    n_coded = ys.shape[-2] * nb
    if perm is None:
        if permutation_seed is None:
            raise ValueError("need a permutation seed or permutation")
        perm = permutations(n_coded, permutation_seed)
    if perm.shape[-1] != n_coded:
        raise DimensionError(f"permutation length {perm.shape[-1]} != {n_coded} coded bits")

    costs = symbol_costs(ys, kind, est, cfg, c)
    batch = ys.shape[:-2]
    prior = np.zeros((*batch, n_coded))
    for _ in range(n_iters):
        ext = demap_soft(ys, prior.reshape(*batch, -1, nb), kind, est, cfg, c, costs=costs)
        dec_in = scatter(ext.reshape(*batch, n_coded), perm)
        dec_ext, info_llr = siso_decode(dec_in, code)
        prior = gather(dec_ext, perm)
    decided = (info_llr > 0).astype(np.int8)
    return (decided, info_llr) if return_llr else decided


@dataclass(frozen=True)
class BerPoint:
    ebn0_db: float
    n_bits: int
    n_errors: int
    n_frames: int
    ber: float
    ci_low: float
    ci_high: float
    metric: str
    n_pilots: int
    seed: int


def wilson_interval(n_errors: int, n_bits: int) -> tuple[float, float]:
    ci = binomtest(int(n_errors), int(n_bits)).proportion_ci(confidence_level=0.95, method="wilson")
    return float(ci.low), float(ci.high)


def _frame_batch(cfg: SystemConfig, streams, n_sym, c, code):
    """Frames, channels, estimates and observations for one batch of frame streams.

    Every frame draws, in order: info bits, interleaver seed, H, estimation
    error, noise. The draw sequence does not depend on the metric or the
    training length, so those comparisons share channel and noise samples.
    """
    frames, hs, hhats, ys = [], [], [], []
    for s in streams:
        f = make_frame(cfg, s, n_sym, c, code)
        h = sample_cgn(np.zeros((cfg.m_r, cfg.m_t)), cfg.sigma_h_sq, s)
        h_hat = sample_cgn(h, cfg.sigma_eps_sq, s)
        y = apply_channel(h, f.symbols, cfg, s)
        frames.append(f)
        hs.append(h)
        hhats.append(h_hat)
        ys.append(y)
    est = ChannelEstimate(np.stack(hhats), cfg.sigma_eps_sq, cfg.delta)
    return frames, ChannelRealization(np.stack(hs)), est, np.stack(ys)


def batch_size_for(cfg: SystemConfig, n_sym: int = N_SYMBOLS, constellation: Constellation | None = None) -> int:
    c = constellation or default_constellation(cfg)
    n_cand = 1 << (c.bits_per_symbol * cfg.m_t)
    return max(1, _BATCH_BUDGET // (n_sym * n_cand))


def frame_errors(cfg: SystemConfig, kind: DecodingMetricKind, rng: RngStream, n_frames: int,
                 n_iters: int = DEFAULT_ITERS, n_sym: int = N_SYMBOLS, constellation: Constellation | None = None,
                 code: ConvCode = DEFAULT_CODE, perfect_csi: bool = False, start: int = 0) -> np.ndarray:
    """Info-bit errors of frames ``start .. start + n_frames - 1``; frame i uses ``rng.child(i)``.

    ``perfect_csi`` hands the receiver the true channel with zero error variance.
    """
    kind = DecodingMetricKind.parse(kind)
    c = constellation or default_constellation(cfg)
    bs = batch_size_for(cfg, n_sym, c)
    out = []
    for lo in range(start, start + n_frames, bs):
        idx = range(lo, min(lo + bs, start + n_frames))
        frames, h, est, ys = _frame_batch(cfg, [rng.child(i) for i in idx], n_sym, c, code)
        if perfect_csi:
            est = ChannelEstimate.perfect(h)
        perm = np.stack([permutations(f.coded_bits.size, f.permutation_seed) for f in frames])
        decided = iterate_receiver(ys, est, kind, cfg, n_iters, constellation=c, code=code, perm=perm)
        info = np.stack([f.info_bits for f in frames])
        out.append(np.count_nonzero(decided != info, axis=-1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def simulate_ber_point(cfg: SystemConfig, kind: DecodingMetricKind, rng: RngStream, n_frames: int,
                       n_iters: int = DEFAULT_ITERS, min_errors: int | None = None, n_sym: int = N_SYMBOLS,
                       constellation: Constellation | None = None, code: ConvCode = DEFAULT_CODE,
                       ebn0_db: float = float("nan"), perfect_csi: bool = False) -> BerPoint:
    """BER at one noise level. Frame i uses ``rng.child(i)``.

    With ``min_errors`` the run stops at the first batch boundary where that
    many bit errors have been seen; ``n_frames`` is then an upper bound.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    kind = DecodingMetricKind.parse(kind)
    c = constellation or default_constellation(cfg)
    n_info, _ = frame_lengths(cfg, n_sym, c, code)
    bs = batch_size_for(cfg, n_sym, c)
    n_err = done = 0
    while done < n_frames:
        k = min(bs, n_frames - done)
        n_err += int(frame_errors(cfg, kind, rng, k, n_iters, n_sym, c, code, perfect_csi, start=done).sum())
        done += k
        if min_errors is not None and n_err >= min_errors:
            break
    n_bits = done * n_info
    lo, hi = wilson_interval(n_err, n_bits)
    log.info("Eb/N0 %.2f dB %s N=%d: %d errors / %d bits (%d frames)", ebn0_db, kind.value, cfg.n_pilots,
             n_err, n_bits, done)
    return BerPoint(ebn0_db, n_bits, n_err, done, n_err / n_bits, lo, hi, kind.value, cfg.n_pilots, rng.seed)


def simulate_ber(cfg: SystemConfig, kind: DecodingMetricKind, ebn0_grid, n_frames: int, n_iters: int,
                 rng: RngStream, min_errors: int | None = None, **kwargs) -> list[BerPoint]:
    """BER curve over an Eb/N0 grid (dB).

    ``cfg`` fixes antennas, fading variance, power and training length; the
    noise variance is set per point from Eb/N0 = SNR / (R_c b m_t). Point i
    uses ``rng.child(i)`` so curves for different metrics or training lengths
    see the same frames and channels.
    """
    c = kwargs.get("constellation") or default_constellation(cfg)
    out = []
    for i, ebn0 in enumerate(ebn0_grid):
        pcfg = SystemConfig.for_ebn0(cfg.m_t, cfg.m_r, ebn0, cfg.n_pilots, cfg.p_bar, cfg.sigma_h_sq, cfg.p_t,
                                     bits_per_symbol=c.bits_per_symbol)
        out.append(simulate_ber_point(pcfg, kind, rng.child(i), n_frames, n_iters, min_errors,
                                      ebn0_db=float(ebn0), **kwargs))
    return out


def ebn0_at_ber(points: list[BerPoint], target: float) -> float:
    """Eb/N0 where the curve crosses ``target``, interpolating log10(BER) linearly in dB.

    Returns nan when the measured points do not bracket the target.
    """
    pts = sorted(points, key=lambda p: p.ebn0_db)
    for a, b in zip(pts, pts[1:]):
        if a.ber >= target >= b.ber and a.ber > 0:
            if b.ber <= 0:
                return b.ebn0_db
            la, lb, lt = np.log10(a.ber), np.log10(b.ber), np.log10(target)
            if la == lb:
                return a.ebn0_db
            return a.ebn0_db + (la - lt) / (la - lb) * (b.ebn0_db - a.ebn0_db)
    return float("nan")


def noiseless(cfg: SystemConfig) -> SystemConfig:
    """Zero-noise, perfect-training variant of ``cfg``; bypasses validation (test builds)."""
    return SystemConfig.unchecked(**{**cfg.__dict__, "sigma_z_sq": 0.0})
