"""Acceptance checks, one test per criterion.

Each test prints a single ``[criterion k] PASS|FAIL: ...`` line to the
terminal and then asserts. Criteria that need figure-scale Monte Carlo use
the same recipes and random streams as the ``mimocee`` command line.

The full-fidelity BER check (BER 1e-3, 10^4 frames per point) takes hours
and runs only with ``MIMOCEE_FULL_BER=1``; the reduced BER 1e-2 variant
always runs.
"""
import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from mimocee import cli, rates
from mimocee.bicm.code import DEFAULT_CODE, siso_decode
from mimocee.bicm.mapping import default_constellation, demap_soft, llr_to_prob, prob_to_llr
from mimocee.bicm.receiver import _frame_batch, batch_size_for, ebn0_at_ber, iterate_receiver, simulate_ber
from mimocee.bicm.interleave import permutations
from mimocee.channel import ChannelEstimate, SystemConfig, apply_channel, estimate_channel, sample_channel
from mimocee.numerics import RngStream
from oracles import brute_force_map, clamp_prob, expit, literal_demapper

TESTS = Path(__file__).parent


@pytest.fixture
def report(capsys):
    def emit(k, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {k}] {'PASS' if ok else 'FAIL'}: {detail}")
        return ok
    return emit


# ---- 1: metric limit -----------------------------------------------------------------------

def test_criterion_1_metrics_identical_without_estimation_error(report):
    cfg = SystemConfig.for_ebn0(2, 2, 6.0, 2)
    c = default_constellation(cfg)
    rng = RngStream(101)
    n_frames, bs = 10 ** 4, batch_size_for(cfg)
    differing = n_err = 0
    for lo in range(0, n_frames, bs):
        idx = range(lo, min(lo + bs, n_frames))
        frames, h, _, ys = _frame_batch(cfg, [rng.child(i) for i in idx], 100, c, DEFAULT_CODE)
        est = ChannelEstimate.perfect(h)
        perm = np.stack([permutations(f.coded_bits.size, f.permutation_seed) for f in frames])
        a = iterate_receiver(ys, est, "mismatched", cfg, 4, constellation=c, perm=perm)
        b = iterate_receiver(ys, est, "improved", cfg, 4, constellation=c, perm=perm)
        differing += int(np.count_nonzero(a != b))
        n_err += int(np.count_nonzero(a != np.stack([f.info_bits for f in frames])))
    ok = report(1, differing == 0, f"{differing} differing decisions over {n_frames} frames "
                                   f"({n_err} bit errors, so the comparison is not vacuous)")
    assert ok and n_err > 0


# ---- 2: demapper oracle ----------------------------------------------------------------------

def test_criterion_2_demapper_matches_literal_summation(report):
    g = np.random.default_rng(102)
    worst = 0.0
    n = 10 ** 3
    for i in range(n):
        cfg = SystemConfig.for_snr(2, 2, g.uniform(0, 20), int(g.integers(2, 9)))
        c = default_constellation(cfg)
        s = RngStream(102, i)
        h = sample_channel(cfg, s)
        est = estimate_channel(h, cfg, s)
        y = apply_channel(h, c.points[g.integers(0, 16, 2)], cfg, s)
        p1 = g.uniform(0.02, 0.98, 8)
        kind = ("mismatched", "improved")[i % 2]
        got = llr_to_prob(demap_soft(y[None, :], prob_to_llr(p1)[None, :], kind, est, cfg)[0])
        ref = clamp_prob(literal_demapper(y, p1, kind, est, cfg, c.points, 4))
        worst = max(worst, float(np.max(np.abs(got - ref))))
    ok = report(2, worst <= 1e-12, f"max |P_impl - P_literal| = {worst:.2e} over {n} instances (tol 1e-12)")
    assert ok


# ---- 3: BCJR oracle ------------------------------------------------------------------------------

def test_criterion_3_decoder_matches_brute_force_map(report):
    g = np.random.default_rng(103)
    worst = 0.0
    for _ in range(10 ** 3):
        llr = g.normal(0, g.uniform(0.2, 6), 2 * 10)
        ext, info = siso_decode(llr)
        p_info, _, ext_ref = brute_force_map(llr, 8)
        worst = max(worst, float(np.max(np.abs(expit(info) - p_info))),
                    float(np.max(np.abs(expit(ext) - clamp_prob(expit(ext_ref))))))
    ok = report(3, worst <= 1e-9, f"max probability deviation {worst:.2e} over 1000 inputs (tol 1e-9)")
    assert ok


# ---- 4: ratio expectation ------------------------------------------------------------------------------------

def test_criterion_4_ratio_expectation_against_monte_carlo(report):
    g = np.random.default_rng(104)
    n = 10 ** 6
    zs = []
    for _ in range(20):
        m_t = int(g.integers(2, 5))
        m_r = int(g.integers(1, 5))
        a = (g.standard_normal((m_r, m_t)) + 1j * g.standard_normal((m_r, m_t))) * g.uniform(0.2, 2)
        k1, k2, p = g.uniform(0.05, 3), g.uniform(0.05, 3), g.uniform(0.2, 5)
        x = (g.standard_normal((n, m_t)) + 1j * g.standard_normal((n, m_t))) * math.sqrt(p / 2)  # X ~ CN(0, p I)
        v = (np.sum(np.abs(x @ a.T) ** 2, 1) + k1) / (np.sum(np.abs(x) ** 2, 1) + k2)
        se = v.std(ddof=1) / math.sqrt(n)
        zs.append(abs(rates.lemma1_expectation(a, k1, k2, p, m_t) - v.mean()) / se)
    ok = report(4, max(zs) < 3, f"largest deviation {max(zs):.2f} standard errors over 20 tuples (limit 3)")
    assert ok


# ---- 5: worst-case optimization ----------------------------------------------------------------

def test_criterion_5_closed_form_is_constrained_minimum(report):
    g = np.random.default_rng(105)
    n = 10 ** 3
    gaps, lit_viol, lit_n = [], 0, 100
    for i in range(n):
        cfg = SystemConfig.for_snr(2, 2, g.uniform(0, 25), 2)
        s = RngStream(105, i)
        h = sample_channel(cfg, s)
        est = estimate_channel(h, cfg, s)
        c = rates.test_channel_constants(h, est, cfg)
        closed = rates.mu_opt_improved(c, fallback=False).rate_bits
        _, num = rates.minimize_test_channel(c, "improved", orientation="derived")
        gaps.append(closed - num)
        if i < lit_n:
            _, num_lit = rates.minimize_test_channel(c, "improved", orientation="literal")
            lit_viol += closed - num_lit > rates.WORST_CASE_TOL
    gaps = np.array(gaps)
    viol = int(np.count_nonzero(gaps > rates.WORST_CASE_TOL))
    ok = report(5, viol == 0,
                f"numeric minimizer beats the closed form by >1e-6 bits in {viol}/{n} pairs "
                f"(median {np.median(gaps):.3g}, max {gaps.max():.3g} bits); with the ball-shaped constraint "
                f"set: {lit_viol}/{lit_n}")
    assert ok


# ---- 6 and 8: rate curves ----------------------------------------------------------------------

def recipe_points(name):
    cfg = cli.RECIPES[name]
    n = cfg.n_pilots[0]
    return [rates.rate_curve_point(SystemConfig.for_snr(cfg.m_t, cfg.m_r, snr, n, cfg.p_bar, cfg.sigma_h_sq),
                                   cfg.gamma, cfg.n_mc, cfg.n_est, RngStream(cfg.seed).child(i), cfg.metrics)
            for i, snr in enumerate(cfg.grid_db)]


@pytest.fixture(scope="module")
def fig2():
    return recipe_points("fig2_rates_2x2")


@pytest.fixture(scope="module")
def fig3():
    return recipe_points("fig3_rates_4x4")


def db_gap_at(points, upper, lower, target, idx=None):
    """SNR(lower reaches target) - SNR(upper reaches target); idx resamples the estimates."""
    snrs = [p.snr_db for p in points]

    def curve(k):
        return [float(np.mean(p.per_estimate[k] if idx is None else p.per_estimate[k][idx])) for p in points]
    return rates.snr_at_rate(snrs, curve(lower), target) - rates.snr_at_rate(snrs, curve(upper), target)


def bootstrap_se(points, upper, lower, target, n_boot=400, seed=0):
    g = np.random.default_rng(seed)
    n = points[0].n_est
    vals = [db_gap_at(points, upper, lower, target, g.integers(0, n, n)) for _ in range(n_boot)]
    return float(np.nanstd(vals, ddof=1))


def test_criterion_6_rate_ordering_and_recovered_gap(fig2, report):
    bad = []
    for p in fig2:
        for upper, lower in (("improved", "mismatched"), ("eio", "improved")):
            d, se = p.paired_gap(upper, lower)
            if d < -2 * se:
                bad.append(f"{upper}<{lower}@{p.snr_db:g}dB")
        se = math.hypot(p.se("eio"), p.ergodic_se)
        if p.ergodic - p.mean("eio") < -2 * se:
            bad.append(f"ergodic<eio@{p.snr_db:g}dB")
    ordered = not bad
    target = 6.0
    gap_eio = db_gap_at(fig2, "eio", "mismatched", target)
    recovered = db_gap_at(fig2, "improved", "mismatched", target)
    quantitative = abs(recovered - 1.5) <= 1.0
    report(6, ordered and quantitative,
           f"ordering {'holds' if ordered else 'violated: ' + ', '.join(bad)} at all {len(fig2)} SNR points; "
           f"at {target:g} bits the mismatched-to-EIO gap is {gap_eio:.2f} dB and the improved metric "
           f"recovers {recovered:.2f} dB (target 1.5 +/- 1 dB)")
    assert ordered, bad
    assert quantitative, f"recovered {recovered:.2f} dB"


def test_criterion_8_gap_shrinks_for_four_antennas(fig2, fig3, report):
    """Horizontal gap between the mismatched and improved curves, 2x2 at 6 bits and 4x4 at 12 bits."""
    g2 = db_gap_at(fig2, "improved", "mismatched", 6.0)
    g4 = db_gap_at(fig3, "improved", "mismatched", 12.0)
    se = math.hypot(bootstrap_se(fig2, "improved", "mismatched", 6.0),
                    bootstrap_se(fig3, "improved", "mismatched", 12.0, seed=1))
    ok = report(8, g4 + 2 * se < g2, f"gap 4x4/N=4 {g4:.3f} dB vs 2x2/N=2 {g2:.3f} dB "
                                     f"(difference {g2 - g4:.3f} dB, 2 SE = {2 * se:.3f} dB)")
    assert ok


# ---- 7: BER gain -------------------------------------------------------------------------------------

def ber_gain(n_pilots, grid, n_frames, target, seed):
    base = SystemConfig.for_ebn0(2, 2, 10.0, n_pilots)
    rng = RngStream(seed)
    curves = {k: simulate_ber(base, k, grid, n_frames, 4, rng) for k in ("mismatched", "improved")}
    out = {}
    for k, pts in curves.items():
        x = ebn0_at_ber(pts, target)
        bracket = [p for p in pts if p.ber >= target][-1:] + [p for p in pts if p.ber < target][:1]
        out[k] = (x, min((p.n_errors for p in bracket), default=0))
    return out["mismatched"][0] - out["improved"][0], min(v[1] for v in out.values())


def check_ber_gain(report, target, grid2, grid8, n_frames, label):
    g2, e2 = ber_gain(2, grid2, n_frames, target, 107)
    g8, e8 = ber_gain(8, grid8, n_frames, target, 107)
    enough = min(e2, e8) >= 100
    ok2 = abs(g2 - 2.0) <= 1.0
    ok8 = abs(g8) < 0.5
    report(7, enough and ok2 and ok8,
           f"{label}: gain at BER {target:g} is {g2:.2f} dB for N=2 (target 2 +/- 1) and {g8:.2f} dB for N=8 "
           f"(target < 0.5); fewest errors at a bracketing point {min(e2, e8)}")
    assert enough
    assert ok8, f"N=8 gain {g8:.2f} dB"
    assert ok2, f"N=2 gain {g2:.2f} dB"


def test_criterion_7_ber_gain_reduced(report):
    check_ber_gain(report, 1e-2, [6.0, 8.0, 10.0, 12.0, 14.0, 16.0], [4.0, 6.0, 8.0, 10.0, 12.0], 2000,
                   "reduced (BER 1e-2, 2000 frames/point)")


@pytest.mark.skipif(os.environ.get("MIMOCEE_FULL_BER") != "1", reason="hours of runtime; set MIMOCEE_FULL_BER=1")
def test_criterion_7_ber_gain_full(report):
    check_ber_gain(report, 1e-3, list(cli.RECIPES["fig1_ber_2x2"].grid_db), list(cli.RECIPES["fig1_ber_2x2"].grid_db),
                   cli.RECIPES["fig1_ber_2x2"].n_frames, "full (BER 1e-3, 10^4 frames/point)")


# ---- 9: invariant suites -------------------------------------------------------------------------

def test_criterion_9_invariant_suites(report):
    files = ["test_numerics.py", "test_channel.py", "test_metrics.py", "test_bicm.py", "test_rates.py", "test_cli.py"]
    r = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *files],
                       cwd=TESTS, capture_output=True, text=True)
    failed = [ln.split(" ")[1] for ln in r.stdout.splitlines() if ln.startswith("FAILED")]
    tail = r.stdout.strip().splitlines()[-1] if r.stdout.strip() else r.stderr.strip()[-200:]
    ok = report(9, r.returncode == 0, f"{tail}" + (f"; failing: {', '.join(failed)}" if failed else ""))
    assert ok
