import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from mimocee.channel import ChannelEstimate, SystemConfig
from mimocee.errors import DimensionError
from mimocee.metrics import (DecodingMetricKind, letter_cost, metric_improved, metric_mismatched,
                             negative_log_likelihood, sequence_cost)
from oracles import composite_neg_log_density

finite = st.floats(-3, 3, allow_nan=False)


def cplx(shape):
    return st.tuples(arrays(float, shape, elements=finite), arrays(float, shape, elements=finite)).map(
        lambda t: t[0] + 1j * t[1])


def _est(h_hat, sigma_eps_sq=0.3, delta=0.8):
    return ChannelEstimate(np.asarray(h_hat, dtype=complex), sigma_eps_sq, delta)


CFG = SystemConfig(2, 2, 1.0, 0.5, n_pilots=2)


def test_mismatched_exact_match_is_zero():
    h = np.array([[1 + 1j, 2], [0, -1j]])
    x = np.array([1, 1j])
    assert metric_mismatched(x, h @ x, _est(h)) == pytest.approx(0, abs=1e-28)


def test_mismatched_quadratic_homogeneity(rng):
    h = rng.standard_normal((2, 2)) + 0j
    x = rng.standard_normal(2) + 0j
    r = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    c1 = metric_mismatched(x, h @ x + r, _est(h))
    c2 = metric_mismatched(x, h @ x + 2 * r, _est(h))
    assert c2 == pytest.approx(4 * c1, rel=1e-12)


def test_mismatched_scalar_substitution():
    assert metric_mismatched(np.array([1.0]), np.array([3.0]), _est([[1.0]])) == pytest.approx(4.0)


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        metric_mismatched(np.zeros(3), np.zeros(2), _est(np.eye(2)))


def test_improved_perfect_csi_limit(rng):
    h = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    x = np.array([1 - 1j, 0.5])
    y = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    est = _est(h, 0.0, 1.0)
    expected = 2 * math.log(CFG.sigma_z_sq) + np.sum(np.abs(y - h @ x) ** 2) / CFG.sigma_z_sq
    assert metric_improved(x, y, est, CFG) == pytest.approx(expected, rel=1e-13)


def test_improved_zero_input(rng):
    y = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    c = metric_improved(np.zeros(2), y, _est(np.eye(2)), CFG)
    assert c == pytest.approx(2 * math.log(CFG.sigma_z_sq) + np.sum(np.abs(y) ** 2) / CFG.sigma_z_sq)


def test_improved_equals_composite_density(rng):
    for _ in range(20):
        m_r, m_t = rng.integers(1, 4, size=2)
        cfg = SystemConfig(int(m_t), int(m_r), 1.0, rng.uniform(0.1, 2), n_pilots=int(m_t))
        h = rng.standard_normal((m_r, m_t)) + 1j * rng.standard_normal((m_r, m_t))
        est = _est(h, cfg.sigma_eps_sq, cfg.delta)
        x = rng.standard_normal(m_t) + 1j * rng.standard_normal(m_t)
        y = rng.standard_normal(m_r) + 1j * rng.standard_normal(m_r)
        ref = composite_neg_log_density(x, y, h, cfg.sigma_z_sq, est.sigma_eps_sq, est.delta) - m_r * math.log(math.pi)
        assert metric_improved(x, y, est, cfg) == pytest.approx(ref, rel=1e-10, abs=1e-10)


def test_metric_kind_parse():
    assert DecodingMetricKind.parse("ML") is DecodingMetricKind.MISMATCHED_ML
    assert DecodingMetricKind.parse("improved") is DecodingMetricKind.IMPROVED
    with pytest.raises(ValueError):
        DecodingMetricKind.parse("bogus")


# ---- sequence metric --------------------------------------------------------------

@pytest.mark.parametrize("kind", list(DecodingMetricKind))
def test_sequence_single_letter(kind, rng):
    est = _est(rng.standard_normal((2, 2)))
    x = rng.standard_normal((1, 2)) + 0j
    y = rng.standard_normal((1, 2)) + 0j
    assert sequence_cost(kind, x, y, est, CFG) == pytest.approx(float(letter_cost(kind, x[0], y[0], est, CFG)))


@pytest.mark.parametrize("kind", list(DecodingMetricKind))
def test_sequence_permutation_and_concatenation(kind, rng):
    est = _est(rng.standard_normal((2, 2)))
    xs = rng.standard_normal((7, 2)) + 1j * rng.standard_normal((7, 2))
    ys = rng.standard_normal((7, 2)) + 1j * rng.standard_normal((7, 2))
    p = rng.permutation(7)
    c = sequence_cost(kind, xs, ys, est, CFG)
    assert sequence_cost(kind, xs[p], ys[p], est, CFG) == pytest.approx(c, rel=1e-13)
    c1 = sequence_cost(kind, xs[:3], ys[:3], est, CFG)
    c2 = sequence_cost(kind, xs[3:], ys[3:], est, CFG)
    assert c == pytest.approx((3 * c1 + 4 * c2) / 7, rel=1e-13)


def test_sequence_length_mismatch():
    with pytest.raises(DimensionError):
        sequence_cost("ml", np.zeros((3, 2)), np.zeros((2, 2)), _est(np.eye(2)), CFG)


# ---- properties -------------------------------------------------------------------

@given(h=cplx((2, 2)), y=cplx((2,)), cands=cplx((6, 2)), sz=st.floats(0.01, 10))
def test_argmin_consistency_without_estimation_error(h, y, cands, sz):
    cfg = SystemConfig(2, 2, 1.0, sz, n_pilots=2)
    est = _est(h, 0.0, 1.0)
    a = [metric_mismatched(x, y, est) for x in cands]
    b = [metric_improved(x, y, est, cfg) for x in cands]
    # the improved winner is a mismatched winner; distinct costs closer than the rounding of the
    # constant log term can tie in floating point, so compare against that resolution
    tol = 8 * np.finfo(float).eps * (2 * abs(math.log(sz)) * sz + max(a))
    assert a[int(np.argmin(b))] - min(a) <= tol
    # exact affine relation, so the ranking is identical, not just the winner
    np.testing.assert_allclose(np.array(b), 2 * math.log(sz) + np.array(a) / sz, rtol=1e-12, atol=1e-12)


@given(h=cplx((2, 2)), y=cplx((2,)), x=cplx((2,)), seed=st.integers(0, 10 ** 6))
def test_improved_invariant_under_receive_rotation(h, y, x, seed):
    g = np.random.default_rng(seed)
    q, _ = np.linalg.qr(g.standard_normal((2, 2)) + 1j * g.standard_normal((2, 2)))
    a = metric_improved(x, y, _est(h), CFG)
    b = metric_improved(x, q @ y, _est(q @ h), CFG)
    assert b == pytest.approx(a, rel=1e-9, abs=1e-9)


@given(h=cplx((2, 2)), y=cplx((2,)), phases=arrays(float, (8, 2), elements=st.floats(0, 2 * math.pi)))
def test_constant_modulus_ranking(h, y, phases):
    cands = np.exp(1j * phases)
    est = _est(h)
    imp = np.array([metric_improved(x, y, est, CFG) for x in cands])
    dist = np.array([np.sum(np.abs(y - est.delta * est.h_hat @ x) ** 2) for x in cands])
    # both differ from dist by a candidate-independent affine map
    s = CFG.sigma_z_sq + est.delta * est.sigma_eps_sq * 2
    np.testing.assert_allclose(imp, 2 * math.log(s) + dist / s, rtol=1e-12, atol=1e-12)
    assert dist[int(np.argmin(imp))] - dist.min() <= 8 * np.finfo(float).eps * (2 * abs(math.log(s)) * s + dist.max())


@pytest.mark.parametrize("kind", list(DecodingMetricKind))
def test_batched_costs_match_letter_costs(kind, rng):
    h = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    est = _est(h)
    cands = rng.standard_normal((5, 2)) + 1j * rng.standard_normal((5, 2))
    ys = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))
    got = negative_log_likelihood(kind, cands, ys, est, CFG)
    for k in range(3):
        for c in range(5):
            ref = float(letter_cost(kind, cands[c], ys[k], est, CFG))
            if kind is DecodingMetricKind.MISMATCHED_ML:
                ref = ref / CFG.sigma_z_sq + 2 * math.log(CFG.sigma_z_sq)
            assert got[k, c] == pytest.approx(ref, rel=1e-10, abs=1e-10)
