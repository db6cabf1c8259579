from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tvarcp.harness import get_model
from tvarcp.kink import (KinkChain, KinkParams, chain_basis_size, eval_kink_chain_curves,
                         eval_kink_curves, kink_to_thetas, lagrange_grid, thetas_to_kink)
from tvarcp.tvar import (JUMP, KINK, PiecewiseTvarSpec, PolyCurve, SegmentParams, SpecError,
                         check_stability, dump_spec, eval_poly, load_spec, simulate,
                         tv_spectral_density)


# -- eval_poly ---------------------------------------------------------------------------------

def test_eval_poly_model1_curve():
    assert eval_poly(PolyCurve((0.9, -0.4)), 0.5) == pytest.approx(0.7, abs=1e-15)


def test_eval_poly_constant():
    for u in (0.0, 0.3, 1.0):
        assert eval_poly(PolyCurve((2.5,)), u) == 2.5


def test_eval_poly_quadratic_at_one():
    assert eval_poly(PolyCurve((1, 1, 1)), 1.0) == 3.0


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=5), st.floats(0, 1))
def test_eval_poly_matches_naive_sum(coeffs, u):
    naive = sum(c * u ** j for j, c in enumerate(coeffs))
    assert eval_poly(PolyCurve(tuple(coeffs)), u) == pytest.approx(naive, abs=1e-12)


# -- kink curves -------------------------------------------------------------------------------

def test_kink_curves_at_r_are_anchor_values():
    eta = KinkParams([0.3, -0.1], 1.2, [[1.0, 2.0], [0.5, 0.1]], [0.3, 0.2],
                     [[-1.0, 0.4], [0.2, 0.0]], [0.1, -0.2], 0.4)
    phi, sigma = eval_kink_curves(eta, 0.4)
    np.testing.assert_array_equal(phi[:, 0], [0.3, -0.1])
    assert sigma[0] == 1.2


def test_kink_curves_zero_slopes_are_constant():
    eta = KinkParams([0.5], 0.8, [[0.0]], [0.0], [[0.0]], [0.0], 0.3)
    phi, sigma = eval_kink_curves(eta, np.linspace(0, 1, 11))
    np.testing.assert_array_equal(phi, 0.5)
    np.testing.assert_array_equal(sigma, 0.8)


def test_kink_curves_model2_left_branch():
    eta = KinkParams([0.75], 1.0, [[3.0]], [0.0], [[-3.0]], [0.0], 0.5)
    phi, _ = eval_kink_curves(eta, 0.25)
    assert phi[0, 0] == pytest.approx(0.0, abs=1e-15)


def test_kink_curves_reject_nonpositive_sigma():
    eta = KinkParams([0.1], 0.1, [[0.0]], [1.0], [[0.0]], [0.0], 0.5)
    with pytest.raises(SpecError):
        eval_kink_curves(eta, 0.0)


def test_mixed_orders_use_one_side_above_smaller_order():
    eta = KinkParams([0.2], 1.0, [[0.5], [0.7]], [0.0], [[0.1]], [0.0], 0.5)
    phi, _ = eval_kink_curves(eta, np.array([0.25, 0.75]))
    assert phi.shape == (2, 2)
    assert phi[1, 0] == pytest.approx(0.7 * -0.25)
    assert phi[1, 1] == 0.0


def _chain(T=200, taus=(60, 130), qs=(1, 1, 2), seed=0):
    rng = np.random.default_rng(seed)
    nb = chain_basis_size(qs)
    phi = rng.normal(scale=0.2, size=(2, nb))
    sig = np.concatenate([[1.0, 1.1], rng.normal(scale=0.05, size=nb - 2)])
    return KinkChain(T, 0, taus, T, qs, phi, sig)


def test_chain_continuous_at_interior_kinks():
    ch = _chain()
    for tau in ch.taus:
        eps = 1e-9
        lp, ls = eval_kink_chain_curves(ch, tau / ch.T)
        rp, rs = ch.curves_at_t(np.array([tau + eps]))
        np.testing.assert_allclose(lp[:, 0], rp[:, 0], atol=1e-7)
        assert abs(ls[0] - rs[0]) < 1e-7


def test_chain_continuity_exact_limits():
    # linear pieces: evaluate the two one-sided polynomials at the boundary
    ch = _chain(qs=(1, 1, 1))
    segs = ch.segment_params()
    for k, tau in enumerate(ch.taus):
        u = tau / ch.T
        np.testing.assert_allclose(segs[k].phi_at(u), segs[k + 1].phi_at(u), atol=1e-12)
        assert abs(segs[k].sigma_at(u) - segs[k + 1].sigma_at(u)) < 1e-12


def test_chain_constant_when_slopes_zero_and_anchors_equal():
    qs = (1, 1, 1)
    nb = chain_basis_size(qs)
    phi = np.zeros((1, nb))
    phi[0, :2] = 0.4
    sig = np.zeros(nb)
    sig[:2] = 1.3
    ch = KinkChain(100, 0, (30, 70), 100, qs, phi, sig)
    p, s = ch.curves_at_t(np.arange(1, 101))
    np.testing.assert_allclose(p, 0.4, atol=1e-14)
    np.testing.assert_allclose(s, 1.3, atol=1e-14)


def test_chain_linear_interior_matches_direct_interpolation():
    # oracle: straight line between the two anchor values of the interior segment
    qs = (1, 1, 1)
    nb = chain_basis_size(qs)
    phi = np.zeros((1, nb))
    phi[0, 0], phi[0, 1] = 0.2, -0.5
    sig = np.zeros(nb)
    sig[:2] = 1.0
    ch = KinkChain(100, 0, (30, 70), 100, qs, phi, sig)
    t = np.arange(31, 71)
    expected = 0.2 + (-0.5 - 0.2) * (t - 30) / 40
    got, _ = ch.curves_at_t(t)
    np.testing.assert_allclose(got[0], expected, atol=1e-12)


def test_lagrange_grid_floor_formula_and_coincidence():
    np.testing.assert_array_equal(lagrange_grid(10, 17, 2), [10, 13, 17])
    with pytest.raises(SpecError):
        lagrange_grid(10, 11, 3)


def test_thetas_kink_roundtrip():
    left = SegmentParams([[0.1, 0.6]], [1.0, 0.2])
    r = 0.4
    # right segment continuous at r
    right = SegmentParams([[0.1 + 0.6 * r + 0.5 * r, -0.5]], [1.0 + 0.2 * r, 0.0])
    eta = thetas_to_kink(left, right, r)
    l2, r2 = kink_to_thetas(eta)
    np.testing.assert_allclose(l2.phi, left.phi, atol=1e-12)
    np.testing.assert_allclose(r2.phi, right.phi, atol=1e-12)
    np.testing.assert_allclose(r2.sigma, right.sigma, atol=1e-12)
    with pytest.raises(SpecError):
        thetas_to_kink(left, SegmentParams([[0.9, 0.0]], [1.0, 0.0]), r)


# -- spectral density --------------------------------------------------------------------------

def test_white_noise_density():
    seg = SegmentParams([[0.0]], [1.0])
    lam = np.linspace(-np.pi, np.pi, 9)
    np.testing.assert_allclose(tv_spectral_density(seg, 0.3, lam), 1 / (2 * np.pi))


def test_ar1_density_at_zero():
    seg = SegmentParams([[0.5]], [1.0])
    assert tv_spectral_density(seg, 0.5, 0.0) == pytest.approx(2 / np.pi, abs=1e-12)
    assert 2 / np.pi == pytest.approx(0.63662, abs=1e-5)


@given(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9), st.floats(0.1, 3), st.floats(0, np.pi))
def test_density_symmetric_and_positive(a, b, s, lam):
    seg = SegmentParams([[a * 0.5, 0.0], [b * 0.4, 0.0]], [s, 0.0])
    f = tv_spectral_density(seg, 0.5, np.array([lam, -lam]))
    assert f[0] > 0
    assert f[0] == pytest.approx(f[1], rel=1e-12)


def test_density_unit_root_rejected():
    with pytest.raises(SpecError):
        tv_spectral_density(SegmentParams([[1.0]], [1.0]), 0.5, 0.0)


# -- stability --------------------------------------------------------------------------------

def test_stability_examples():
    u = np.linspace(0, 1, 50)
    assert check_stability(SegmentParams([[0.5]], [1.0]), u, 0.1)
    assert not check_stability(SegmentParams([[1.0]], [1.0]), u, 0.1)
    assert check_stability(SegmentParams([[0.99, -1.98]], [1.0, 0.0]), np.arange(1, 2049) / 2048, 0.005)


def test_stability_margin_must_be_positive():
    with pytest.raises(ValueError):
        check_stability(SegmentParams([[0.5]], [1.0]), [0.5], 0.0)


# -- specs and simulation ------------------------------------------------------------------------

def test_simulate_white_noise_moments():
    spec = PiecewiseTvarSpec(100000, (), (), [SegmentParams([[0.0]], [1.0])])
    x = simulate(spec, 7)
    assert abs(x.mean()) < 0.02
    assert abs(x.var() - 1) < 0.02


def test_simulate_deterministic():
    spec = get_model(8).spec()
    np.testing.assert_array_equal(simulate(spec, 3), simulate(spec, 3))
    assert not np.array_equal(simulate(spec, 3), simulate(spec, 4))


def test_simulate_zero_init_option():
    spec = PiecewiseTvarSpec(50, (), (), [SegmentParams([[0.5]], [1.0])])
    x = simulate(spec, 1, burn_in=0)
    eps = np.random.default_rng(1).standard_normal(50)
    assert x[0] == eps[0]


def test_simulate_carries_lags_across_boundaries():
    segs = [SegmentParams([[0.0]], [1.0]), SegmentParams([[0.5]], [1.0])]
    spec = PiecewiseTvarSpec(20, (10,), (JUMP,), segs)
    x = simulate(spec, 2, burn_in=0)
    eps = np.random.default_rng(2).standard_normal(20)
    assert x[10] == pytest.approx(0.5 * x[9] + eps[10], abs=1e-15)


@pytest.mark.slow
def test_model8_lag1_autocorrelation_signs():
    spec = get_model(8).spec()
    hits = 0
    for seed in range(100):
        x = simulate(spec, seed)
        a, b = x[:800], x[899:1600]
        ra = np.corrcoef(a[1:], a[:-1])[0, 1]
        rb = np.corrcoef(b[1:], b[:-1])[0, 1]
        hits += ra > 0 and rb < 0
    assert hits >= 99


def test_spec_validation_errors():
    seg = SegmentParams([[0.5]], [1.0])
    with pytest.raises(SpecError):
        PiecewiseTvarSpec(100, (50, 40), (JUMP, JUMP), [seg] * 3)
    with pytest.raises(SpecError):
        PiecewiseTvarSpec(100, (50,), ("bump",), [seg] * 2)
    with pytest.raises(SpecError):
        PiecewiseTvarSpec(100, (), (), [SegmentParams([[1.2]], [1.0])])
    with pytest.raises(SpecError):
        PiecewiseTvarSpec(100, (), (), [SegmentParams([[0.2, 0.0]], [1.0, -2.0])])
    with pytest.raises(SpecError):
        PiecewiseTvarSpec(100, (10,), (JUMP,), [seg, seg], min_length=12)


def test_segment_params_degree_mismatch():
    with pytest.raises(SpecError):
        SegmentParams([[0.5, 0.1]], [1.0])


def test_spec_roundtrip_lossless():
    spec = get_model(6).spec()
    back = load_spec(dump_spec(spec))
    assert back.taus == spec.taus and back.types == spec.types
    for a, b in zip(spec.segments, back.segments):
        assert a == b
    odd = PiecewiseTvarSpec(300, (100,), (KINK,), [SegmentParams([[0.1 / 3, 0.2]], [1 / 7, 0.0]),
                                                   SegmentParams([[0.1 / 3 + 0.2 / 3, -0.1]], [1 / 7, 0.0])])
    back = load_spec(dump_spec(odd))
    assert back.segments == odd.segments


def test_load_spec_rejects_garbage():
    with pytest.raises(SpecError):
        load_spec("not a spec document")
