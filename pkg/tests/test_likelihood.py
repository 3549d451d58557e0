import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blindpty.forward import NoiseSpec, forward_intensity, sample_positions, simulate_measurements
from blindpty.likelihood import (
    LikelihoodSpec,
    PtychoModel,
    fd_check,
    grad_nll_r,
    grad_nll_x,
    nll,
    nll_gaussian,
    nll_poisson,
)
from blindpty.optics import ApertureSpec, Probe, beamstop_mask, make_probe
from blindpty.phantom import generate_phantom, transmission_from_profile

import oracles


def _tiny():
    rng = np.random.default_rng(11)
    H, P = 4, 8
    x = np.exp(1j * rng.uniform(-1, 1, (H, H))) * rng.uniform(0.5, 1, (H, H))
    probe = rng.standard_normal((P, P)) + 1j * rng.standard_normal((P, P))
    r = np.array([[0.4, 2.6], [3.5, 1.0], [-1.2, 4.49]])
    y = np.abs(rng.standard_normal((3, P, P))) * 3
    return x, Probe(probe), r, y


# frozen from tests/oracles.py (dense DFT matrices, explicit window loops)
ORACLE_NLL_GAUSS = 6875.825723076607
ORACLE_NLL_POISSON = 272.25350543730156


def test_tiny_problem_matches_frozen_oracle():
    x, p, r, y = _tiny()
    assert nll_gaussian(y, x, r, LikelihoodSpec(sigma_eps=0.3), p) == pytest.approx(ORACLE_NLL_GAUSS, rel=1e-12)
    assert nll_poisson(y, x, r, LikelihoodSpec("poisson_approx"), p) == pytest.approx(ORACLE_NLL_POISSON, rel=1e-12)


def test_random_problem_matches_live_oracle():
    rng = np.random.default_rng(3)
    x = transmission_from_profile(generate_phantom(8, "full", 2))
    p = make_probe(ApertureSpec(16, 0.5, mask_block=2, seed=4))
    r = sample_positions(4, 8, 9)
    y = forward_intensity(r, x, p) + 0.05 * rng.standard_normal((4, 16, 16))
    mask = beamstop_mask(0.25, 16)
    spec = LikelihoodSpec(sigma_eps=0.05, detector_mask=mask)
    assert nll(y, x, r, spec, p) == pytest.approx(oracles.nll_gaussian(y, x, r, p.field, 0.05, mask), rel=1e-10)


@pytest.fixture(scope="module")
def problem():
    H = 16
    x = transmission_from_profile(generate_phantom(H, "full", 1))
    p = make_probe(ApertureSpec(2 * H, 0.5, mask_block=2, seed=0))
    r = sample_positions(6, H, 3)
    meas = simulate_measurements(x, p, r, NoiseSpec("gaussian", 0.05), seed=2)
    return H, x, p, r, meas


def test_exact_fit_is_zero(problem):
    H, x, p, r, _ = problem
    y = forward_intensity(r, x, p)
    spec = LikelihoodSpec(sigma_eps=0.1)
    assert nll(y, x, r, spec, p) < 1e-20
    assert np.max(np.abs(grad_nll_x(y, x, r, spec, p))) < 1e-12


def test_single_pixel_value():
    # one pattern, residual 1 at one pixel, sigma = 1 -> 1/2
    p = Probe(np.zeros((4, 4), complex))
    y = np.zeros((1, 4, 4))
    y[0, 1, 2] = 1.0
    assert nll(y, np.ones((2, 2), complex), np.zeros((1, 2)), LikelihoodSpec(sigma_eps=1.0), p) == pytest.approx(0.5)


def test_masked_pixels_ignored(problem):
    H, x, p, r, meas = problem
    mask = beamstop_mask(0.25, 2 * H)
    spec = LikelihoodSpec(sigma_eps=0.05, detector_mask=mask)
    y2 = meas.patterns.copy()
    y2[:, ~mask] += 1000.0
    assert nll(y2, x, r, spec, p) == pytest.approx(nll(meas.patterns, x, r, spec, p), rel=1e-13)
    g1 = grad_nll_x(meas.patterns, x, r, spec, p)
    g2 = grad_nll_x(y2, x, r, spec, p)
    np.testing.assert_allclose(g1, g2, atol=1e-9)


def test_poisson_weight_floor():
    spec = LikelihoodSpec("poisson_approx")
    w = spec.weights(np.array([0.0, 0.5, 1.0, 4.0]))
    np.testing.assert_allclose(w, [0.5, 0.5, 0.5, 0.125])
    with pytest.raises(ValueError):
        spec.weights(np.array([-1.0]))


def test_spec_validation():
    with pytest.raises(ValueError):
        LikelihoodSpec("gaussian")
    with pytest.raises(ValueError):
        LikelihoodSpec("gaussian", sigma_eps=0.0)
    with pytest.raises(ValueError):
        LikelihoodSpec("laplace", sigma_eps=1.0)
    with pytest.raises(ValueError):
        nll_poisson(np.zeros((1, 4, 4)), np.ones((2, 2)), np.zeros((1, 2)), LikelihoodSpec(sigma_eps=1.0),
                    Probe(np.ones((4, 4), complex)))


@pytest.mark.parametrize("kind", ["gaussian", "poisson_approx"])
def test_grad_x_finite_differences(problem, kind):
    H, x, p, r, meas = problem
    y = np.abs(meas.patterns) * 50 if kind == "poisson_approx" else meas.patterns
    spec = LikelihoodSpec(kind, sigma_eps=0.05 if kind == "gaussian" else None)
    g = grad_nll_x(y, x, r, spec, p)
    err = fd_check(lambda z: nll(y, z, r, spec, p), x, g, step=1e-6)
    assert err < 1e-4


def test_grad_r_finite_differences(problem):
    H, x, p, r, meas = problem
    spec = LikelihoodSpec(sigma_eps=0.05)
    rf = r + 0.3
    g = grad_nll_r(meas, x, rf, spec, p)
    err = fd_check(lambda q: nll(meas, x, q, spec, p, rounding=False), rf, g, step=1e-5)
    assert err < 1e-4


def test_straight_through_is_continuous_at_rounded(problem):
    H, x, p, r, meas = problem
    spec = LikelihoodSpec(sigma_eps=0.05)
    st_grad = grad_nll_r(meas, x, r, spec, p, mode="straight_through")
    cont = grad_nll_r(meas, x, np.floor(r + 0.5), spec, p, mode="continuous")
    np.testing.assert_allclose(st_grad, cont, rtol=1e-9, atol=1e-9)
    with pytest.raises(ValueError):
        grad_nll_r(meas, x, r, spec, p, mode="bogus")


def test_single_precision_close(problem):
    H, x, p, r, meas = problem
    spec = LikelihoodSpec(sigma_eps=0.05)
    d = PtychoModel(p, meas, spec, H).evaluate(x, r, grad_r=True)
    s = PtychoModel(p, meas, spec, H, precision="single").evaluate(x, r, grad_r=True)
    assert s[0] == pytest.approx(d[0], rel=1e-4)
    assert np.linalg.norm(s[1] - d[1]) / np.linalg.norm(d[1]) < 1e-4


def test_per_pattern_sums(problem):
    H, x, p, r, meas = problem
    m = PtychoModel(p, meas, LikelihoodSpec(sigma_eps=0.05), H)
    per = m.evaluate(x, r, grad_x=False, per_pattern=True)[0]
    assert per.shape == (6,)
    assert per.sum() == pytest.approx(m.evaluate(x, r, grad_x=False)[0], rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_grad_x_random_points(seed):
    rng = np.random.default_rng(seed)
    H, P = 6, 12
    x = rng.standard_normal((H, H)) + 1j * rng.standard_normal((H, H))
    p = Probe(rng.standard_normal((P, P)) + 1j * rng.standard_normal((P, P)))
    r = rng.uniform(-3, H + 3, (3, 2))
    y = np.abs(rng.standard_normal((3, P, P))) * 10
    for spec in (LikelihoodSpec(sigma_eps=0.7), LikelihoodSpec("poisson_approx")):
        g = grad_nll_x(y, x, r, spec, p)
        assert fd_check(lambda z: nll(y, z, r, spec, p), x, g, step=1e-6, n_random=3, seed=seed) < 1e-4
