import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from burgerslab.colehopf import (
    K_analytic,
    K_calibrate,
    K_unweighted_terms,
    Q_integrand,
    R_integrand,
    build_state,
    colehopf_extract,
    correction_Q,
    correction_R,
    exp_moment_check,
    she_initial,
    theta_variance,
)
from burgerslab.errors import ParameterError, PositivityError, RangeError
from burgerslab.spde import SPDEConfig, Trajectory, sample_noise, simulate, white_noise_ensemble
from burgerslab.torus_field import (
    Mollifier,
    SpectralField,
    derivative,
    grid_points,
    mollify,
    renorm_constant,
    sample_white_noise,
    translate,
)

TWO_PI = 2 * math.pi
RHO = Mollifier()


def noise(K, seed, size=None, mean_zero=True):
    return sample_white_noise(K, np.random.default_rng(seed), mean_zero=mean_zero, size=size)


# -- build_state -------------------------------------------------------------

def test_zero_field_state():
    s = build_state(SpectralField.zeros(8), 4.0)
    assert np.all(s.h.coeffs == 0)
    assert np.all(s.phi_grid == 1.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), L=st.sampled_from([2.0, 4.0, 8.0, 100.0]))
def test_derivative_of_h_is_mollified_field_minus_mean(seed, L):
    u = noise(16, seed, mean_zero=False)
    s = build_state(u, L)
    target = mollify(u, RHO.with_scale(L)).coeffs.copy()
    target[0] = 0.0
    np.testing.assert_allclose(derivative(s.h).coeffs, target, atol=1e-12)
    np.testing.assert_allclose(np.log(s.phi_grid), s.h.grid(len(s.phi_grid)), atol=1e-12)


def test_h_variance_matches_multiplier_sum():
    K, L, R = 32, 8.0, 20000
    u = noise(K, 1, size=R)
    h0 = np.array([build_state(u[i], L, K_const=0.0).h.evaluate(np.array([0.3]))[0] for i in range(R)])
    oracle = sum(RHO.profile(k / L) ** 2 / (TWO_PI * k) ** 2 for k in range(-K, K + 1) if k)
    assert theta_variance(K, L) == pytest.approx(oracle, rel=1e-12)
    assert abs(h0.var() - oracle) < 4 * oracle * math.sqrt(2 / R)


def test_state_overflow_is_range_error():
    u = SpectralField.from_modes({1: 5000.0}, 4)
    with pytest.raises(RangeError, match="max"):
        build_state(u, 100.0, K_const=0.0)


# -- R^L ---------------------------------------------------------------------

def _static_traj(coeffs, T=1.0, n=11):
    times = np.linspace(0, T, n)
    return Trajectory(times, np.broadcast_to(coeffs, (n,) + coeffs.shape).copy())


def test_R_on_zero_trajectory():
    K, Kc = 16, 0.37
    phi = SpectralField.from_modes({0: 2.0, 1: 0.5}, K)
    series = correction_R(_static_traj(np.zeros(K + 1, dtype=complex)), 4.0, phi, Kc)
    np.testing.assert_allclose(series.R, -Kc * series.times * 2.0, atol=1e-14)
    zero = correction_R(_static_traj(np.zeros(K + 1, dtype=complex)), 4.0, phi, 0.0)
    assert np.all(zero.R == 0) and zero.R[0] == 0


def test_R_rejects_scale_beyond_band():
    with pytest.raises(ParameterError):
        R_integrand(np.zeros((1, 9), dtype=complex), 16.0, SpectralField.constant(1.0, 8), 0.0)


def test_R_integrand_is_centred_under_white_noise():
    K, L, R = 32, 4.0, 6000
    kc = K_analytic(RHO, L, K)
    phi = SpectralField.from_modes({0: 1.0, 1: 0.5}, K)
    vals = R_integrand(noise(K, 2, size=R).coeffs, L, phi, kc)
    assert abs(vals.mean()) < 3.5 * vals.std() / math.sqrt(R)


# -- Q^L ---------------------------------------------------------------------

def test_Q_plug_in_unit_modes():
    K, L = 32, 8.0
    c = np.exp(1j * np.random.default_rng(3).uniform(0, TWO_PI, K + 1))
    c[0] = 1.0
    q = correction_Q(_static_traj(c), L, normalization="torus")
    np.testing.assert_allclose(q.Q, q.times, atol=1e-12)
    assert q.Q[0] == 0


def test_Q_stationary_mean_increment():
    K, L, R = 64, 8.0, 20000
    vals = Q_integrand(noise(K, 4, size=R, mean_zero=False).coeffs, L)
    consts = renorm_constant(RHO.with_scale(L), K)
    expected = consts.torus - consts.line + 1.0       # -(c_line - c_torus) + 1
    assert abs(vals.mean() - expected) < 3.5 * vals.std() / math.sqrt(R)
    mean_free = Q_integrand(noise(K, 4, size=R).coeffs, L)
    assert abs(mean_free.mean() - (expected + 1.0)) < 3.5 * mean_free.std() / math.sqrt(R)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), x=st.floats(0, 1))
def test_Q_translation_invariant(seed, x):
    u = noise(16, seed, mean_zero=False)
    a = Q_integrand(u.coeffs[None], 4.0)
    b = Q_integrand(translate(u, x).coeffs[None], 4.0)
    np.testing.assert_allclose(a, b, atol=1e-11)


def test_Q_quadratic_variation_vanishes_with_dt():
    K, dt, n = 16, 1e-4, 4000
    rngs = [np.random.default_rng([7, i]) for i in range(20)]
    u0 = white_noise_ensemble(K, rngs)
    traj = simulate(u0, SPDEConfig(K, dt, n * dt).stepper(), n, sample_noise(K, dt, n, rngs))
    Q = correction_Q(traj, 4.0).Q
    fine = np.sum(np.diff(Q, axis=0) ** 2, axis=0).mean()
    coarse = np.sum(np.diff(Q[::2], axis=0) ** 2, axis=0).mean()
    assert fine / coarse == pytest.approx(0.5, rel=0.1)


# -- centering constant -------------------------------------------------------

def test_unweighted_terms_cancel():
    for L in (2.0, 4.0, 8.0, 1e9):
        t1, t2, t3 = K_unweighted_terms(RHO, L, 16)
        assert t1 - t2 + t3 == 0.0
    assert K_unweighted_terms(RHO, 1e9, 16) == (0.0, 32.0, 32.0)


def test_K_analytic_band_covering_hand_check():
    # rho ≡ 1 on the band: v_k = -1/(2πik); K^L = Σ_{0<|k|<=K} (v v)_k - v(0)^2 + ||v||^2
    K = 8
    ks = range(-K, K + 1)
    v = {k: (0.0 if k == 0 else -1.0 / (TWO_PI * 1j * k)) for k in ks}
    conv = sum(v[j] * v[k - j] for k in ks if k for j in ks if abs(k - j) <= K)
    v0 = sum(v.values())
    norm = sum(abs(c) ** 2 for c in v.values())
    oracle = (conv - v0 ** 2 + norm).real
    assert K_analytic(RHO, 1e9, K) == pytest.approx(oracle, rel=1e-12)


def test_K_monte_carlo_agrees_with_analytic():
    cal = K_calibrate(RHO, 4.0, 32, rng=np.random.default_rng(5), samples=6000)
    assert abs(cal.monte_carlo - cal.analytic) < 3 * cal.stderr
    assert cal.unweighted[0] - cal.unweighted[1] + cal.unweighted[2] == 0.0


# -- exponential moments ------------------------------------------------------

def test_exp_moment_zero_field():
    res = exp_moment_check(np.zeros((2, 5, 9), dtype=complex), np.linspace(0, 1, 4, endpoint=False))
    np.testing.assert_array_equal(res.moments, 1.0)


def test_exp_moment_lognormal_at_stationarity():
    K, R = 32, 20000
    fields = noise(K, 6, size=R).coeffs[None]
    res = exp_moment_check(fields, np.array([0.0, 0.25, 0.7]))
    assert res.predicted == pytest.approx(math.exp(2 * theta_variance(K)))
    assert np.all(np.abs(res.moments - res.predicted) < 3.5 * res.stderr)


# -- extraction ---------------------------------------------------------------

def test_extract_constant_and_exp_sine():
    K = 32
    u = colehopf_extract(SpectralField.constant(2.5, K), mean=0.3)
    np.testing.assert_allclose(u.coeffs, SpectralField.constant(0.3, K).coeffs, atol=1e-14)
    phi = SpectralField.from_function(lambda x: np.exp(np.sin(TWO_PI * x)), K)
    u = colehopf_extract(phi, mean=-1.0)
    expected = SpectralField.from_modes({0: -1.0, 1: math.pi}, K)
    np.testing.assert_allclose(u.coeffs, expected.coeffs, atol=1e-10)


def test_state_extract_roundtrip():
    K, L = 64, 4.0
    u = noise(K, 8, mean_zero=False)
    s = build_state(u, L, K_const=0.0)
    phi = SpectralField.from_grid(s.phi_grid, K)
    back = colehopf_extract(phi, mean=0.0)
    target = mollify(u, RHO.with_scale(L)).coeffs.copy()
    target[0] = 0.0
    np.testing.assert_allclose(back.coeffs, target, atol=1e-8)


def test_extract_reports_first_nonpositive_time():
    K = 4
    good = SpectralField.constant(1.0, K).coeffs
    bad = SpectralField.from_modes({0: 0.5, 1: 0.5}, K).coeffs      # 0.5 + cos 2πx dips below 0
    traj = Trajectory(np.array([0.0, 0.1, 0.2, 0.3]), np.stack([good, good, bad, bad]))
    with pytest.raises(PositivityError) as info:
        colehopf_extract(traj)
    assert info.value.time == pytest.approx(0.2)


def test_she_initial_is_exp_of_antiderivative():
    K = 32
    u0 = SpectralField.from_modes({1: 0.5}, K)            # cos 2πx, Θ * u0 = sin(2πx) / 2π
    phi0 = she_initial(u0)
    x = grid_points(50)
    np.testing.assert_allclose(phi0.evaluate(x), np.exp(np.sin(TWO_PI * x) / TWO_PI), atol=1e-12)
