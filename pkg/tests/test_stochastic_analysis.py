import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from burgerslab.errors import ParameterError, StatisticsError, UndefinedExponentError
from burgerslab.spde import SPDEConfig, sample_noise, simulate, white_noise_ensemble
from burgerslab.stochastic_analysis import (
    ChaosKernel,
    chaos_generator_action,
    energy_scaling,
    fit_line,
    geometric_lags,
    holder_exponent,
    kv_bound_check,
    kv_norm,
    martingale_trick_check,
    pairing_convergence,
    real_modes,
    realized_qv,
    second_chaos_variance,
    stationarity_test,
    wick_pairing,
)
from burgerslab.torus_field import Mollifier, SpectralField, grid_points, sample_white_noise

TWO_PI = 2 * math.pi


def brownian(n, R, dt, var_rate=1.0, seed=0):
    rng = np.random.default_rng(seed)
    inc = rng.standard_normal((n, R)) * math.sqrt(var_rate * dt)
    return np.vstack([np.zeros((1, R)), np.cumsum(inc, axis=0)])


# -- quadratic variation -------------------------------------------------------

def test_realized_qv_of_brownian_motion():
    target = 2 * 2 * math.pi ** 2                        # 2 ||∂ sin(2πx)||²
    qv = realized_qv(brownian(4000, 50, 1e-3, target), 1e-3, levels=4)
    assert qv.estimate == pytest.approx(target, rel=0.05)
    assert np.all(qv.values > 0)
    np.testing.assert_allclose(qv.levels, [1e-3, 2e-3, 4e-3, 8e-3])


def test_realized_qv_of_smooth_path_vanishes_linearly():
    t = np.linspace(0, 1, 2 ** 12 + 1)
    qv = realized_qv(np.sin(t)[:, None], t[1] - t[0], levels=4)
    ratios = qv.values[1:] / qv.values[:-1]
    np.testing.assert_allclose(ratios, 2.0, rtol=1e-3)
    assert qv.extra["limit"] == pytest.approx(0.0, abs=1e-6)


def test_realized_qv_too_short():
    with pytest.raises(ParameterError):
        realized_qv(np.zeros((5, 1)), 0.1, levels=4)


# -- Hölder exponents ----------------------------------------------------------

def test_holder_brownian_is_one_half():
    res = holder_exponent(brownian(20000, 20, 1e-4), 1e-4, lag_range=(1e-4, 2e-2))
    assert res.estimate == pytest.approx(0.5, abs=0.05)
    assert res.extra["alpha"][2] == pytest.approx(0.5, abs=0.05)


def test_holder_lipschitz_is_one():
    t = np.linspace(0, 1, 1001)[:, None]
    res = holder_exponent(t, 1e-3)
    assert res.estimate == pytest.approx(1.0, abs=1e-9)


def test_holder_constant_series_undefined():
    with pytest.raises(UndefinedExponentError):
        holder_exponent(np.ones((100, 2)), 0.01)


@settings(max_examples=30, deadline=None)
@given(lo=st.integers(1, 50), span=st.integers(1, 1000), n=st.integers(2, 30))
def test_geometric_lags_sorted_in_range(lo, span, n):
    lags = geometric_lags(lo, lo + span, n)
    assert np.all(np.diff(lags) > 0)
    assert lags[0] >= lo and lags[-1] <= lo + span


# -- energy scaling ------------------------------------------------------------

def _energy_ladder(levels, n, R, dt, seed=1):
    """I_N = Σ_{j >= i} c_j B_j with c_j² = 1/(2 N_j), so E[(I_N - I_2N)²] = (t-s)/(2N)."""
    parts = [brownian(n, R, dt, 1.0 / (2 * N), seed + i) for i, N in enumerate(levels)]
    return {N: sum(parts[i:]) for i, N in enumerate(levels)}


def test_energy_scaling_recovers_synthetic_exponents():
    levels = (8, 16, 32, 64)
    res = energy_scaling(_energy_ladder(levels, 4000, 200, 1e-3), 1e-3, (0.01, 0.02, 0.04, 0.08))
    assert res.slopes["level"].slope == pytest.approx(-1.0, abs=0.05)
    assert res.slopes["time"].slope == pytest.approx(1.0, abs=0.05)


def test_energy_scaling_input_checks():
    ladder = _energy_ladder((8, 16, 32), 200, 20, 1e-3)
    with pytest.raises(StatisticsError):
        energy_scaling(ladder, 1e-3, (0.01,))
    with pytest.raises(ParameterError):
        energy_scaling({8: ladder[8], 16: ladder[16]}, 1e-3, (0.01,), min_replicas=1)


# -- stationarity --------------------------------------------------------------

def test_real_modes_are_standard_for_white_noise():
    u = sample_white_noise(8, np.random.default_rng(2), size=20000)
    z = real_modes(u.coeffs)
    assert z.shape == (20000, 17)
    np.testing.assert_allclose(z.var(axis=0), 1.0, atol=0.05)


def test_stationarity_test_false_alarm_rate():
    rng = np.random.default_rng(3)
    trials, ks_fail, z_fail, z_total = 300, 0, 0, 0
    for _ in range(trials):
        u = sample_white_noise(16, rng, size=200)
        rep = stationarity_test(u.coeffs)
        ks_fail += rep.statistics[1].estimate < 0.01
        z = rep.metadata["z_scores"]
        z_fail += int(np.sum(np.abs(z) > 2.5758))
        z_total += len(z)
    se = math.sqrt(0.01 * 0.99 / trials)
    assert ks_fail / trials < 0.01 + 3 * se
    assert abs(z_fail / z_total - 0.01) < 3 * math.sqrt(0.01 * 0.99 / z_total) + 0.003


def test_stationarity_of_ou_run():
    K, dt, n, R = 16, 1e-3, 300, 400
    rngs = [np.random.default_rng([4, i]) for i in range(R)]
    traj = simulate(white_noise_ensemble(K, rngs), SPDEConfig(K, dt, n * dt, scheme="ou").stepper(), n,
                    sample_noise(K, dt, n, rngs), stride=n)
    rep = stationarity_test(traj.coeffs[-1])
    # 33 real modes: the per-mode 99% rule allows no exceedance, so use the Bonferroni bound
    bonf = rep.statistics[2]
    assert bonf.estimate < bonf.target
    assert rep.statistics[1].passed


def test_stationarity_detects_wrong_variance():
    u = sample_white_noise(16, np.random.default_rng(5), size=400)
    assert not stationarity_test(1.3 * u.coeffs).passed


# -- chaos kernels -------------------------------------------------------------

def random_kernel(K, seed, order=2):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((2 * K + 1,) * order) + 1j * rng.standard_normal((2 * K + 1,) * order)
    if order == 2:
        a = a + a.T
        a = a + np.conj(a[::-1, ::-1])
    else:
        a = a + np.conj(a[::-1])
    return ChaosKernel(order, a / 4)


def test_kernel_validation():
    with pytest.raises(ParameterError):
        ChaosKernel(3, np.zeros((3, 3, 3)))
    with pytest.raises(ParameterError):
        ChaosKernel(1, np.array([0, 0, 1.0]))                # not Hermitian
    with pytest.raises(ParameterError):
        ChaosKernel(2, np.arange(9.0).reshape(3, 3))


def test_kernel_evaluation_moments():
    K, R = 4, 40000
    u = sample_white_noise(K, np.random.default_rng(6), size=R).coeffs
    for order in (1, 2):
        k = random_kernel(K, 7, order)
        F = k.evaluate(u)
        assert abs(F.mean()) < 4 * F.std() / math.sqrt(R)
        assert F.var() == pytest.approx(k.variance(), rel=6 * math.sqrt(2 / R) * 3)


def test_wick_mode_is_centred_mode_energy():
    u = sample_white_noise(3, np.random.default_rng(8), size=5).coeffs
    np.testing.assert_allclose(ChaosKernel.wick_mode(2, 3).evaluate(u), np.abs(u[:, 2]) ** 2 - 1, atol=1e-13)


def test_energy_moments_closed_form_vs_monte_carlo():
    K, R = 4, 40000
    kern = random_kernel(K, 9)
    u = sample_white_noise(K, np.random.default_rng(10), size=R).coeffs
    E = kern.energy_form(u)
    np.testing.assert_allclose(E[:3], [real_modes(u[i]) @ kern.energy_matrix() @ real_modes(u[i]) for i in range(3)],
                               rtol=1e-10)
    for q in (1, 2):
        s = E ** q
        assert abs(s.mean() - kern.energy_moment(q)) < 4 * s.std() / math.sqrt(R)


def test_kv_norm_examples():
    g = np.zeros(5, dtype=complex)
    g[3] = g[1] = 1.0                                       # unit coefficients on k = ±1
    k1 = ChaosKernel(1, g)
    assert kv_norm(k1) == pytest.approx(2 / (TWO_PI ** 2))
    assert kv_norm(k1.scaled(3.0)) == pytest.approx(9 * kv_norm(k1))
    k2 = ChaosKernel.mode(2, 2, part="sin")                # orthogonal to k1
    assert kv_norm(ChaosKernel(1, k1.g + k2.g)) == pytest.approx(kv_norm(k1) + kv_norm(k2), rel=1e-14)
    w = ChaosKernel.wick_mode(1, 4)
    assert kv_norm(w) == pytest.approx(2 * 2 * 0.25 / (2 * TWO_PI ** 2))
    zero_mode = np.zeros(5)
    zero_mode[2] = 1.0
    with pytest.raises(ParameterError):
        kv_norm(ChaosKernel(1, zero_mode))


# -- renormalized square oracles ----------------------------------------------

def test_second_chaos_variance_zero_test_function():
    res = second_chaos_variance(SpectralField.zeros(8), Mollifier(), 4.0, 8)
    assert res.estimate == 0.0


def test_second_chaos_variance_monte_carlo():
    phi = SpectralField.from_modes({1: 0.5}, 256)
    res = second_chaos_variance(phi, Mollifier(), 16.0, 256, rng=np.random.default_rng(11), samples=6000)
    assert abs(res.extra["mc"] - res.estimate) < 3 * res.extra["mc_stderr"]


def test_second_chaos_variance_grows_linearly():
    phi = SpectralField.from_modes({1: 0.5}, 256)
    Ns = np.array([8.0, 16, 32, 64])
    v = np.array([second_chaos_variance(phi, Mollifier(), N, 256).estimate for N in Ns])
    assert np.all(np.diff(v) > 0)
    reg = fit_line(Ns, v)
    assert reg.slope > 0
    assert np.max(np.abs(v - (reg.intercept + reg.slope * Ns))) < 0.02 * v[-1]


def test_pairing_limit_matches_quadrature():
    K = 12
    psi = SpectralField.from_modes({k: math.exp(-k * k / 8) for k in range(1, K + 1)}, K)
    phi = SpectralField.from_modes({1: 0.3, 2: -0.2j}, K)
    kern = ChaosKernel.wick_square(psi)
    x = grid_points(200)
    oracle = 2 * np.mean(psi.evaluate(x) ** 2 * phi.evaluate(x))
    assert wick_pairing(phi, kern) == pytest.approx(oracle, abs=1e-12)
    rep = pairing_convergence(phi, kern, [8, 16, 32, 64, 128],
                              mollifiers=(Mollifier(), Mollifier(inner=0.25)))
    assert rep.passed
    assert rep["limit pairing"].estimate == pytest.approx(oracle, abs=1e-12)


def test_pairing_with_wick_square_monte_carlo():
    K, N, R = 8, 6.0, 40000
    m = Mollifier()
    phi = SpectralField.from_modes({0: 1.0, 1: 0.4}, K)
    kern = ChaosKernel.wick_square(SpectralField.from_modes({1: 0.5, 2: 0.3j}, K))
    from burgerslab.spde import renormalized_square
    u = sample_white_noise(K, np.random.default_rng(12), size=R)
    prod = renormalized_square(u, m.with_scale(N), phi) * kern.evaluate(u.coeffs)
    assert abs(prod.mean() - wick_pairing(phi, kern, m, N)) < 4 * prod.std() / math.sqrt(R)


def test_pairing_rejects_first_chaos():
    with pytest.raises(ParameterError):
        wick_pairing(SpectralField.constant(1.0, 4), ChaosKernel.mode(1, 4))


# -- OU chaos action and KV -----------------------------------------------------

def _ou_run(K=4, dt=1e-3, n=2000, R=200, seed=13):
    rngs = [np.random.default_rng([seed, i]) for i in range(R)]
    return simulate(white_noise_ensemble(K, rngs), SPDEConfig(K, dt, n * dt, scheme="ou").stepper(), n,
                    sample_noise(K, dt, n, rngs))


def test_chaos_action_rates():
    traj = _ou_run()
    for kern, rate in ((ChaosKernel.mode(1, 4), TWO_PI ** 2), (ChaosKernel.wick_mode(1, 4), 2 * TWO_PI ** 2)):
        rep = chaos_generator_action(kern, traj)
        assert rep["decay rate"].estimate == pytest.approx(rate, rel=0.10)
    null = chaos_generator_action(ChaosKernel.mode(6, 8), traj)
    assert null.passed and null.statistics[0].estimate == 0


def test_zero_functional_gives_zero_sides():
    traj = _ou_run(n=400, R=10)
    zero = ChaosKernel.zeros(2, 4)
    rep = martingale_trick_check(zero, traj, 2, [0.1, 0.2])
    assert rep.passed and rep.metadata["lhs"] == [0.0, 0.0]


def test_kv_bound_on_ou():
    traj = _ou_run(n=2000, R=100)
    rep = kv_bound_check(ChaosKernel.wick_mode(1, 4), traj, [0.25, 0.5, 1.0])
    assert rep.passed
