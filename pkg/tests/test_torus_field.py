import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from burgerslab.errors import ParameterError
from burgerslab.torus_field import (
    Mollifier,
    SpectralField,
    derivative,
    field_from_dict,
    field_to_dict,
    grid_points,
    laplacian,
    load_field,
    mollify,
    pair,
    product_dealiased,
    renorm_constant,
    sample_white_noise,
    save_field,
    theta_convolve,
    translate,
)

TWO_PI = 2 * math.pi


def sin_field(K, k=1):
    return SpectralField.from_modes({k: -0.5j}, K)


def cos_field(K, k=1):
    return SpectralField.from_modes({k: 0.5}, K)


seeds = st.integers(0, 2 ** 32 - 1)
cutoffs = st.integers(2, 24)


def random_field(K, seed, mean_zero=False):
    return sample_white_noise(K, np.random.default_rng(seed), mean_zero)


# -- sample_white_noise ------------------------------------------------------

def test_white_noise_mode_variance():
    u = sample_white_noise(8, np.random.default_rng(0), size=20000)
    second = np.mean(np.abs(u.coeffs) ** 2, axis=0)
    # E|u(k)|^2 = 1; the sample mean of |u(k)|^2 has sd 1/sqrt(n) for k > 0
    assert np.all(np.abs(second[1:] - 1) < 4 / math.sqrt(20000))
    assert abs(second[0] - 1) < 4 * math.sqrt(2 / 20000)


def test_white_noise_hermitian_symmetry():
    u = sample_white_noise(5, np.random.default_rng(1))
    assert u.mode(-3) == np.conj(u.mode(3))
    full = u.full_coeffs()
    assert np.array_equal(full[::-1], np.conj(full))


def test_white_noise_pairing_variance_is_l2_norm():
    phi = sin_field(6)
    oracle = float(np.sum(np.abs(phi.full_coeffs()) ** 2))
    assert oracle == pytest.approx(0.5)
    u = sample_white_noise(6, np.random.default_rng(2), size=40000)
    v = np.var(pair(u, phi))
    assert abs(v - oracle) < 4 * oracle * math.sqrt(2 / 40000)


def test_white_noise_mean_zero_and_bad_cutoff():
    u = sample_white_noise(4, np.random.default_rng(3), mean_zero=True, size=10)
    assert np.all(u.coeffs[:, 0] == 0)
    with pytest.raises(ParameterError):
        sample_white_noise(0, np.random.default_rng(0))


# -- mollify -----------------------------------------------------------------

def test_mollify_covering_scale_is_identity():
    u = random_field(10, 4)
    assert mollify(u, Mollifier(scale=20.0)).allclose(u, atol=0)
    c = SpectralField.constant(2.5, 10)
    assert mollify(c, Mollifier(scale=1.0)).allclose(c, atol=0)


def test_mollify_single_mode_scaled_by_profile():
    m = Mollifier(scale=5.0, inner=0.25)
    u = SpectralField.from_modes({5: 1.0 + 2.0j}, 8)
    assert mollify(u, m).mode(5) == pytest.approx((1.0 + 2.0j) * m.profile(1.0))
    m2 = Mollifier(scale=8.0)
    got = mollify(u, m2).mode(5)
    assert got == pytest.approx((1 + 2j) * m2.profile(5 / 8))
    assert 0 < m2.profile(5 / 8) < 1


def test_mollifier_profile_shape():
    m = Mollifier()
    xi = np.linspace(-1.5, 1.5, 301)
    p = m.profile(xi)
    assert m.profile(0.0) == 1.0
    np.testing.assert_array_equal(p, m.profile(-xi))
    assert np.all(p[np.abs(xi) <= 0.5] == 1)
    assert np.all(p[np.abs(xi) >= 1.0] == 0)
    assert np.all(np.diff(p[xi >= 0]) <= 0)
    with pytest.raises(ParameterError):
        Mollifier(scale=0.0)


@settings(max_examples=25, deadline=None)
@given(seed=seeds, n=st.floats(1.0, 20.0), m=st.floats(1.0, 20.0))
def test_mollify_twice_equals_product_profile(seed, n, m):
    u = random_field(16, seed)
    a, b = Mollifier(scale=n), Mollifier(scale=m)
    twice = mollify(mollify(u, a), b)
    once = u.coeffs * a.multipliers(16) * b.multipliers(16)
    np.testing.assert_allclose(twice.coeffs, once, atol=1e-14)


# -- theta / derivative ------------------------------------------------------

def test_theta_of_cos_is_scaled_sin():
    out = theta_convolve(cos_field(4))
    assert out.allclose(sin_field(4) * (1 / TWO_PI), atol=1e-15)
    assert theta_convolve(SpectralField.constant(3.0, 4)).allclose(SpectralField.zeros(4), atol=0)


def test_derivative_examples():
    assert derivative(SpectralField.constant(1.0, 3)).allclose(SpectralField.zeros(3), atol=0)
    assert derivative(sin_field(3)).allclose(cos_field(3) * TWO_PI, atol=1e-14)
    # Plancherel: ||phi'||^2 = sum (2 pi k)^2 |phi_k|^2 = 2 pi^2 for sin
    d = derivative(sin_field(3))
    assert pair(d, d) == pytest.approx(2 * math.pi ** 2, rel=1e-14)


@settings(max_examples=40, deadline=None)
@given(K=cutoffs, seed=seeds)
def test_derivative_inverts_theta_up_to_mean(K, seed):
    u = random_field(K, seed)
    back = derivative(theta_convolve(u)).coeffs.copy()
    back[0] += u.mean
    np.testing.assert_allclose(back, u.coeffs, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(K=cutoffs, seed=seeds, x=st.floats(-1, 1))
def test_operations_preserve_hermitian_symmetry(K, seed, x):
    u = random_field(K, seed)
    for v in (theta_convolve(u), derivative(u), laplacian(u), translate(u, x),
              mollify(u, Mollifier(scale=3.0)), product_dealiased(u, u)):
        full = v.full_coeffs()
        assert np.array_equal(full[::-1], np.conj(full))
        assert np.isreal(v.coeffs[0])


def test_translate_shifts_point_values():
    u = random_field(6, 7)
    x = np.array([0.1, 0.37, 0.9])
    np.testing.assert_allclose(translate(u, 0.2).evaluate(x), u.evaluate(x - 0.2), atol=1e-12)


# -- products and pairing ----------------------------------------------------

def test_product_of_cosines():
    c = cos_field(3)
    expected = SpectralField.from_modes({0: 0.5, 2: 0.25}, 3)
    assert product_dealiased(c, c).allclose(expected, atol=1e-15)
    truncated = product_dealiased(cos_field(1), cos_field(1))
    assert truncated.allclose(SpectralField.constant(0.5, 1), atol=1e-15)
    assert product_dealiased(c, SpectralField.zeros(3)).allclose(SpectralField.zeros(3), atol=0)
    with pytest.raises(ParameterError):
        product_dealiased(c, cos_field(4))


@settings(max_examples=25, deadline=None)
@given(K=cutoffs, seed=seeds)
def test_square_pairing_matches_fine_quadrature(K, seed):
    u = random_field(K, seed)
    phi = SpectralField.from_modes({1: 0.3 - 0.1j, 2: 0.2j, 0: 0.7}, K)
    x = grid_points(8 * K + 16)           # exact for degree < 8K + 16
    quad = np.mean(u.evaluate(x) ** 2 * phi.evaluate(x))
    assert pair(product_dealiased(u, u), phi) == pytest.approx(quad, abs=1e-8)


def test_pair_examples():
    u = random_field(5, 8)
    assert pair(u, SpectralField.constant(1.0, 5)) == pytest.approx(u.mean, abs=1e-15)
    assert pair(sin_field(5), sin_field(5)) == pytest.approx(0.5)


@settings(max_examples=30, deadline=None)
@given(K=cutoffs, s1=seeds, s2=seeds, a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_pair_bilinear(K, s1, s2, a, b):
    u, v, w = random_field(K, s1), random_field(K, s2), random_field(K, s1 ^ s2)
    lhs = pair(u * a + v * b, w)
    assert lhs == pytest.approx(a * pair(u, w) + b * pair(v, w), abs=1e-12 * (1 + abs(a) + abs(b)) * 10)
    assert pair(u, v) == pytest.approx(pair(v, u), abs=1e-12)


# -- renormalization constants -----------------------------------------------

def test_renorm_constant_limits():
    assert renorm_constant(Mollifier(scale=1e6), 10).torus == pytest.approx(21.0)
    assert renorm_constant(Mollifier(), 10).torus == 21.0


def test_renorm_constant_affine_slope_matches_profile_integral():
    m = Mollifier()
    K = 512
    Ns = np.array([8.0, 16, 32, 64, 128, 256])     # N * support <= K
    c = [renorm_constant(m.with_scale(N), K).torus for N in Ns]
    slope = np.polyfit(Ns, c, 1)[0]
    # Riemann-sum oracle for the integral of the squared profile
    xi = np.linspace(-1, 1, 200001)
    oracle = np.trapezoid(m.profile(xi) ** 2, xi)
    assert slope == pytest.approx(oracle, rel=0.01)
    assert m.profile_l2() == pytest.approx(oracle, rel=1e-8)
    assert renorm_constant(m.with_scale(16), K).line == pytest.approx(16 * oracle, rel=1e-8)


def test_renorm_constant_is_pointwise_variance():
    m = Mollifier(scale=6.0)
    K = 8
    u = sample_white_noise(K, np.random.default_rng(9), size=40000)
    vals = mollify(u, m).evaluate(np.array([0.3]))[:, 0]
    sq = vals ** 2
    c = renorm_constant(m, K).torus
    assert abs(sq.mean() - c) < 3 * sq.std() / math.sqrt(len(sq))


# -- serialization -----------------------------------------------------------

def test_field_roundtrip(tmp_path):
    u = random_field(7, 10, mean_zero=True)
    assert field_from_dict(field_to_dict(u)).allclose(u, atol=0)
    path = save_field(tmp_path / "u.json", u)
    v = load_field(path)
    assert v.mean_zero and v.allclose(u, atol=0)


def test_field_invariants_enforced():
    with pytest.raises(ParameterError):
        SpectralField(np.array([1j, 0.0]))
    with pytest.raises(ParameterError):
        SpectralField(np.array([1.0]))
    u = SpectralField(np.array([2.0, 1.0]), mean_zero=True)
    assert u.mean == 0
