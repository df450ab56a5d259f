from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from markovproj.compensator import (ScalarAmplitude, integrate_density, pushforward_density, pushforward_set_mass,
                                    pushforward_table)
from markovproj.errors import ConfigError, NumericalError
from markovproj.levy import FiniteActivity, InfiniteActivity, laplace_density

# nu(y) = e^{-|y|}/2 as a finite measure of unit mass
LAPLACE = FiniteActivity(1.0, laplace_density(1.0))


def test_identity_map_returns_nu():
    y = np.array([-3.0, -0.5, 0.25, 1.0, 4.0])
    np.testing.assert_allclose(pushforward_density(lambda z: z, LAPLACE, y), LAPLACE.density(y), rtol=1e-9)


def test_doubling_map_pointwise():
    y = np.linspace(-20, 20, 401)
    y = y[y != 0]
    m = pushforward_density(lambda z: 2 * z, LAPLACE, y)
    assert np.max(np.abs(m - np.exp(-np.abs(y) / 2) / 4)) <= 1e-10


def test_cube_map_against_analytic_jacobian():
    nu = stats.norm.pdf
    y = np.array([-8.0, -1.0, -0.1, 0.3, 2.0, 27.0])
    amp = ScalarAmplitude(lambda z: z ** 3, domain=(-10.0, 10.0))
    expected = nu(np.cbrt(y)) / (3.0 * np.abs(y) ** (2 / 3))
    np.testing.assert_allclose(pushforward_density(amp, nu, y), expected, rtol=1e-6)


def test_outside_image_is_zero_and_origin_excluded():
    amp = ScalarAmplitude(lambda z: np.tanh(z))
    m = pushforward_density(amp, LAPLACE, np.array([-2.0, 0.0, 0.5, 1.5]))
    assert m[0] == 0.0 and m[1] == 0.0 and m[3] == 0.0 and m[2] > 0


def test_non_monotone_rejected():
    with pytest.raises(NumericalError, match="not monotone"):
        pushforward_density(lambda z: z ** 2 - z, LAPLACE, np.array([1.0]))


def test_amplitude_must_vanish_at_zero():
    with pytest.raises(ConfigError):
        ScalarAmplitude(lambda z: z + 1.0)


def test_set_mass_examples():
    exact = (np.exp(-1) - np.exp(-2)) / 2
    q = pushforward_set_mass(lambda z: z, LAPLACE, (1.0, 2.0), method="quadrature")
    assert q.value == pytest.approx(exact, abs=1e-12)
    assert exact == pytest.approx(0.1162, abs=1e-4)
    q2 = pushforward_set_mass(lambda z: 2 * z, LAPLACE, (2.0, 4.0), method="quadrature")
    assert q2.value == pytest.approx(q.value, abs=1e-12)
    mc = pushforward_set_mass(lambda z: 2 * z, LAPLACE, (2.0, 4.0), n_mc=200_000, seed=3)
    assert abs(mc.value - exact) <= 3 * mc.stderr


def test_set_mass_rejects_zero_touching_infinite_activity():
    nu = InfiniteActivity(lambda y: np.abs(y) ** -1.5 * np.exp(-np.abs(y)), cutoff=0.01)
    with pytest.raises(ConfigError):
        pushforward_set_mass(lambda z: z, nu, (-1.0, 1.0))


def test_density_integral_matches_set_mass_on_random_intervals():
    amp = ScalarAmplitude(lambda z: 2 * z)
    r = np.random.default_rng(4)
    for i in range(10):
        lo = r.uniform(0.1, 4.0) * r.choice([-1, 1])
        hi = lo + r.uniform(0.2, 3.0)
        if lo < 0 < hi:
            hi = -0.05
        mc = pushforward_set_mass(amp, LAPLACE, (lo, hi), n_mc=100_000, seed=100 + i)
        assert abs(integrate_density(amp, LAPLACE, lo, hi) - mc.value) <= 3 * mc.stderr


def test_integrability_preserved():
    amp = ScalarAmplitude(lambda z: 2 * z + 0.1 * z ** 3, domain=(-40.0, 40.0))
    psi = lambda z: float(amp.psi(np.array([z]))[0])
    f = lambda s: min(1.0, s * s)
    Z = 15.0
    R = psi(Z)
    z1 = float(amp.invert(np.array([1.0]))[0])
    m = lambda y: float(pushforward_density(amp, LAPLACE, np.array([y]))[0])
    lhs = sum(integrate.quad(lambda y: f(y) * m(y), lo, hi, epsabs=1e-13, limit=400)[0]
              for lo, hi in [(-R, -1), (-1, 0), (0, 1), (1, R)])
    rhs = sum(integrate.quad(lambda z: f(psi(z)) * np.exp(-abs(z)) / 2, lo, hi, epsabs=1e-13, limit=400)[0]
              for lo, hi in [(-Z, -z1), (-z1, 0), (0, z1), (z1, Z)])
    assert abs(lhs - rhs) <= 1e-6


@settings(max_examples=15)
@given(st.floats(0.2, 3.0), st.floats(-1.0, 1.0), st.floats(0.0, 1.0), st.floats(0.3, 3.0), st.floats(0.2, 2.0))
def test_monotone_cubic_routes_agree(c1, c2, c3, lo, width):
    # psi' = c1 + 2 c2 z + 3 c3 z^2 > 0 whenever c2^2 < 3 c1 c3 or c3 = 0 and c2 = 0
    c2 = c2 * np.sqrt(3 * c1 * c3) * 0.99
    amp = ScalarAmplitude(lambda z: c1 * z + c2 * z ** 2 + c3 * z ** 3, domain=(-30.0, 30.0))
    q = pushforward_set_mass(amp, LAPLACE, (lo, lo + width), method="quadrature").value
    assert integrate_density(amp, LAPLACE, lo, lo + width) == pytest.approx(q, abs=1e-8)
    m = pushforward_table(amp, LAPLACE, np.linspace(-5, 5, 101))
    assert np.all(m >= 0)


def test_multidimensional_requires_oracles():
    with pytest.raises(ConfigError):
        pushforward_density(lambda z: z, LAPLACE, np.ones((2, 2)), dim=2)
    nu = lambda z: np.exp(-0.5 * np.sum(z * z, axis=1)) / (2 * np.pi)
    A = np.array([[2.0, 1.0], [0.0, 1.0]])
    Ainv = np.linalg.inv(A)
    y = np.array([[1.0, 0.5], [-0.3, 2.0]])
    m = pushforward_density(lambda z: z @ A.T, nu, y, inverse=lambda y: y @ Ainv.T,
                            jacobian=lambda z: np.broadcast_to(A, (len(z), 2, 2)), dim=2)
    np.testing.assert_allclose(m, nu(y @ Ainv.T) / 2.0, rtol=1e-12)
