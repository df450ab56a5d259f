from __future__ import annotations

import numpy as np
import pytest
from scipy import integrate, stats

from markovproj.errors import ConfigError
from markovproj.levy import (ContinuousJumpLaw, DiscreteJumpLaw, FiniteActivity, InfiniteActivity, StableTail,
                             laplace_density, symmetric_atoms)


def test_negative_intensity_names_intensity():
    with pytest.raises(ConfigError, match="intensity"):
        FiniteActivity(-1.0, symmetric_atoms())


def test_jump_pdf_must_integrate_to_one():
    with pytest.raises(ConfigError, match="integrates"):
        ContinuousJumpLaw(pdf=lambda y: 2 * stats.norm.pdf(y), ppf=stats.norm.ppf)


def test_discrete_law_validation():
    with pytest.raises(ConfigError):
        DiscreteJumpLaw([1.0, 2.0], [0.5, 0.6])
    with pytest.raises(ConfigError):
        DiscreteJumpLaw([0.0, 2.0], [0.5, 0.5])


@pytest.mark.parametrize("beta", [0.0, 2.0, -0.5, 2.5])
def test_stable_exponent_open_interval(beta):
    with pytest.raises(ConfigError):
        StableTail(c=1.0, beta=beta, cutoff=0.1)


def test_infinite_activity_requires_cutoff():
    with pytest.raises(ConfigError, match="cutoff"):
        InfiniteActivity(lambda y: np.exp(-np.abs(y)) / np.abs(y), cutoff=None)


def test_laplace_moments():
    nu = FiniteActivity(2.0, laplace_density(1.0))
    assert nu.simulated_intensity() == 2.0
    np.testing.assert_allclose(nu.compensator_mean(), [0.0], atol=1e-12)
    # int_0^inf (1 ^ y^2) e^{-y} dy = 2 - 5/e + 1/e
    ref = 2.0 - 4.0 / np.e
    assert nu.integrability() == pytest.approx(2.0 * ref, rel=1e-9)
    for r in (1.0, 2.0, 4.0, 8.0):
        assert nu.tail_mass(r) == pytest.approx(2.0 * np.exp(-r), rel=1e-9)


def test_atoms_compensator_uses_truncation():
    nu = FiniteActivity(3.0, DiscreteJumpLaw([0.5, 2.0], [0.5, 0.5]))
    np.testing.assert_allclose(nu.compensator_mean(), [0.75])
    np.testing.assert_allclose(nu.simulated_mean(), [3.75])
    assert nu.integrability() == pytest.approx(3.0 * (0.5 * 0.25 + 0.5))


def test_infinite_activity_small_jump_split():
    dens = lambda y: np.exp(-np.abs(y)) / np.abs(y) ** 1.5
    nu = InfiniteActivity(dens, cutoff=0.05)
    small = 2 * integrate.quad(lambda y: np.sqrt(y) * np.exp(-y), 0, 0.05)[0]
    assert nu.small_jump_variance() == pytest.approx(small, rel=1e-8)
    drop = InfiniteActivity(dens, cutoff=0.05, small_jumps="drop")
    assert drop.small_jump_variance() == 0.0
    u = (np.arange(20000) + 0.5) / 20000
    y = nu.sample(u[:, None])[:, 0]
    assert np.all(np.abs(y) >= 0.05 - 1e-12)
    assert abs(np.mean(y)) < 0.01


def test_stable_tail_rates():
    s = StableTail(c=0.5, beta=1.2, cutoff=0.1)
    assert s.tail_mass(2.0) == pytest.approx(2 * 0.5 * 2.0 ** -1.2 / 1.2)
    assert s.small_jump_variance() == pytest.approx(2 * 0.5 * 0.1 ** 0.8 / 0.8)
    u = (np.arange(10000) + 0.5) / 10000
    y = s.sample(np.column_stack([np.full_like(u, 0.1), u]))[:, 0]
    assert np.all(np.abs(y) >= 0.1)
    # the empirical tail of simulated jumps follows the Pareto law
    frac = np.mean(np.abs(y) > 1.0)
    assert frac == pytest.approx(0.1 ** 1.2, rel=0.01)
