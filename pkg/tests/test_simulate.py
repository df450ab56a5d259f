from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from markovproj.core import ItoModel, PoissonDriven, ProjectedCoefficients, TimeGrid
from markovproj.diagnostics import ks_against_cdf, ks_two_sample
from markovproj.errors import ConfigError, NumericalError, ThinningWarning
from markovproj.levy import FiniteActivity, symmetric_atoms
from markovproj.simulate import simulate_ito, simulate_projected

N = 100_000


def _const(beta, delta, x0=0.0, **kw):
    return ItoModel(dim=1, x0=[x0], drift=lambda t, x, a: beta, diffusion=lambda t, x, a: delta, **kw)


def _cp(lam=2.0):
    return _const(0.0, 0.0, jumps=PoissonDriven(FiniteActivity(lam, symmetric_atoms()), compensation="all"))


def test_deterministic_ode_exact():
    e = simulate_ito(_const(1.0, 0.0, x0=1.0), TimeGrid(0, 1, 16), 10, 1)
    np.testing.assert_array_equal(e.values[:, :, 0], np.broadcast_to(1.0 + e.grid.times, (10, 17)))


def test_zero_dynamics_constant():
    e = simulate_ito(_const(0.0, 0.0, x0=3.0), TimeGrid(0, 1, 5), 7, 1)
    assert np.all(e.values == 3.0)


def test_brownian_endpoint_ks():
    e = simulate_ito(_const(0.0, 1.0), TimeGrid(0, 1, 100), N, 20240601, record=False)
    assert ks_against_cdf(e.at(1.0), stats.norm.cdf) <= 0.01


def test_compensated_compound_poisson_moments():
    x1 = simulate_ito(_cp(), TimeGrid(0, 1, 50), N, 7, record=False).at(1.0)
    assert abs(x1.mean()) <= 3 * np.sqrt(2.0 / N)
    assert 1.9 <= x1.var() <= 2.1


def test_thread_and_chunk_independence():
    m = _cp(1.5)
    g = TimeGrid(0, 1, 20)
    ref = simulate_ito(m, g, 3000, 99)
    for threads, chunk in [(4, 1000), (2, 257), (1, 3000)]:
        assert simulate_ito(m, g, 3000, 99, threads=threads, chunk=chunk) == ref


def test_seed_changes_output():
    g = TimeGrid(0, 1, 5)
    a = simulate_ito(_const(0.0, 1.0), g, 100, 1)
    b = simulate_ito(_const(0.0, 1.0), g, 100, 2)
    assert not np.array_equal(a.values, b.values)


def test_nonfinite_state_is_reported():
    m = ItoModel(dim=1, x0=[1.0], drift=lambda t, x, a: np.where(t > 0.3, np.inf, 0.0) + 0 * x[:, 0],
                 diffusion=lambda t, x, a: 0.0)
    with pytest.raises(NumericalError, match=r"path \d+, step \d+"):
        simulate_ito(m, TimeGrid(0, 1, 10), 5, 0)


def test_bad_path_count():
    with pytest.raises(ConfigError):
        simulate_ito(_const(0, 1), TimeGrid(0, 1, 2), 0, 0)


def test_weak_order_ratio():
    # Euler on dX = -X dt from x0 = 1 has mean (1 - dt)^n; the bias
    # e^{-1} - (1 - dt)^n halves with dt.  Brownian noise makes it a sampled test.
    m = ItoModel(dim=1, x0=[1.0], drift=lambda t, x, a: -x, diffusion=lambda t, x, a: 0.5)
    errs = []
    for n in (4, 8):
        x = simulate_ito(m, TimeGrid(0, 1, n), 200_000, 11, record=False).at(1.0)
        errs.append(abs(x.mean() - np.exp(-1.0)))
    assert 1.5 <= errs[0] / errs[1] <= 3.0


# ---------------------------------------------------------------------------
# projected SDE
# ---------------------------------------------------------------------------


def _fields(b, a, z=np.linspace(-6, 6, 241), times=(0.0, 1.0), **kw):
    K, I = len(times), len(z)
    bb = np.broadcast_to(np.asarray(b(z), dtype=float), (K, I))
    aa = np.broadcast_to(np.asarray(a(z), dtype=float), (K, I))
    return ProjectedCoefficients(times=list(times), z=z, b=bb, a=aa, **kw)


def test_projected_constant_matches_brownian():
    c = _fields(lambda z: 0 * z, lambda z: 1 + 0 * z)
    g = TimeGrid(0, 1, 100)
    x = simulate_projected(c, 0.0, g, N, 3).at(1.0)
    src = simulate_ito(_const(0.0, 1.0), g, N, 4, record=False).at(1.0)
    assert ks_against_cdf(x, stats.norm.cdf) <= 0.01
    assert ks_two_sample(x, src) <= 0.01


def test_projected_ou_marginal():
    c = _fields(lambda z: -z, lambda z: 1 + 0 * z)
    x = simulate_projected(c, 0.0, TimeGrid(0, 1, 200), N, 5).at(1.0)
    sd = np.sqrt((1 - np.exp(-2.0)) / 2)
    assert ks_against_cdf(x, stats.norm(0, sd).cdf) <= 0.01


def test_projected_jump_variance():
    y = np.linspace(-2, 2, 41)
    z = np.linspace(-8, 8, 33)
    n = np.zeros((2, len(y), len(z)))
    dy = y[1] - y[0]
    n[:, np.isclose(y, 1.0)] = 1.0 / dy
    n[:, np.isclose(y, -1.0)] = 1.0 / dy
    c = ProjectedCoefficients(times=[0.0, 1.0], z=z, b=np.zeros((2, len(z))), a=np.zeros((2, len(z))), y=y, n=n)
    e = simulate_projected(c, 0.0, TimeGrid(0, 1, 50), N, 6)
    x = e.at(1.0)
    assert 1.9 <= x.var() <= 2.1
    assert abs(x.mean()) <= 3 * np.sqrt(2.0 / N)
    assert e.info["accepted_jumps"] == len(e.jumps)


def test_projected_thinning_warning():
    y = np.linspace(-2, 2, 5)
    n = np.zeros((1, 5, 3))
    n[0, 4] = 100.0
    c = ProjectedCoefficients(times=[0.0], z=[-1.0, 0.0, 1.0], b=np.zeros((1, 3)), a=np.ones((1, 3)), y=y, n=n)
    with pytest.warns(ThinningWarning):
        simulate_projected(c, 0.0, TimeGrid(0, 1, 10), 10, 0)


def test_projected_threads_identical():
    c = _fields(lambda z: -z, lambda z: 0.5 + 0.1 * np.tanh(z))
    g = TimeGrid(0, 1, 20)
    assert simulate_projected(c, 0.3, g, 5000, 8, threads=3, chunk=999) == simulate_projected(c, 0.3, g, 5000, 8)


def test_projected_counts_excursions():
    c = _fields(lambda z: 0 * z + 5.0, lambda z: 0 * z, z=np.linspace(-1, 1, 21))
    e = simulate_projected(c, 0.0, TimeGrid(0, 1, 10), 4, 0)
    np.testing.assert_allclose(e.at(1.0), 5.0)
    assert e.info["excursions"] > 0
