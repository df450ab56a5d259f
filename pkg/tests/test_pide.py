from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from markovproj.core import DensityField, ProjectedCoefficients, TimeGrid
from markovproj.errors import ConfigError, NumericalError, StepSizeError
from markovproj.pide import build_generator_matrix, evolve_forward, gaussian_density

X = np.linspace(-6, 6, 1201)


def _const(b, a, z=np.linspace(-10, 10, 11), **kw):
    I = len(z)
    return ProjectedCoefficients(times=[0.0], z=z, b=np.full((1, I), float(b)), a=np.full((1, I), float(a)), **kw)


def _unit_jumps(b, rate=1.0, sizes=(1.0,), y=np.linspace(-2, 2, 41), z=np.linspace(-10, 10, 11)):
    dy = y[1] - y[0]
    n = np.zeros((1, len(y), len(z)))
    for s in sizes:
        n[0, np.isclose(y, s)] = rate / len(sizes) / dy
    return _const(b, 0.0, z=z, y=y, n=n)


def test_upwind_exact_on_linear():
    g = build_generator_matrix(_const(1.0, 0.0), X, 0.0)
    Lf = g.apply(X)
    np.testing.assert_allclose(Lf[:-1], 1.0, rtol=0, atol=1e-12)


def test_central_exact_on_quadratic():
    g = build_generator_matrix(_const(0.0, 1.0), X, 0.0)
    Lf = g.apply(X ** 2)
    assert np.max(np.abs(Lf[1:-1] - 1.0)) <= 1e-9


def test_unit_jump_row():
    # b = 1 cancels the truncated compensator of the unit jump: L f = f(x+1) - f(x)
    x = np.linspace(-3, 3, 61)
    f = np.random.default_rng(0).normal(size=len(x))
    g = build_generator_matrix(_unit_jumps(1.0), x, 0.0)
    inner = x + 1.0 <= x[-1] + 1e-12
    shift = np.searchsorted(x, x[inner] + 1.0 - 1e-9)
    np.testing.assert_allclose(g.apply(f)[inner], f[shift] - f[inner], rtol=0, atol=1e-12)
    # b = 0 keeps the -1{|y|<=1} y f' term, realised as an upwind difference
    g0 = build_generator_matrix(_unit_jumps(0.0), x, 0.0)
    Lx = g0.apply(x)
    np.testing.assert_allclose(Lx[1:][inner[1:]], 0.0, atol=1e-12)
    np.testing.assert_allclose(g0.lost_rate[~inner], 1.0)


def test_translation_mean():
    p0 = gaussian_density(X, 0.0, 0.1)
    f = evolve_forward(p0, _const(1.0, 0.0), X, TimeGrid(0, 1, 1000), checkpoints=[1.0])
    mean = np.sum(X * f.p[-1]) * (X[1] - X[0])
    assert abs(mean - 1.0) <= X[1] - X[0]


def _heat_error(dx, dt):
    x = np.arange(-6, 6 + dx / 2, dx)
    p0 = gaussian_density(x, 0.0, 0.05)
    f = evolve_forward(p0, _const(0.0, 1.0), x, TimeGrid(0, 1, int(round(1 / dt))), checkpoints=[1.0])
    exact = stats.norm.pdf(x, 0, np.sqrt(0.05 ** 2 + 1))
    return np.sum(np.abs(f.p[-1] - exact)) * dx, f


def test_heat_kernel_l1_and_mass():
    err, f = _heat_error(0.01, 1e-3)
    assert err <= 5e-3
    assert abs(f.mass()[-1] - 1.0) <= 1e-3
    assert min(f.diagnostics["min_density"]) >= -1e-8


@pytest.mark.slow
def test_heat_refinement_ratio():
    coarse, _ = _heat_error(0.02, 2e-3)
    fine, _ = _heat_error(0.01, 1e-3)
    assert 1.5 <= coarse / fine <= 4.5


def poisson_series(x, p0, lam_t, terms=4):
    """Density of x0 + sum of N(lam_t) symmetric unit jumps, truncated after ``terms`` Poisson terms."""
    dx = x[1] - x[0]
    shift = int(round(1.0 / dx))
    out = np.zeros_like(p0)
    conv = p0.copy()
    for k in range(terms):
        out += stats.poisson.pmf(k, lam_t) * conv
        nxt = np.zeros_like(conv)
        nxt[shift:] += 0.5 * conv[:-shift]
        nxt[:-shift] += 0.5 * conv[shift:]
        conv = nxt
    return out


def test_compound_poisson_series():
    p0 = gaussian_density(X, 0.0, 0.1)
    c = _unit_jumps(0.0, rate=1.0, sizes=(-1.0, 1.0))
    with pytest.warns(UserWarning, match="non-degeneracy"):
        f = evolve_forward(p0, c, X, TimeGrid(0, 0.5, 500), checkpoints=[0.5])
    err = np.sum(np.abs(f.p[-1] - poisson_series(X, p0, 0.5))) * (X[1] - X[0])
    assert err <= 1e-2


def _random_coeffs(rng, with_jumps=True):
    z = np.linspace(-3, 3, 13)
    y = np.linspace(-1.5, 1.5, 31)
    I, J = len(z), len(y)
    kw = {}
    if with_jumps:
        kw = dict(y=y, n=rng.uniform(0, 2, (2, J, I)), tail_lower=rng.uniform(0, 0.5, (2, I)),
                  tail_upper=rng.uniform(0, 0.5, (2, I)))
    return ProjectedCoefficients(times=[0.0, 1.0], z=z, b=rng.normal(size=(2, I)), a=rng.uniform(0.1, 2, (2, I)), **kw)


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_discrete_duality(seed, t):
    rng = np.random.default_rng(seed)
    x = np.linspace(-2, 2, 81)
    g = build_generator_matrix(_random_coeffs(rng), x, t)
    f = rng.normal(size=len(x))
    p = rng.uniform(size=len(x))
    gap = abs(np.dot(g.apply(f), p) - np.dot(f, g.apply_adjoint(p)))
    assert gap <= 1e-12 * np.linalg.norm(f) * np.linalg.norm(p)


def test_row_sums_vanish_up_to_lost_rate():
    rng = np.random.default_rng(1)
    for _ in range(5):
        g = build_generator_matrix(_random_coeffs(rng), np.linspace(-2, 2, 81), 0.3)
        scale = np.abs(g.matrix()).max()
        assert np.max(np.abs(g.row_sums() + g.lost_rate)) <= 1e-12 * max(scale, 1.0)
        interior = g.lost_rate == 0
        assert interior.any()
    g = build_generator_matrix(_random_coeffs(rng, with_jumps=False), np.linspace(-2, 2, 81), 0.3)
    assert np.max(np.abs(g.row_sums())) <= 1e-12 * np.abs(g.matrix()).max()


def test_positivity_without_jumps():
    c = ProjectedCoefficients(times=[0.0, 1.0], z=np.linspace(-6, 6, 49),
                              b=np.tile(-np.tanh(np.linspace(-6, 6, 49)), (2, 1)),
                              a=np.tile(0.5 + 0.3 * np.cos(np.linspace(-6, 6, 49)), (2, 1)))
    f = evolve_forward(gaussian_density(X, 0.5, 0.05), c, X, TimeGrid(0, 1, 1000))
    assert min(f.diagnostics["min_density"]) >= -1e-8
    assert abs(f.mass()[-1] - 1.0) <= 1e-12


def test_jump_cfl_rejected_with_suggestion():
    c = _unit_jumps(0.0, rate=1000.0)
    with pytest.raises(StepSizeError) as info:
        with pytest.warns(UserWarning):
            evolve_forward(gaussian_density(X, 0.0, 0.1), c, X, TimeGrid(0, 1, 100))
    assert info.value.suggested_dt == pytest.approx(0.9 / 1000.0)
    assert "suggested dt" in str(info.value)


def test_mass_loss_aborts():
    x = np.linspace(-2, 2, 201)
    c = _unit_jumps(0.0, rate=0.5, sizes=(1.5,), y=np.linspace(-2, 2, 41))
    with pytest.raises(NumericalError, match="mass drift"):
        with pytest.warns(UserWarning):
            evolve_forward(gaussian_density(x, 1.0, 0.1), c, x, TimeGrid(0, 1, 100))


def test_initial_density_checked():
    with pytest.raises(ConfigError):
        evolve_forward(2 * gaussian_density(X, 0, 0.1), _const(0, 1), X, TimeGrid(0, 1, 10))
    with pytest.raises(ConfigError):
        evolve_forward(gaussian_density(X, 0, 0.1), _const(0, 1), X, TimeGrid(0, 1, 10), scheme="rk4")


def test_explicit_and_imex_agree():
    p0 = gaussian_density(X, 0.0, 0.2)
    c = _const(0.3, 0.02)
    grid = TimeGrid(0, 0.5, 2000)
    a = evolve_forward(p0, c, X, grid, checkpoints=[0.5])
    b = evolve_forward(p0, c, X, grid, checkpoints=[0.5], scheme="explicit")
    assert np.sum(np.abs(a.p[-1] - b.p[-1])) * (X[1] - X[0]) <= 5e-3
    assert isinstance(a, DensityField)
