from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from markovproj import io
from markovproj.core import (AssumptionAuditConfig, DensityField, ItoModel, JumpMarks, MarginalComparison,
                             MimicReport, PathEnsemble, ProjectedCoefficients, TimeGrid, snap_zero)
from markovproj.errors import ConfigError, NumericalError
from markovproj.pide import gaussian_density
from markovproj.simulate import simulate_ito


def test_time_grid():
    g = TimeGrid(0.0, 2.0, 8)
    assert g.dt == 0.25
    assert np.all(np.diff(g.times) > 0)
    assert g.index_of(1.5) == 6
    with pytest.raises(ConfigError):
        g.index_of(1.3)
    for bad in [(1.0, 1.0, 4), (0.0, 1.0, 0), (2.0, 1.0, 3)]:
        with pytest.raises(ConfigError):
            TimeGrid(*bad)


def test_snap_zero_makes_special_nodes_exact():
    y = snap_zero(np.linspace(-2.0, 2.0, 81))
    assert 0.0 in y and 1.0 in y and -1.0 in y
    assert np.sum(np.abs(y) <= 1.0) == 41


def _coeffs(K=2, I=5, J=7, seed=0, **kw):
    r = np.random.default_rng(seed)
    return ProjectedCoefficients(times=np.arange(K) * 0.1, z=np.linspace(-1, 1, I), b=r.normal(size=(K, I)),
                                 a=r.uniform(0.1, 1, (K, I)), y=np.linspace(-1.5, 1.5, J),
                                 n=r.uniform(0, 1, (K, J, I)), tail_lower=r.uniform(0, 0.1, (K, I)),
                                 tail_upper=r.uniform(0, 0.1, (K, I)), **kw)


def test_projected_coefficients_invariants():
    c = _coeffs()
    np.testing.assert_array_equal(c.sigma ** 2, c.a) if np.all(c.sigma ** 2 == c.a) else None
    assert np.max(np.abs(c.sigma ** 2 - c.a)) <= 4 * np.finfo(float).eps
    with pytest.raises(NumericalError):
        ProjectedCoefficients(times=[0.0], z=[0.0, 1.0], b=[[0, 0]], a=[[1, -1e-3]])
    with pytest.raises(NumericalError):
        _coeffs(K=1, I=3, J=3, integrability_bound=1e-6)
    with pytest.raises(ConfigError):
        ProjectedCoefficients(times=[0.0], z=[0.0, 1.0, 3.0], b=[[0, 0, 0]], a=[[1, 1, 1]])
    assert c.b.flags.writeable is False


def test_density_field_mass_and_negativity():
    x = np.linspace(-5, 5, 501)
    p = gaussian_density(x, 0.0, 1.0)
    f = DensityField(x=x, times=[0.0], p=p[None])
    assert f.mass()[0] == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(NumericalError):
        DensityField(x=x, times=[0.0], p=1.01 * p[None])
    q = p.copy()
    q[10] = -1e-6
    q[11] += 1e-6
    with pytest.raises(NumericalError):
        DensityField(x=x, times=[0.0], p=q[None])
    assert f.cdf(0.0, [0.0])[0] == pytest.approx(0.5, abs=1e-6)


def test_ito_model_validation():
    with pytest.raises(ConfigError):
        ItoModel(dim=2, x0=[0.0], drift=lambda t, x, a: 0.0, diffusion=lambda t, x, a: 1.0)
    with pytest.raises(ConfigError):
        ItoModel(dim=1, x0=lambda u: u, drift=lambda t, x, a: 0.0, diffusion=lambda t, x, a: 1.0)


def test_audit_config_positive():
    with pytest.raises(ConfigError):
        AssumptionAuditConfig(k1=1, k2=1, k3=0, ellipticity=1)
    with pytest.raises(ConfigError):
        AssumptionAuditConfig(k1=1, k2=1, k3=1, ellipticity=1, tail_radii=(2, 1))


def test_marginal_comparison_ranges():
    with pytest.raises(NumericalError):
        MarginalComparison(0.0, 1.5, 0.0, (0, 1, 0, 0), (0, 1, 0, 0), 100, 100, 0.1, 0.1, 1.0)
    with pytest.raises(NumericalError):
        MarginalComparison(0.0, 0.5, -1.0, (0, 1, 0, 0), (0, 1, 0, 0), 100, 100, 0.1, 0.1, 1.0)


# ---------------------------------------------------------------------------
# serialisation round trips
# ---------------------------------------------------------------------------

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@given(hnp.arrays(float, (3, 4), elements=finite), hnp.arrays(float, (3, 4), elements=st.floats(0, 1e6)),
       hnp.arrays(float, (3, 5, 4), elements=st.floats(0, 1e3)))
def test_coefficients_roundtrip(tmp_path_factory, b, a, n):
    d = tmp_path_factory.mktemp("c")
    c = ProjectedCoefficients(times=[0.0, 0.5, 1.0], z=np.linspace(-1, 1, 4), b=b, a=a, y=np.linspace(-2, 2, 5), n=n,
                              tail_lower=a[:, ::-1] * 1e-3, tail_upper=a * 1e-3, jump_cutoff=0.25,
                              filled=a > 1, stable_c=0.0)
    io.save_coefficients_json(c, d / "c.json")
    assert io.load_coefficients_json(d / "c.json") == c
    io.save_coefficients_csv(c, d / "c.csv", d / "k.csv")
    back = io.load_coefficients_csv(d / "c.csv", d / "k.csv", jump_cutoff=0.25, filled=a > 1)
    assert back == c


def test_coefficients_csv_header(tmp_path):
    c = _coeffs()
    io.save_coefficients_csv(c, tmp_path / "c.csv", tmp_path / "k.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "t,z,b,a"
    assert (tmp_path / "k.csv").read_text().splitlines()[0] == "t,z,y,n"


@given(hnp.arrays(float, (2, 50), elements=st.floats(0, 10)))
def test_density_roundtrip(tmp_path_factory, raw):
    d = tmp_path_factory.mktemp("d")
    x = np.linspace(-1, 1, 50)
    f = DensityField(x=x, times=[0.1, 0.2], p=raw, validate=False)
    io.save_density_csv(f, d / "p.csv")
    assert (d / "p.csv").read_text().startswith("t,x,p\n")
    assert io.load_density_csv(d / "p.csv", validate=False) == f
    assert io.density_from_dict(io.density_to_dict(f), validate=False) == f


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 10, allow_nan=False), finite, st.floats(0, 1e3)),
                min_size=1, max_size=5))
def test_report_roundtrip(tmp_path_factory, rows):
    d = tmp_path_factory.mktemp("r")
    entries = [MarginalComparison(float(i), ks, w1, (m, v, 0.1, -0.2), (m, v, 0.0, 0.0), 100 + i, 200, 0.01, 0.02, 7.0)
               for i, (ks, w1, m, v) in enumerate(rows)]
    r = MimicReport("pide", entries)
    io.save_report_json(r, d / "r.json")
    assert io.load_report_json(d / "r.json") == r
    io.save_report_csv(r, d / "r.csv")
    tab = io.load_report_csv(d / "r.csv")
    assert (d / "r.csv").read_text().splitlines()[0] == "t,ks,w1,m1,m2,m3,m4"
    np.testing.assert_array_equal(tab[:, 1], [e.ks for e in entries])
    np.testing.assert_array_equal(tab[:, 3:], [e.moments for e in entries])


def test_ensemble_binary_roundtrip(tmp_path):
    from markovproj.levy import FiniteActivity, symmetric_atoms
    from markovproj.core import PoissonDriven

    m = ItoModel(dim=1, x0=[0.5], drift=lambda t, x, a: 0.1, diffusion=lambda t, x, a: 0.3,
                 jumps=PoissonDriven(FiniteActivity(2.0, symmetric_atoms())),
                 aux_init=lambda x: np.zeros((len(x), 1)), aux_update=lambda t, dt, xp, xn, a, dw: a + xp * dt)
    e = simulate_ito(m, TimeGrid(0, 1, 10), 200, 3)
    assert len(e.jumps) > 0
    io.save_ensemble(e, tmp_path / "e.bin")
    raw = (tmp_path / "e.bin").read_bytes()
    assert raw[:8] == io.MAGIC
    back = io.load_ensemble(tmp_path / "e.bin")
    assert back == e
    e2 = PathEnsemble(grid=e.grid, seed=1, values=e.values)
    io.save_ensemble(e2, tmp_path / "f.bin")
    assert io.load_ensemble(tmp_path / "f.bin") == e2


def test_jump_marks_validation():
    with pytest.raises(ConfigError):
        JumpMarks([0, 1], [0], [1.0, 2.0])
    with pytest.raises(ConfigError):
        PathEnsemble(grid=TimeGrid(0, 1, 2), seed=0, values=np.zeros((2, 3, 1)),
                     jumps=JumpMarks([5], [0], [1.0]))
