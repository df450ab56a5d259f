"""Experiment pipeline behind the command line: simulate, project, solve, compare.

Every stage takes the validated config dict (see :mod:`markovproj.config`)
and derives its seed from the single master seed, so a config determines
every output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import derive_seed
from .core import (AssumptionAuditConfig, DensityField, MimicReport, PathEnsemble, ProjectedCoefficients, TimeGrid)
from .diagnostics import audit_assumptions, compare_marginals, sample_moments
from .errors import ConfigError
from .models import ModelBundle, build_model
from .pide import evolve_forward, gaussian_density
from .projection import (default_z_grid, estimate_projected_coefficients, project_function_of_markov,
                         project_time_changed_levy)
from .simulate import simulate_ito, simulate_projected

DEFAULT_Y = dict(lo=-4.0, hi=4.0, n=161)


def bundle_of(cfg: dict) -> ModelBundle:
    return build_model(cfg["model"]["name"], cfg["model"]["params"])


def time_grid(cfg: dict) -> TimeGrid:
    g = cfg["grid"]
    return TimeGrid(float(g["t_start"]), float(g["t_end"]), int(g["n_steps"]))


def checkpoints(cfg: dict, grid: TimeGrid) -> list[float]:
    out = []
    for t in cfg["checkpoints"]:
        grid.index_of(t)
        out.append(float(t))
    return out


def _range(spec: dict, fallback: tuple[float, float] | None, name: str) -> np.ndarray:
    lo, hi = spec.get("lo"), spec.get("hi")
    if lo is None or hi is None:
        if fallback is None:
            raise ConfigError(f"{name}: lo and hi are required")
        lo = fallback[0] if lo is None else lo
        hi = fallback[1] if hi is None else hi
    if not hi > lo:
        raise ConfigError(f"{name}: hi must exceed lo")
    return np.linspace(float(lo), float(hi), int(spec["n"]))


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def run_source(cfg: dict, bundle: ModelBundle | None = None, *, threads: int | None = None,
               record: bool = True) -> PathEnsemble:
    bundle = bundle or bundle_of(cfg)
    return simulate_ito(bundle.model, time_grid(cfg), int(cfg["n_paths"]), derive_seed(cfg["seed"], "source"),
                        threads=threads or cfg["threads"], record=record)


def scalar_values(bundle: ModelBundle, ensemble: PathEnsemble) -> np.ndarray:
    """Projected coordinate at every (path, step), shape ``(N, K + 1)``."""
    return np.asarray(bundle.project(ensemble.values), dtype=float)


def summary_moments(bundle: ModelBundle, ensemble: PathEnsemble, times) -> list[tuple]:
    xi = scalar_values(bundle, ensemble)
    return [sample_moments(xi[:, ensemble.grid.index_of(t)]) for t in times]


def _y_grid(cfg):
    return _range({**DEFAULT_Y, **cfg["projection"].get("y_grid", {})}, None, "projection.y_grid")


def project(cfg: dict, bundle: ModelBundle, ensemble: PathEnsemble | None) -> ProjectedCoefficients:
    """Projected coefficients by the configured route."""
    pc = cfg["projection"]
    grid = time_grid(cfg)
    route = pc["route"]
    jumps = bundle.model.jumps is not None
    y = _y_grid(cfg) if jumps else None
    bound = pc["integrability_bound"]
    if route == "closed-form":
        if bundle.function_of_markov is not None:
            z = _range(pc["z_grid"], _exact_range(bundle, grid), "projection.z_grid")
            times = grid.times[1:]
            return project_function_of_markov(bundle.function_of_markov, z, times, y, integrability_bound=bound)
        tc = bundle.time_change
        if tc is not None and cfg["model"]["params"].get("clock", "linear") == "linear":
            p = cfg["model"]["params"]
            c0, c1 = float(p.get("c0", 1.0)), float(p.get("c1", 1.0))
            z = _range(pc["z_grid"], _exact_range(bundle, grid), "projection.z_grid")
            return project_time_changed_levy(tc, z, alpha=lambda t, zz: np.full(zz.shape, c0 + c1 * t),
                                             times=grid.times[:-1], y_grid=y, integrability_bound=bound)
        raise ConfigError(f"projection.route: no closed form for model {bundle.name!r}")
    if ensemble is None:
        raise ConfigError("estimation needs a source ensemble")
    if ensemble.dim != 1:
        raise ConfigError(f"projection.route: model {bundle.name!r} is multivariate; use route 'closed-form'")
    fallback = default_z_grid(ensemble, int(pc["z_grid"]["n"]))
    z = _range(pc["z_grid"], (float(fallback[0]), float(fallback[-1])), "projection.z_grid")
    if bundle.time_change is not None:
        return project_time_changed_levy(bundle.time_change, z, ensemble=ensemble, y_grid=y,
                                         bandwidth=pc["bandwidth"], n_min=pc["n_min"], integrability_bound=bound)
    return estimate_projected_coefficients(ensemble, z, y, pc["bandwidth"], pc["mode"], model=bundle.model,
                                           n_min=pc["n_min"], integrability_bound=bound)


def _exact_range(bundle: ModelBundle, grid: TimeGrid):
    if bundle.exact is None:
        return None
    d = bundle.exact(grid.t_end)
    return float(d.ppf(1e-6)), float(d.ppf(1 - 1e-6))


def _initial_point(bundle: ModelBundle) -> float:
    x0 = bundle.model.x0
    if callable(x0):
        raise ConfigError("the verification routes need a point-mass initial law")
    return float(np.asarray(bundle.project(np.asarray(x0)[None, :]))[0])


def pide_route(cfg: dict, bundle: ModelBundle, coeffs: ProjectedCoefficients, times) -> DensityField:
    """Forward equation started from the one-step Gaussian at ``t_start + dt``."""
    grid = time_grid(cfg)
    pc = cfg["pide"]
    x = _range(pc["x_grid"], (float(coeffs.z[0]), float(coeffs.z[-1])), "pide.x_grid")
    dx = x[1] - x[0]
    x0 = _initial_point(bundle)
    t1 = grid.t_start + grid.dt
    b, a, *_ = coeffs.at_time(grid.t_start)
    b0 = float(np.interp(x0, coeffs.z, b))
    a0 = float(np.interp(x0, coeffs.z, a))
    sd = max(np.sqrt(a0 * grid.dt), 2.0 * dx)
    p0 = gaussian_density(x, x0 + b0 * grid.dt, sd)
    n = int(round((grid.t_end - t1) / float(pc["dt"])))
    if n < 1:
        raise ConfigError("pide.dt is larger than the simulated horizon")
    solver_grid = TimeGrid(t1, grid.t_end, n)
    field_ = evolve_forward(p0, coeffs, x, solver_grid, scheme=pc["scheme"], checkpoints=list(times))
    field_.diagnostics.update(initial_sd=sd, initial_time=t1)
    return field_


def resimulate_route(cfg: dict, bundle: ModelBundle, coeffs: ProjectedCoefficients, *,
                     threads: int | None = None) -> PathEnsemble:
    n = int(cfg["verification"].get("n_paths", cfg["n_paths"]))
    return simulate_projected(coeffs, _initial_point(bundle), time_grid(cfg), n, derive_seed(cfg["seed"], "resimulate"),
                              threads=threads or cfg["threads"])


# ---------------------------------------------------------------------------
# mimic
# ---------------------------------------------------------------------------


@dataclass
class MimicOutcome:
    coefficients: ProjectedCoefficients
    reports: dict                       # route -> MimicReport
    agreement: list = field(default_factory=list)   # (t, ks) between routes
    l1_exact: list = field(default_factory=list)    # (t, L1) of the PIDE density vs the exact law
    density: DensityField | None = None
    failures: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        from .io import report_to_dict

        return dict(format="mimic-run", version=1, passed=self.passed, failures=list(self.failures),
                    routes={k: report_to_dict(v) for k, v in sorted(self.reports.items())},
                    route_agreement=[dict(t=t, ks=ks) for t, ks in self.agreement],
                    l1_exact=[dict(t=t, l1=v) for t, v in self.l1_exact], info=self.info)


def run_mimic(cfg: dict, *, threads: int | None = None) -> MimicOutcome:
    """Simulate the source, project it, realise the projection and compare marginals."""
    bundle = bundle_of(cfg)
    grid = time_grid(cfg)
    times = checkpoints(cfg, grid)
    route = cfg["verification"]["route"]
    closed = cfg["projection"]["route"] == "closed-form"
    source = run_source(cfg, bundle, threads=threads, record=not closed)
    xi = scalar_values(bundle, source)
    coeffs = project(cfg, bundle, None if closed else source)
    reports, agreement, l1, failures = {}, [], [], []
    tol = cfg["tolerances"]
    density = resim = None
    src = {t: xi[:, grid.index_of(t)] for t in times}
    if route in ("resimulate", "both"):
        resim = resimulate_route(cfg, bundle, coeffs, threads=threads)
        reports["resimulate"] = MimicReport("resimulate", [compare_marginals(src[t], resim.at(t), t) for t in times])
    if route in ("pide", "both"):
        density = pide_route(cfg, bundle, coeffs, times)
        reports["pide"] = MimicReport("pide", [compare_marginals(src[t], density, t) for t in times])
        if bundle.exact is not None:
            for t in times:
                d = bundle.exact(t)
                l1.append((t, float(np.sum(np.abs(density.density_at(t) - d.pdf(density.x))) * density.dx)))
    if bundle.exact is not None:
        reports["exact"] = MimicReport("exact", [compare_marginals(src[t], bundle.exact(t), t) for t in times])
    if resim is not None and density is not None:
        agreement = [(t, compare_marginals(resim.at(t), density, t).ks) for t in times]

    if "ks" in tol:
        for name in ("resimulate", "pide"):
            for e in reports.get(name, MimicReport(name, ())).entries:
                if e.ks > tol["ks"]:
                    failures.append(f"{name}: KS {e.ks:.4g} > {tol['ks']} at t={e.t:g}")
    if "route_agreement" in tol:
        for t, ks in agreement:
            if ks > tol["route_agreement"]:
                failures.append(f"routes disagree: KS {ks:.4g} > {tol['route_agreement']} at t={t:g}")
    if "l1_exact" in tol:
        for t, v in l1:
            if v > tol["l1_exact"]:
                failures.append(f"pide: L1 to exact law {v:.4g} > {tol['l1_exact']} at t={t:g}")

    info = dict(model=bundle.name, projection_route=cfg["projection"]["route"], verification_route=route,
                source_paths=int(source.n_paths), filled_cells=int(coeffs.filled.sum()))
    if resim is not None:
        info["resimulate"] = {k: int(v) for k, v in sorted(resim.info.items()) if isinstance(v, (int, np.integer))}
    if density is not None:
        info["pide"] = dict(lost_mass=float(density.diagnostics["lost_mass"]),
                            min_density=float(min(density.diagnostics["min_density"], default=0.0)),
                            max_cfl=float(density.diagnostics["max_cfl"]))
    return MimicOutcome(coeffs, reports, agreement, l1, density, failures, info)


# ---------------------------------------------------------------------------
# audit
# ---------------------------------------------------------------------------


def audit_config(cfg: dict) -> AssumptionAuditConfig:
    a = cfg["audit"]
    return AssumptionAuditConfig(k1=a["k1"], k2=a["k2"], k3=a["k3"], ellipticity=a["ellipticity"],
                                 stable_beta=a["stable_beta"], tail_radii=tuple(a["tail_radii"]),
                                 tail_tolerance=a["tail_tolerance"], lipschitz=a["lipschitz"])


def run_audit(cfg: dict, *, threads: int | None = None):
    """Audit the source model (on a small ensemble) or its estimated projection."""
    bundle = bundle_of(cfg)
    acfg = audit_config(cfg)
    sub = dict(cfg, n_paths=int(cfg["audit"]["n_paths"]))
    if cfg["audit"]["target"] == "model":
        return audit_assumptions(bundle.model, acfg, run_source(sub, bundle, threads=threads))
    closed = cfg["projection"]["route"] == "closed-form"
    ens = None if closed else run_source(sub, bundle, threads=threads)
    return audit_assumptions(project(sub, bundle, ens), acfg)
