"""Marginal comparisons, the martingale check and the assumption audit."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .core import (AssumptionAuditConfig, CompensatorDirect, DensityField, ItoModel, MarginalComparison, MimicReport,
                   PathEnsemble, PoissonDriven, ProjectedCoefficients)
from .errors import ConfigError, NumericalError
from .levy import FiniteActivity, StableTail
from .rng import CounterRNG

MIN_SAMPLE = 100
AUDIT_SCHEMA_VERSION = 1


def _clean(x, name="sample") -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if np.any(np.isnan(x)):
        raise NumericalError(f"{name} contains NaN")
    return x


def ks_two_sample(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic ``sup |F_a - F_b|``."""
    a = np.sort(_clean(a))
    b = np.sort(_clean(b))
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / len(a)
    fb = np.searchsorted(b, pts, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


def ks_against_cdf(a, cdf) -> float:
    """One-sample KS statistic against a CDF callable."""
    a = np.sort(_clean(a))
    n = len(a)
    f = np.asarray(cdf(a), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))


def wasserstein1(a, b) -> float:
    """W1 between two empirical laws, ``int |F_a - F_b| dx``.

    For equal sizes this is the mean absolute difference of the sorted samples.
    """
    a = np.sort(_clean(a))
    b = np.sort(_clean(b))
    if len(a) == len(b):
        return float(np.mean(np.abs(a - b)))
    pts = np.sort(np.concatenate([a, b]))
    fa = np.searchsorted(a, pts[:-1], side="right") / len(a)
    fb = np.searchsorted(b, pts[:-1], side="right") / len(b)
    return float(np.sum(np.abs(fa - fb) * np.diff(pts)))


def wasserstein1_against_quantile(a, quantile) -> float:
    """W1 against a law given by its quantile function (midpoint rule in u)."""
    a = np.sort(_clean(a))
    n = len(a)
    u = (np.arange(n) + 0.5) / n
    return float(np.mean(np.abs(a - np.asarray(quantile(u), dtype=float))))


def sample_moments(x) -> tuple:
    """Mean, variance, skewness and excess kurtosis."""
    x = _clean(x)
    m = x.mean()
    c = x - m
    v = np.mean(c ** 2)
    if v == 0:
        return (float(m), 0.0, 0.0, 0.0)
    return (float(m), float(v), float(np.mean(c ** 3) / v ** 1.5), float(np.mean(c ** 4) / v ** 2 - 3.0))


def density_moments(x, p) -> tuple:
    x = np.asarray(x, dtype=float)
    w = np.asarray(p, dtype=float)
    w = w / w.sum()
    m = float(w @ x)
    c = x - m
    v = float(w @ c ** 2)
    if v == 0:
        return (m, 0.0, 0.0, 0.0)
    return (m, v, float(w @ c ** 3) / v ** 1.5, float(w @ c ** 4) / v ** 2 - 3.0)


def _density_quantile(field: DensityField, t: float):
    x = field.x
    c = field.cdf(t)
    keep = np.concatenate([[True], np.diff(c) > 0])
    cc, xx = c[keep], x[keep]
    return lambda u: np.interp(u, cc, xx)


def compare_marginals(sample, reference, t: float) -> MarginalComparison:
    """KS, W1 and moments of ``sample`` against a sample, a DensityField or a frozen distribution.

    Parameters
    ----------
    sample : array_like
        States at time ``t``.
    reference : array_like, DensityField, or object with ``cdf``/``ppf``/``stats``
        A scipy frozen distribution works as a closed-form reference.
    t : float
    """
    a = _clean(sample)
    if len(a) < MIN_SAMPLE:
        raise ConfigError(f"need at least {MIN_SAMPLE} points, got {len(a)}")
    m_a = sample_moments(a)
    se_a = float(np.sqrt(m_a[1] / len(a)))
    if isinstance(reference, DensityField):
        cdf = lambda pts: reference.cdf(t, pts)
        ks = ks_against_cdf(a, cdf)
        w1 = wasserstein1_against_quantile(a, _density_quantile(reference, t))
        m_r = density_moments(reference.x, reference.density_at(t))
        n_r, se_r, scale = 0, 0.0, float(np.sqrt(len(a)))
    elif hasattr(reference, "cdf") and hasattr(reference, "ppf"):
        ks = ks_against_cdf(a, reference.cdf)
        w1 = wasserstein1_against_quantile(a, reference.ppf)
        mean, var, skew, kurt = (float(v) for v in reference.stats(moments="mvsk"))
        m_r = (mean, var, skew, kurt)
        n_r, se_r, scale = 0, 0.0, float(np.sqrt(len(a)))
    else:
        b = _clean(reference, "reference sample")
        if len(b) < MIN_SAMPLE:
            raise ConfigError(f"need at least {MIN_SAMPLE} reference points, got {len(b)}")
        ks = ks_two_sample(a, b)
        w1 = wasserstein1(a, b)
        m_r = sample_moments(b)
        n_r = len(b)
        se_r = float(np.sqrt(m_r[1] / len(b)))
        scale = float(np.sqrt(len(a) * len(b) / (len(a) + len(b))))
    return MarginalComparison(t=float(t), ks=ks, w1=w1, moments=m_a, reference_moments=m_r, n=len(a),
                              n_reference=n_r, se_mean=se_a, se_mean_reference=se_r, ks_scale=scale)


def mimic_report(route: str, source: PathEnsemble, reference, checkpoints) -> MimicReport:
    """Compare the source marginals with a reference ensemble or density at each checkpoint."""
    entries = []
    for t in checkpoints:
        ref = reference.at(t) if isinstance(reference, PathEnsemble) else reference
        entries.append(compare_marginals(source.at(t), ref, t))
    return MimicReport(route=route, entries=entries)


# ---------------------------------------------------------------------------
# martingale preservation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MartingaleCheck:
    t: float
    mean: float
    initial_mean: float
    stderr: float
    z: float
    passed: bool


@dataclass(frozen=True)
class MartingaleReport:
    checks: tuple
    threshold: float = 3.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def check_martingale_preservation(ensemble: PathEnsemble, checkpoints, threshold: float = 3.0,
                                  component: int = 0) -> MartingaleReport:
    """``|mean(X_t) - mean(X_0)| <= threshold * stderr`` at each checkpoint.

    The standard error is that of the per-path increment ``X_t - X_0``.
    """
    x0 = ensemble.values[:, 0, component]
    checks = []
    for t in checkpoints:
        xt = ensemble.values[:, ensemble.grid.index_of(t), component]
        d = _clean(xt - x0, "increments")
        mean = float(d.mean())
        se = float(d.std(ddof=1) / np.sqrt(len(d))) if len(d) > 1 else 0.0
        if se == 0.0:
            z = 0.0 if mean == 0.0 else float("inf")
        else:
            z = mean / se
        checks.append(MartingaleCheck(float(t), float(xt.mean()), float(x0.mean()), se, float(z),
                                      bool(abs(z) <= threshold)))
    return MartingaleReport(tuple(checks), threshold)


# ---------------------------------------------------------------------------
# assumption audit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AuditCheck:
    name: str
    assumption: str
    passed: bool | None
    measured: dict
    threshold: dict
    note: str = ""


@dataclass(frozen=True)
class AuditReport:
    target: str
    checks: tuple
    version: int = AUDIT_SCHEMA_VERSION

    @property
    def passed(self) -> bool:
        return all(c.passed is not False for c in self.checks)

    def check(self, name: str) -> AuditCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return dict(version=self.version, target=self.target, passed=self.passed,
                    checks=[asdict(c) for c in self.checks])


def _levy_of(model: ItoModel):
    return model.jumps.levy if isinstance(model.jumps, PoissonDriven) else None


def _model_jump_stats(model: ItoModel, ensemble: PathEnsemble | None, radii):
    """Sup over sampled histories of int (1 ^ y^2) m and of the tail masses m(|y| >= R)."""
    spec = model.jumps
    if spec is None:
        return 0.0, [0.0] * len(radii)
    if isinstance(spec, PoissonDriven):
        levy = spec.levy
        scale = 1.0
        if spec.intensity_scale is not None:
            if ensemble is None:
                raise ConfigError("auditing a random jump clock needs an ensemble")
            scale = 0.0
            for k, t in enumerate(ensemble.grid.times[:-1]):
                aux = None if ensemble.aux is None else ensemble.aux[:, k, :]
                s = np.asarray(spec.intensity_scale(t, ensemble.values[:, k, :], aux), dtype=float)
                scale = max(scale, float(np.max(s)))
        if spec.amplitude is None:
            integ = levy.integrability()
            tails = [levy.tail_mass(r) for r in radii]
            return scale * integ, [scale * v for v in tails]
        if ensemble is None:
            raise ConfigError("auditing a state-dependent jump amplitude needs an ensemble")
        nodes, w = levy.quadrature(256) if not isinstance(levy, FiniteActivity) else levy.quadrature()
        integ, tails = 0.0, np.zeros(len(radii))
        idx = np.linspace(0, ensemble.n_paths - 1, min(ensemble.n_paths, 256)).astype(int)
        for k, t in enumerate(ensemble.grid.times[:-1]):
            x = ensemble.values[idx, k, :]
            aux = None if ensemble.aux is None else ensemble.aux[idx, k, :]
            q = len(w)
            psi = np.asarray(spec.amplitude(t, np.repeat(x, q, 0), None if aux is None else np.repeat(aux, q, 0),
                                            np.tile(nodes, (len(idx), 1))), dtype=float).reshape(len(idx), q, -1)
            norm = np.linalg.norm(psi, axis=2)
            integ = max(integ, float(np.max(np.minimum(1.0, norm ** 2) @ w)))
            for r_i, r in enumerate(radii):
                tails[r_i] = max(tails[r_i], float(np.max((norm >= r) @ w)))
        return scale * integ, list(scale * tails)
    if isinstance(spec, CompensatorDirect):
        if ensemble is None:
            raise ConfigError("auditing a compensator density needs an ensemble")
        y = spec.y_grid
        dy = y[1] - y[0]
        integ, tails = 0.0, np.zeros(len(radii))
        for k, t in enumerate(ensemble.grid.times[:-1]):
            aux = None if ensemble.aux is None else ensemble.aux[:, k, :]
            dens = np.asarray(spec.density(t, ensemble.values[:, k, :], aux, y), dtype=float)
            integ = max(integ, float(np.max(dens @ np.minimum(1.0, y ** 2) * dy)))
            for r_i, r in enumerate(radii):
                tails[r_i] = max(tails[r_i], float(np.max(dens @ (np.abs(y) >= r) * dy)))
        return integ, list(tails)
    raise ConfigError("unknown jump specification")


def _tail_check(tails, radii, cfg, assumption):
    tails = [float(v) for v in tails]
    decaying = all(b <= a * (1 + 1e-12) + 1e-300 for a, b in zip(tails[:-1], tails[1:]))
    passed = decaying and tails[-1] <= cfg.tail_tolerance
    return AuditCheck("tail-decay", assumption, bool(passed),
                      dict(radii=list(radii), tail_mass=tails),
                      dict(last_radius_tail=cfg.tail_tolerance),
                      "sup of the jump mass beyond each radius; must decay along the schedule")


def _continuity_check(coeffs: ProjectedCoefficients, cfg):
    dz = coeffs.dz
    ok = ~(coeffs.filled[:, 1:] | coeffs.filled[:, :-1])
    lb = np.abs(np.diff(coeffs.b, axis=1)) / dz
    la = np.abs(np.diff(coeffs.a, axis=1)) / dz
    lip_b = float(lb[ok].max()) if np.any(ok) else 0.0
    lip_a = float(la[ok].max()) if np.any(ok) else 0.0
    passed = None if cfg.lipschitz is None else bool(max(lip_b, lip_a) <= cfg.lipschitz)
    return AuditCheck("continuity", "Assumption 2", passed, dict(lipschitz_b=lip_b, lipschitz_a=lip_a),
                      dict(lipschitz=cfg.lipschitz),
                      "heuristic: discrete Lipschitz surrogate across neighbouring populated z-cells; "
                      "continuity cannot be verified from finitely many samples")


def audit_assumptions(target, config: AssumptionAuditConfig, ensemble: PathEnsemble | None = None) -> AuditReport:
    """Numerically audit the boundedness, integrability, tail and non-degeneracy assumptions.

    ``target`` is the source :class:`ItoModel` (the H-assumptions, measured on
    ``ensemble`` and on the jump specification) or a
    :class:`ProjectedCoefficients` (Assumptions 1-3 on the grid).  The audit
    never raises on a failed check; it reports it.
    """
    cfg = config
    radii = cfg.tail_radii
    checks = []
    if isinstance(target, ProjectedCoefficients):
        c = target
        integ = c.integrability()
        total = np.abs(c.b) + np.abs(c.a) + integ
        checks.append(AuditCheck("boundedness", "Assumption 1", bool(total.max() <= cfg.k1),
                                 dict(sup_b=float(np.abs(c.b).max()), sup_a=float(c.a.max()),
                                      sup_integrability=float(integ.max()), sup_total=float(total.max())),
                                 dict(k1=cfg.k1)))
        if c.has_jumps:
            y = c.y
            mass = c.n * c.dy
            tails = []
            for r in radii:
                t = np.einsum("j,kji->ki", (np.abs(y) >= r).astype(float), mass)
                t = t + c.tail_lower + c.tail_upper
                tails.append(float(t.max()))
        else:
            tails = [0.0] * len(radii)
        checks.append(_tail_check(tails, radii, cfg, "Assumption 1"))
        a_min = float(c.a.min())
        if a_min >= cfg.ellipticity:
            nd = AuditCheck("non-degeneracy", "Assumption 3", True, dict(min_a=a_min, case="(i)"),
                            dict(ellipticity=cfg.ellipticity))
        elif c.stable_c > 0 and 0 < c.stable_beta < 2 and float(c.a.max()) == 0.0:
            nd = AuditCheck("non-degeneracy", "Assumption 3", True,
                            dict(min_a=a_min, case="(ii)", stable_c=c.stable_c, stable_beta=c.stable_beta),
                            dict(ellipticity=cfg.ellipticity))
        else:
            nd = AuditCheck("non-degeneracy", "Assumption 3", False, dict(min_a=a_min, stable_component=False),
                            dict(ellipticity=cfg.ellipticity),
                            "Assumption 3 fails: a is below the ellipticity floor and no stable component "
                            "with zero diffusion is declared")
        checks.append(nd)
        checks.append(_continuity_check(c, cfg))
        return AuditReport("projected-coefficients", tuple(checks))

    if not isinstance(target, ItoModel):
        raise ConfigError("audit target must be an ItoModel or ProjectedCoefficients")
    model = target
    # H1: bounded drift and diffusion
    if ensemble is not None and ensemble.drift is not None:
        sup_b = float(np.max(np.linalg.norm(ensemble.drift, axis=2)))
        tr = np.einsum("pkii->pk", ensemble.diffusion_sq)
        sup_d = float(np.sqrt(np.max(tr)))
        source = "ensemble"
    else:
        sup_b = float(model.bounds.get("drift", np.nan))
        sup_d = float(model.bounds.get("diffusion", np.nan))
        source = "declared"
    if np.isnan(sup_b) or np.isnan(sup_d):
        h1 = AuditCheck("boundedness", "H1", False, dict(sup_drift=sup_b, sup_diffusion=sup_d, source=source),
                        dict(k1=cfg.k1), "no ensemble and no declared bounds")
    else:
        for key, val in (("drift", sup_b), ("diffusion", sup_d)):
            if key in model.bounds and val > model.bounds[key] * (1 + 1e-12):
                source += f"; sampled {key} exceeds declared bound {model.bounds[key]}"
        h1 = AuditCheck("boundedness", "H1", bool(sup_b <= cfg.k1 and sup_d <= cfg.k1),
                        dict(sup_drift=sup_b, sup_diffusion=sup_d, source=source), dict(k1=cfg.k1))
    checks.append(h1)
    # H2: integrability and tails
    integ, tails = _model_jump_stats(model, ensemble, radii)
    checks.append(AuditCheck("integrability", "H2", bool(integ <= cfg.k2), dict(sup_integrability=float(integ)),
                             dict(k2=cfg.k2)))
    checks.append(_tail_check(tails, radii, cfg, "H2"))
    # H3: non-degeneracy
    levy = _levy_of(model)
    if ensemble is not None and ensemble.diffusion_sq is not None:
        eig = np.linalg.eigvalsh(ensemble.diffusion_sq.reshape(-1, model.dim, model.dim))
        min_eig = float(eig.min())
        max_diff = float(eig.max())
    else:
        x = model.initial_states(CounterRNG(0), np.arange(1))
        aux = model.aux_init(x) if model.aux_init is not None else None
        d = model.eval_diffusion(0.0, x, aux)
        eig = np.linalg.eigvalsh(np.einsum("pij,pkj->pik", d, d))
        min_eig = float(eig.min())
        max_diff = float(eig.max())
    if min_eig >= cfg.ellipticity:
        checks.append(AuditCheck("non-degeneracy", "H3 / Assumption 3", True, dict(min_eigenvalue=min_eig, case="(i)"),
                                 dict(ellipticity=cfg.ellipticity)))
    elif isinstance(levy, StableTail) and levy.c > 0 and max_diff == 0.0:
        k3 = levy.remainder_beta_moment()
        ok = k3 <= cfg.k3 and abs(levy.beta - cfg.stable_beta) < 1e-12
        checks.append(AuditCheck("non-degeneracy", "H3 / Assumption 3", bool(ok),
                                 dict(case="(ii)", stable_beta=levy.beta, stable_c=levy.c, remainder_beta_moment=k3),
                                 dict(k3=cfg.k3, stable_beta=cfg.stable_beta),
                                 "stable component declared; the simulator replaces its small jumps by a "
                                 "Gaussian, which strictly violates case (ii)"))
    else:
        checks.append(AuditCheck("non-degeneracy", "H3 / Assumption 3", False,
                                 dict(min_eigenvalue=min_eig, stable_component=False),
                                 dict(ellipticity=cfg.ellipticity),
                                 "Assumption 3 fails: diffusion below the ellipticity floor and no stable "
                                 "component declared"))
    return AuditReport(model.name, tuple(checks))
