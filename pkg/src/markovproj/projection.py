"""Projected coefficients b(t, z), a(t, z) and n(t, dy, z).

Three routes are provided:

* :func:`estimate_projected_coefficients` regresses the recorded local
  characteristics of a simulated ensemble on the pre-jump state, one time
  step at a time (no smoothing across time).
* :func:`project_function_of_markov` evaluates the conditional expectations
  for ``xi = f(Z)`` on level sets of ``f`` by adaptive quadrature
  (:func:`conditional_expectation_slice`).
* :func:`project_time_changed_levy` scales a Lévy triplet by the regressed
  (or given) mean clock rate ``alpha(t, z)``.

All outputs use the truncation ``1{|y| <= 1}`` in the drift.

Kernel regression
-----------------
Samples are linearly binned onto a fine copy of the z-grid (so every sample
spreads unit mass over two fine nodes) and the binned sums are mapped to the
z-grid by a column-normalised Gaussian kernel.  Every sample therefore
distributes exactly unit weight over the z-grid, which makes the occupation-
weighted average of any regressed field equal to the plain sample mean, and a
constant regressand is reproduced to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from .core import (CompensatorDirect, FunctionOfMarkovSpec, PathEnsemble, PoissonDriven, ProjectedCoefficients,
                   TimeChangeSpec, snap_zero, solve_level)
from .errors import ConfigError, NumericalError
from .levy import DiscreteJumpLaw, FiniteActivity, InfiniteActivity, StableTail

N_MIN = 50
SLICE_TOL = 1e-8
NULL_EVENT = 1e-300


def silverman_bandwidth(x: np.ndarray, floor: float = 0.0) -> float:
    """``1.06 sigma N^(-1/5)``, never below ``floor``."""
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return max(floor, 1.0)
    return max(floor, 1.06 * float(np.std(x)) * len(x) ** -0.2)


def default_z_grid(ensemble: PathEnsemble, n_nodes: int = 201, tail: float = 5e-4) -> np.ndarray:
    """Uniform grid covering the ``[tail, 1 - tail]`` quantiles at every step, padded by 10%."""
    v = ensemble.values[:, :, 0]
    lo = float(np.min(np.quantile(v, tail, axis=0)))
    hi = float(np.max(np.quantile(v, 1 - tail, axis=0)))
    if hi - lo < 1e-8:
        hi, lo = hi + 1.0, lo - 1.0
    pad = 0.1 * (hi - lo)
    return np.linspace(lo - pad, hi + pad, n_nodes)


class KernelSmoother:
    """Binned Nadaraya-Watson regression onto a uniform z-grid.

    Parameters
    ----------
    z : ndarray
        Uniform output grid.
    h : float
        Gaussian bandwidth.  The binning grid is refined until its spacing is
        at most ``h / 2`` (at most 16-fold).
    """

    def __init__(self, z: np.ndarray, h: float):
        if not h > 0:
            raise ConfigError("bandwidth must be positive")
        self.z = np.asarray(z, dtype=float)
        self.h = float(h)
        dz = self.z[1] - self.z[0]
        self.refine = int(min(16, max(1, math.ceil(2 * dz / h - 1e-12))))
        n_fine = (len(self.z) - 1) * self.refine + 1
        self.fine = self.z[0] + (dz / self.refine) * np.arange(n_fine)
        kern = np.exp(-0.5 * ((self.z[:, None] - self.fine[None, :]) / h) ** 2)
        self._raw = kern
        self._weights = kern / kern.sum(axis=0, keepdims=True)

    def locate(self, s: np.ndarray):
        df = self.fine[1] - self.fine[0]
        u = np.clip((np.asarray(s, dtype=float) - self.fine[0]) / df, 0.0, len(self.fine) - 1)
        i = np.minimum(np.floor(u).astype(np.int64), len(self.fine) - 2)
        return i, u - i

    def binned(self, loc, values=None) -> np.ndarray:
        """Linear-binned sums of ``values`` (``(N,)`` or ``(N, c)``); counts when ``values`` is None."""
        i, w = loc
        L = len(self.fine)
        if values is None:
            return np.bincount(i, 1 - w, L) + np.bincount(i + 1, w, L)
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            return np.bincount(i, (1 - w) * v, L) + np.bincount(i + 1, w * v, L)
        out = np.empty((L, v.shape[1]))
        for c in range(v.shape[1]):
            out[:, c] = np.bincount(i, (1 - w) * v[:, c], L) + np.bincount(i + 1, w * v[:, c], L)
        return out

    def smooth(self, binned: np.ndarray) -> np.ndarray:
        return self._weights @ binned

    def effective_counts(self, binned_counts: np.ndarray) -> np.ndarray:
        """``sum_p exp(-(z_i - s_p)^2 / 2h^2)`` from binned counts."""
        return self._raw @ binned_counts


@dataclass(frozen=True)
class RegressionStep:
    occupation: np.ndarray   # D_i: total kernel weight at z_i (sums to N)
    n_eff: np.ndarray
    mean: np.ndarray         # (I, c), NaN where occupation is 0
    var: np.ndarray          # (I, c) local variance


def regress(states: np.ndarray, targets: np.ndarray, smoother: KernelSmoother) -> RegressionStep:
    """Kernel regression of ``targets`` (``(N, c)``) on scalar ``states`` (``(N,)``)."""
    targets = np.asarray(targets, dtype=float).reshape(len(states), -1)
    loc = smoother.locate(states)
    counts = smoother.binned(loc)
    occ = smoother.smooth(counts)
    s1 = smoother.smooth(smoother.binned(loc, targets))
    s2 = smoother.smooth(smoother.binned(loc, targets ** 2))
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        mean = s1 / occ[:, None]
        var = np.maximum(s2 / occ[:, None] - mean ** 2, 0.0)
    return RegressionStep(occ, smoother.effective_counts(counts), mean, var)


def _fill_nearest(values: np.ndarray, good: np.ndarray, fallback) -> np.ndarray:
    """Replace entries where ``good`` is False by the nearest good entry along axis 0."""
    out = np.array(values, dtype=float, copy=True)
    idx = np.flatnonzero(good)
    if len(idx) == 0:
        out[...] = fallback
        return out
    pos = np.arange(len(good))
    j = np.searchsorted(idx, pos)
    left = idx[np.clip(j - 1, 0, len(idx) - 1)]
    right = idx[np.clip(j, 0, len(idx) - 1)]
    nearest = np.where(np.abs(pos - left) <= np.abs(right - pos), left, right)
    out[~good] = out[nearest[~good]]
    return out


# ---------------------------------------------------------------------------
# discretising Lévy measures on the y-grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridKernel:
    """A Lévy measure as node densities on a uniform y-grid.

    ``density[j] * dy`` is the mass carried by node ``y[j]``; ``tail_lower`` and
    ``tail_upper`` hold the mass beyond the grid.  Mass that falls in the bin
    of ``y = 0`` cannot be represented as a jump and is returned as
    ``zero_bin_var`` (its second moment), to be added to the diffusion.
    """

    density: np.ndarray
    tail_lower: float
    tail_upper: float
    zero_bin_var: float


def _bin_edges(y):
    dy = y[1] - y[0]
    return np.concatenate([y - dy / 2, [y[-1] + dy / 2]])


def _split_atoms(y, sizes, masses):
    """Split atoms linearly between neighbouring nodes (keeps mass and mean)."""
    dy = y[1] - y[0]
    dens = np.zeros(len(y))
    tl = tu = 0.0
    zero_var = 0.0
    for s, mass in zip(sizes, masses):
        u = (s - y[0]) / dy
        if u < -0.5:
            tl += mass
            continue
        if u > len(y) - 0.5:
            tu += mass
            continue
        u = min(max(u, 0.0), len(y) - 1.0)
        i = min(int(np.floor(u)), len(y) - 2)
        w = u - i
        if abs(w) < 1e-9:
            w = 0.0
        elif abs(w - 1) < 1e-9:
            i, w = i + 1, 0.0
            if i == len(y) - 1:
                i, w = len(y) - 2, 1.0
        for node, share in ((i, 1 - w), (i + 1, w)):
            if share == 0.0:
                continue
            if y[node] == 0.0:
                zero_var += share * mass * s * s
            dens[node] += share * mass / dy
    zi = np.flatnonzero(y == 0.0)
    dens[zi] = 0.0
    return GridKernel(dens, tl, tu, zero_var)


def discretize_levy(levy, y: np.ndarray) -> GridKernel:
    """Bin masses of the simulated jumps of ``levy`` on the y-grid."""
    y = snap_zero(y)
    if isinstance(levy, FiniteActivity) and isinstance(levy.law, DiscreteJumpLaw):
        if levy.dim != 1:
            raise ConfigError("y-grid kernels are scalar")
        sizes, probs = levy.law.quadrature()
        return _split_atoms(y, sizes[:, 0], levy.intensity * probs)
    if isinstance(levy, StableTail):
        stable = _discretize_density(lambda s: levy.c * np.abs(s) ** (-1.0 - levy.beta), float(levy.cutoff), y,
                                     np.inf)
        if levy.remainder is None:
            return stable
        rem = discretize_levy(levy.remainder, y)
        return GridKernel(stable.density + rem.density, stable.tail_lower + rem.tail_lower,
                          stable.tail_upper + rem.tail_upper, stable.zero_bin_var + rem.zero_bin_var)
    if isinstance(levy, InfiniteActivity):
        return _discretize_density(levy.density, float(levy.cutoff), y, float(levy.support))
    return _discretize_density(levy.density, 0.0, y, np.inf)


def _discretize_density(dens_fn, eps: float, y: np.ndarray, support: float) -> GridKernel:
    """Bin masses of a density restricted to ``eps < |s| <= support``."""
    quad = lambda f, a, b: integrate.quad(f, a, b, epsabs=1e-13, epsrel=1e-10, limit=400)[0]
    nu = lambda s: float(np.asarray(dens_fn(np.array([s])), dtype=float).reshape(-1)[0])
    edges = _bin_edges(y)
    dy = y[1] - y[0]
    masses = np.zeros(len(y))
    zero_var = 0.0
    for j in range(len(y)):
        lo, hi = max(edges[j], -support), min(edges[j + 1], support)
        pieces = []
        if lo < -eps:
            pieces.append((lo, min(hi, -eps)))
        if hi > eps:
            pieces.append((max(lo, eps), hi))
        for a_, b_ in pieces:
            if b_ <= a_:
                continue
            cuts = [a_, *[p for p in (-1.0, 1.0) if a_ < p < b_], b_]
            for c0, c1 in zip(cuts[:-1], cuts[1:]):
                masses[j] += quad(nu, c0, c1)
                if y[j] == 0.0:
                    zero_var += quad(lambda s: s * s * nu(s), c0, c1)
    tl = quad(nu, -support, min(edges[0], -eps)) if edges[0] > -support else 0.0
    tu = quad(nu, max(edges[-1], eps), support) if edges[-1] < support else 0.0
    dens = masses / dy
    dens[y == 0.0] = 0.0
    return GridKernel(dens, max(tl, 0.0), max(tu, 0.0), zero_var)


def _eq2_drift_shift(y, dens, tl, tu, dy):
    """int_{|u| > 1} u j(du) for node densities (tails lumped at the edges)."""
    big = np.abs(y) > 1.0
    out = (dens * big) @ y * dy
    if abs(y[0]) > 1.0:
        out = out + tl * y[0]
    if abs(y[-1]) > 1.0:
        out = out + tu * y[-1]
    return out


# ---------------------------------------------------------------------------
# nonparametric estimation from an ensemble
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimationDetails:
    bandwidth: np.ndarray          # (K,)
    occupation: np.ndarray         # (K, I)
    n_eff: np.ndarray              # (K, I)
    raw_b: np.ndarray              # (K, I), NaN where unoccupied
    raw_a: np.ndarray
    se_b: np.ndarray
    se_a: np.ndarray
    mean_drift: np.ndarray         # (K,) plain sample means of the recorded drift
    mean_diffusion_sq: np.ndarray


def _kernel_mode_density(model, t, x, aux, y, kernel_cache):
    """Per-path compensator density at the y nodes for kernel-mode regression."""
    spec = model.jumps
    n = x.shape[0]
    if isinstance(spec, CompensatorDirect):
        return np.asarray(spec.density(t, x, aux, y), dtype=float).reshape(n, len(y)), None
    if spec.amplitude is None:
        scale = np.ones(n) if spec.intensity_scale is None else np.broadcast_to(
            np.asarray(spec.intensity_scale(t, x, aux), dtype=float).reshape(-1), (n,))
        return None, scale
    if spec.inverse is None or spec.jacobian is None:
        raise ConfigError("kernel mode with a jump amplitude needs inverse and jacobian oracles")
    scale = np.ones(n) if spec.intensity_scale is None else np.broadcast_to(
        np.asarray(spec.intensity_scale(t, x, aux), dtype=float).reshape(-1), (n,))
    J = len(y)
    xr = np.repeat(x, J, axis=0)
    ar = None if aux is None else np.repeat(aux, J, axis=0)
    yr = np.tile(y, n)[:, None]
    z = np.asarray(spec.inverse(t, xr, ar, yr), dtype=float).reshape(n * J, -1)
    jac = np.abs(np.asarray(spec.jacobian(t, xr, ar, z), dtype=float).reshape(n * J))
    ok = np.all(np.isfinite(z), axis=1) & (jac > 0) & (yr[:, 0] != 0)
    dens = np.zeros(n * J)
    dens[ok] = spec.levy.density(z[ok, 0]) / jac[ok]
    return (dens.reshape(n, J) * scale[:, None]), None


def estimate_projected_coefficients(ensemble: PathEnsemble, z_grid: np.ndarray | None = None,
                                    y_grid: np.ndarray | None = None, bandwidth: float | None = None,
                                    mode: str = "histogram", *, model=None, n_min: int = N_MIN,
                                    integrability_bound: float | None = None, chunk: int = 50_000,
                                    return_details: bool = False):
    """Nadaraya-Watson estimate of the projected coefficients at every step.

    Parameters
    ----------
    ensemble : PathEnsemble
        Scalar ensemble with recorded drift and squared diffusion.
    z_grid, y_grid : ndarray, optional
        Uniform state and jump-size grids.  ``y_grid`` is required when the
        ensemble contains jumps.
    bandwidth : float, optional
        Fixed bandwidth.  By default Silverman's rule is applied to the states
        at each step, floored at the z-grid spacing.
    mode : {'histogram', 'kernel'}
        ``'histogram'`` counts realised jump marks per (z, y) cell and divides
        by occupation time; ``'kernel'`` regresses the per-path compensator
        density and needs ``model``.
    n_min : int
        Cells with fewer effective samples are filled from the nearest
        populated cell and flagged in ``filled``.
    """
    if ensemble.dim != 1:
        raise ConfigError("projection targets a scalar process; reduce the ensemble to one coordinate first")
    if ensemble.drift is None or ensemble.diffusion_sq is None:
        raise ConfigError("ensemble lacks recorded characteristics (simulate with record=True)")
    if mode not in ("histogram", "kernel"):
        raise ConfigError(f"unknown estimator mode {mode!r}")
    if bandwidth is not None and not bandwidth > 0:
        raise ConfigError("bandwidth must be positive")
    z = default_z_grid(ensemble) if z_grid is None else np.asarray(z_grid, dtype=float)
    dz = z[1] - z[0]
    has_jumps = len(ensemble.jumps) > 0 or (mode == "kernel" and model is not None and model.jumps is not None)
    if has_jumps and y_grid is None:
        raise ConfigError("a y-grid is required for ensembles with jumps")
    if mode == "kernel" and has_jumps and model is None:
        raise ConfigError("kernel mode needs the source model")
    y = None if y_grid is None else snap_zero(y_grid)
    grid = ensemble.grid
    K, I = grid.n_steps, len(z)
    J = 0 if y is None else len(y)
    dt = grid.dt
    dy = None if y is None else y[1] - y[0]
    times = grid.times[:-1]

    b = np.empty((K, I))
    a = np.empty((K, I))
    n = np.zeros((K, max(J, 3), I)) if has_jumps else None
    tl = np.zeros((K, I))
    tu = np.zeros((K, I))
    filled = np.zeros((K, I), bool)
    det = dict(bandwidth=np.empty(K), occupation=np.empty((K, I)), n_eff=np.empty((K, I)),
               raw_b=np.empty((K, I)), raw_a=np.empty((K, I)), se_b=np.empty((K, I)), se_a=np.empty((K, I)),
               mean_drift=np.empty(K), mean_diffusion_sq=np.empty(K))

    marks = ensemble.jumps
    order = np.argsort(marks.step, kind="stable")
    bounds = np.searchsorted(marks.step[order], np.arange(K + 1))
    base_kernel = None
    if mode == "kernel" and has_jumps and isinstance(model.jumps, PoissonDriven) and model.jumps.amplitude is None:
        base_kernel = discretize_levy(model.jumps.levy, y)

    for k in range(K):
        s = ensemble.values[:, k, 0]
        h = bandwidth if bandwidth is not None else silverman_bandwidth(s, floor=dz)
        sm = KernelSmoother(z, h)
        beta = ensemble.drift[:, k, 0]
        a2 = ensemble.diffusion_sq[:, k, 0, 0]
        reg = regress(s, np.column_stack([beta, a2]), sm)
        occ = reg.occupation
        good = reg.n_eff >= n_min
        det["bandwidth"][k] = h
        det["occupation"][k] = occ
        det["n_eff"][k] = reg.n_eff
        det["raw_b"][k] = reg.mean[:, 0]
        det["raw_a"][k] = reg.mean[:, 1]
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            det["se_b"][k] = np.sqrt(reg.var[:, 0] / reg.n_eff)
            det["se_a"][k] = np.sqrt(reg.var[:, 1] / reg.n_eff)
        det["mean_drift"][k] = beta.mean()
        det["mean_diffusion_sq"][k] = a2.mean()
        bk, ak = reg.mean[:, 0], reg.mean[:, 1]
        extra_a = np.zeros(I)

        if has_jumps and mode == "histogram":
            sel = order[bounds[k]:bounds[k + 1]]
            jpath = marks.path[sel]
            size = marks.size[sel, 0]
            js = np.rint((size - y[0]) / dy).astype(np.int64)
            cols = np.where(js < 0, J, np.where(js >= J, J + 1, js))
            zero = (cols < J) & (y[np.minimum(cols, J - 1)] == 0.0)
            loc = sm.locate(ensemble.values[jpath, k, 0])
            onehot = np.zeros((len(sel), J + 3))
            onehot[np.arange(len(sel)), cols] = 1.0
            onehot[zero, cols[zero]] = 0.0
            onehot[:, J + 2] = np.where(zero, size * size, 0.0)
            hist = sm.smooth(sm.binned(loc, onehot)) if len(sel) else np.zeros((I, J + 3))
            with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
                rate = hist / (occ[:, None] * dt)
            n[k] = (rate[:, :J] / dy).T
            tl[k] = rate[:, J]
            tu[k] = rate[:, J + 1]
            extra_a = rate[:, J + 2]
        elif has_jumps and mode == "kernel":
            if base_kernel is not None:
                scale = model.jumps.intensity_scale
                if scale is None:
                    alpha = np.ones(I)
                else:
                    aux = None if ensemble.aux is None else ensemble.aux[:, k, :]
                    sc = np.broadcast_to(np.asarray(scale(times[k], ensemble.values[:, k, :], aux),
                                                    dtype=float).reshape(-1), (ensemble.n_paths,))
                    alpha = regress(s, sc, sm).mean[:, 0]
                n[k] = base_kernel.density[:, None] * alpha[None, :]
                tl[k] = base_kernel.tail_lower * alpha
                tu[k] = base_kernel.tail_upper * alpha
                extra_a = base_kernel.zero_bin_var * alpha
            else:
                acc = np.zeros((len(sm.fine), J))
                for c0 in range(0, ensemble.n_paths, chunk):
                    sl = slice(c0, min(c0 + chunk, ensemble.n_paths))
                    aux = None if ensemble.aux is None else ensemble.aux[sl, k, :]
                    dens, _ = _kernel_mode_density(model, times[k], ensemble.values[sl, k, :], aux, y, None)
                    acc += sm.binned(sm.locate(s[sl]), dens)
                with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
                    n[k] = (sm.smooth(acc) / occ[:, None]).T
                n[k][y == 0.0] = 0.0

        ak = ak + extra_a
        fb_b, fb_a = beta.mean(), a2.mean()
        b[k] = _fill_nearest(bk, good, fb_b)
        a[k] = _fill_nearest(ak, good, fb_a)
        if has_jumps:
            for arr in (tl, tu):
                arr[k] = _fill_nearest(arr[k], good, 0.0)
            n[k] = _fill_nearest(n[k].T, good, 0.0).T
        filled[k] = ~good
        if np.any(a[k] < 0) or (has_jumps and np.any(n[k] < 0)):
            raise NumericalError(f"negative regressed coefficient at step {k}")

    meta = dict(mode=mode, n_min=int(n_min), bandwidth=[float(v) for v in det["bandwidth"]],
                n_paths=int(ensemble.n_paths), seed=int(ensemble.seed))
    coeffs = ProjectedCoefficients(times=times, z=z, b=b, a=a, y=y if has_jumps else None,
                                   n=n if has_jumps else None, tail_lower=tl, tail_upper=tu, filled=filled,
                                   integrability_bound=integrability_bound, meta=meta)
    if return_details:
        return coeffs, EstimationDetails(**det)
    return coeffs


# ---------------------------------------------------------------------------
# level-set slices
# ---------------------------------------------------------------------------


def _quad_vec(fn, lo, hi, tol):
    val, err = integrate.quad_vec(fn, lo, hi, epsabs=tol * 1e-3, epsrel=tol, limit=2000)
    return np.asarray(val)


def _slice_integral(integrand: Callable, dim: int, bounds, tol: float):
    """Integrate ``integrand(zp)`` (``zp`` of shape ``(d - 1,)``) over R^(d-1)."""
    if dim == 2:
        lo, hi = bounds[0]
        return _quad_vec(lambda s: integrand(np.array([s])), lo, hi, tol)
    if dim == 3:
        (lo1, hi1), (lo2, hi2) = bounds[0], bounds[1]

        def inner(s1):
            return _quad_vec(lambda s2: integrand(np.array([s1, s2])), lo2, hi2, tol)

        return _quad_vec(inner, lo1, hi1, tol)
    raise ConfigError("slice quadrature is implemented for d in {2, 3}")


def conditional_expectation_slice(q: Callable, f: Callable, dfdz: Callable, g: Callable, w: float, *, dim: int,
                                  inverse: Callable | None = None, bounds=None, tol: float = SLICE_TOL,
                                  bracket: float = 50.0):
    """``E[g(Z) | f(Z) = w]`` by integrating over the level set of ``f``.

    The level set is parametrised by the first ``d - 1`` coordinates with
    ``z_d = F(z', w)``; the weight is ``q(z', F) / |df/dz_d(z', F)|`` and the
    result is normalised by the same integral with ``g = 1``.

    Parameters
    ----------
    q, f, dfdz, g : callable
        Functions of a point ``z`` of shape ``(d,)``; ``dfdz`` returns the
        partial derivative in the last coordinate; ``g`` may be vector-valued.
    w : float
    dim : int
        Dimension d of Z (1, 2 or 3).
    inverse : callable, optional
        ``F(z', w)``; found by bracketed root search when omitted.
    bounds : sequence of (lo, hi), optional
        Integration limits of ``z'`` (default: the whole line).
    """
    if dim == 1:
        if inverse is not None:
            z = np.array([float(inverse(np.zeros(0), w))])
        else:
            spec_f = lambda p: np.array([f(row) for row in np.atleast_2d(p)])
            z = np.array([_solve_scalar(spec_f, np.zeros(0), w, bracket)])
        return np.asarray(g(z), dtype=float)[()]
    bounds = bounds or [(-np.inf, np.inf)] * (dim - 1)
    fv = lambda p: np.array([f(row) for row in np.atleast_2d(p)])
    seen = set()

    def integrand(zp):
        zd = float(inverse(zp, w)) if inverse is not None else _solve_scalar(fv, zp, w, bracket)
        z = np.concatenate([zp, [zd]])
        deriv = float(dfdz(z))
        if deriv == 0.0:
            raise NumericalError("df/dz_d vanishes on the level set")
        seen.add(np.sign(deriv))
        weight = float(q(z)) / abs(deriv)
        gv = np.atleast_1d(np.asarray(g(z), dtype=float))
        return np.concatenate([gv * weight, [weight]])

    val = _slice_integral(integrand, dim, bounds, tol)
    if len(seen) > 1:
        raise NumericalError("df/dz_d changes sign on the level set")
    den = val[-1]
    if not den > NULL_EVENT:
        raise NumericalError(f"conditioning on a null event: density of f(Z) at w={w} is {den:.3g}")
    out = val[:-1] / den
    return out[0] if out.shape == (1,) else out


def _solve_scalar(fv, zp, w, bracket):
    return solve_level(lambda zd: float(fv(np.concatenate([zp, [zd]])[None, :])[0]), zp, w, bracket)


# ---------------------------------------------------------------------------
# xi = f(Z) for a Markov Z
# ---------------------------------------------------------------------------


def _local_characteristics_of_f(spec: FunctionOfMarkovSpec, t: float, z: np.ndarray, y: np.ndarray | None):
    """Per-point drift (full compensation), squared diffusion and jump bins of f(Z).

    Returns an array ``(n, 2 + J + 3)``: drift, a, J bin masses, lower tail,
    upper tail, second moment of increments falling in the zero bin.
    """
    model = spec.markov
    npts, d = z.shape
    grad = np.asarray(spec.grad(z), dtype=float).reshape(npts, d)
    hess = np.asarray(spec.hess(z), dtype=float).reshape(npts, d, d)
    bz = np.broadcast_to(np.asarray(model.drift(t, z, None), dtype=float), (npts, d))
    sig = model.eval_diffusion(t, z, None)
    cov = np.einsum("pij,pkj->pik", sig, sig)
    drift = np.einsum("pi,pi->p", grad, bz) + 0.5 * np.einsum("pij,pij->p", hess, cov)
    gs = np.einsum("pi,pij->pj", grad, sig)
    a = np.einsum("pj,pj->p", gs, gs)
    J = 0 if y is None else len(y)
    out = np.zeros((npts, 2 + J + 3))
    jumps = model.jumps
    if jumps is not None:
        if not isinstance(jumps, PoissonDriven) or not isinstance(jumps.levy, FiniteActivity):
            raise ConfigError("function-of-Markov projection supports finite-activity Poisson-driven jumps")
        if jumps.intensity_scale is not None:
            raise ConfigError("a random jump clock makes Z non-Markov in the given coordinates")
        nodes, wts = jumps.levy.quadrature(256) if not isinstance(jumps.levy.law, DiscreteJumpLaw) \
            else jumps.levy.quadrature()
        Q = len(wts)
        zr = np.repeat(z, Q, axis=0)
        nr = np.tile(nodes, (npts, 1))
        psi = nr if jumps.amplitude is None else np.asarray(jumps.amplitude(t, zr, None, nr), dtype=float)
        psi = psi.reshape(npts * Q, d)
        df = spec.f(zr + psi) - spec.f(zr)
        lin = np.einsum("pi,pi->p", np.repeat(grad, Q, axis=0), psi)
        wq = np.tile(wts, npts)
        drift = drift + np.bincount(np.repeat(np.arange(npts), Q), wq * (df - lin), npts)
        if y is not None:
            dy = y[1] - y[0]
            js = np.rint((df - y[0]) / dy).astype(np.int64)
            cols = np.where(js < 0, J, np.where(js >= J, J + 1, js))
            zero = (cols < J) & (y[np.minimum(cols, J - 1)] == 0.0)
            rows = np.repeat(np.arange(npts), Q)
            mass = np.where(zero, 0.0, wq)
            np.add.at(out, (rows, 2 + cols), mass)
            np.add.at(out, (rows, np.full_like(rows, 2 + J + 2)), np.where(zero, wq * df * df, 0.0))
    out[:, 0] = drift
    out[:, 1] = a
    return out


def project_function_of_markov(spec: FunctionOfMarkovSpec, z_grid: np.ndarray, times, y_grid: np.ndarray | None = None,
                               *, tol: float = SLICE_TOL, bounds=None,
                               integrability_bound: float | None = None) -> ProjectedCoefficients:
    """Projected coefficients of ``xi = f(Z)`` by level-set quadrature.

    For each time ``t`` in ``times`` (where ``q_t`` must be a proper density)
    and each ``w`` on ``z_grid`` the conditional expectations of the drift,
    the squared diffusion and the jump-size distribution of ``f(Z)`` given
    ``f(Z) = w`` are computed with the normalised slice formula.  The jump
    distribution is differenced on the bin edges of ``y_grid``.  The drift is
    returned with the ``1{|u| <= 1}`` truncation.
    """
    w_grid = np.asarray(z_grid, dtype=float)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    d = spec.dim
    y = None if y_grid is None else snap_zero(y_grid)
    has_jumps = spec.markov.jumps is not None
    if has_jumps and y is None:
        raise ConfigError("a y-grid is required when Z jumps")
    J = 0 if y is None else len(y)
    I = len(w_grid)
    width = 2 + J + 3
    b = np.empty((len(times), I))
    a = np.empty((len(times), I))
    n = np.zeros((len(times), J, I)) if has_jumps else None
    tl = np.zeros((len(times), I))
    tu = np.zeros((len(times), I))
    for k, t in enumerate(times):
        if d == 1:
            zd = spec.solve_last(np.zeros((I, 0)), w_grid)
            pts = zd[:, None]
            spec.audit_last_derivative(pts)
            vals = _local_characteristics_of_f(spec, t, pts, y)
        else:
            bnds = bounds or [(-np.inf, np.inf)] * (d - 1)
            signs = set()

            def integrand(zp):
                zpr = np.broadcast_to(zp, (I, d - 1))
                zd = spec.solve_last(zpr, w_grid)
                pts = np.column_stack([zpr, zd])
                deriv = np.asarray(spec.grad(pts), dtype=float)[:, -1]
                if np.any(deriv == 0.0):
                    raise NumericalError("df/dz_d vanishes on a level set")
                signs.update(np.unique(np.sign(deriv)).tolist())
                weight = np.asarray(spec.density(t, pts), dtype=float) / np.abs(deriv)
                chars = _local_characteristics_of_f(spec, t, pts, y)
                return np.column_stack([chars * weight[:, None], weight]).ravel()

            raw = _slice_integral(integrand, d, bnds, tol).reshape(I, width + 1)
            if len(signs) > 1:
                raise NumericalError("df/dz_d changes sign inside the domain")
            den = raw[:, -1]
            if np.any(den <= NULL_EVENT):
                bad = w_grid[np.argmin(den)]
                raise NumericalError(f"conditioning on a null event at w={bad:.6g}")
            vals = raw[:, :-1] / den[:, None]
        b_full = vals[:, 0]
        a[k] = vals[:, 1] + vals[:, 2 + J + 2]
        if has_jumps:
            dy = y[1] - y[0]
            n[k] = (vals[:, 2:2 + J] / dy).T
            tl[k] = vals[:, 2 + J]
            tu[k] = vals[:, 2 + J + 1]
            b[k] = b_full + _eq2_drift_shift(y, n[k].T, tl[k], tu[k], dy)
        else:
            b[k] = b_full
    return ProjectedCoefficients(times=times, z=w_grid, b=b, a=np.maximum(a, 0.0), y=y, n=n, tail_lower=tl,
                                 tail_upper=tu, integrability_bound=integrability_bound,
                                 meta=dict(route="function-of-markov", tol=tol))


# ---------------------------------------------------------------------------
# time-changed Lévy processes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClockRegression:
    alpha: np.ndarray    # (K, I)
    se: np.ndarray
    n_eff: np.ndarray
    filled: np.ndarray


def regress_clock(spec: TimeChangeSpec, ensemble: PathEnsemble, z_grid: np.ndarray, bandwidth: float | None = None,
                  n_min: int = N_MIN) -> ClockRegression:
    """``alpha(t_k, z) = E[theta_{t_k} | xi_{t_k-} = z]`` at every step of the ensemble."""
    z = np.asarray(z_grid, dtype=float)
    theta = spec.rates_from_ensemble(ensemble)
    if np.any(theta <= 0) or not np.all(np.isfinite(theta)):
        raise NumericalError("the clock rate must be positive along all sampled paths")
    K, I = ensemble.grid.n_steps, len(z)
    alpha = np.empty((K, I))
    se = np.empty((K, I))
    neff = np.empty((K, I))
    filled = np.zeros((K, I), bool)
    for k in range(K):
        s = ensemble.values[:, k, 0]
        h = bandwidth if bandwidth is not None else silverman_bandwidth(s, floor=z[1] - z[0])
        reg = regress(s, theta[:, k], KernelSmoother(z, h))
        good = reg.n_eff >= n_min
        alpha[k] = _fill_nearest(reg.mean[:, 0], good, theta[:, k].mean())
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            se[k] = np.sqrt(reg.var[:, 0] / reg.n_eff)
        neff[k] = reg.n_eff
        filled[k] = ~good
    return ClockRegression(alpha, se, neff, filled)


def project_time_changed_levy(spec: TimeChangeSpec, z_grid: np.ndarray, *, ensemble: PathEnsemble | None = None,
                              alpha: Callable | None = None, times=None, y_grid: np.ndarray | None = None,
                              bandwidth: float | None = None, n_min: int = N_MIN,
                              integrability_bound: float | None = None) -> ProjectedCoefficients:
    """Triplet ``(b alpha, sigma^2 alpha, alpha nu)`` with one adjustment field ``alpha``.

    ``alpha`` is regressed from ``ensemble`` (simulated from
    ``spec.to_ito_model()``) or given in closed form as ``alpha(t, z)``
    evaluated on ``times``.
    """
    z = np.asarray(z_grid, dtype=float)
    filled = None
    if ensemble is not None:
        reg = regress_clock(spec, ensemble, z, bandwidth, n_min)
        al = reg.alpha
        filled = reg.filled
        times = ensemble.grid.times[:-1]
    elif alpha is not None:
        if times is None:
            raise ConfigError("closed-form alpha needs evaluation times")
        times = np.atleast_1d(np.asarray(times, dtype=float))
        al = np.array([np.broadcast_to(np.asarray(alpha(t, z), dtype=float), z.shape) for t in times])
    else:
        raise ConfigError("provide an ensemble or a closed-form alpha")
    if np.any(al <= 0) or not np.all(np.isfinite(al)):
        raise NumericalError("adjustment factor alpha must be positive")
    K, I = al.shape
    b = spec.b * al
    a = spec.sigma2 * al
    n = tl = tu = None
    y = None
    if spec.levy is not None:
        if y_grid is None:
            raise ConfigError("a y-grid is required for a Lévy measure")
        y = snap_zero(y_grid)
        gk = discretize_levy(spec.levy, y)
        n = gk.density[None, :, None] * al[:, None, :]
        tl = gk.tail_lower * al
        tu = gk.tail_upper * al
        a = a + (spec.levy.small_jump_variance() + gk.zero_bin_var) * al
    return ProjectedCoefficients(times=times, z=z, b=b, a=a, y=y, n=n, tail_lower=tl, tail_upper=tu,
                                 filled=filled, integrability_bound=integrability_bound,
                                 meta=dict(route="time-changed-levy"))
