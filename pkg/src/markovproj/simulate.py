"""Euler-Maruyama simulation of the source semimartingale and of its projection.

Both simulators advance every path with

    x_{k+1} = x_k + beta_k dt + delta_k sqrt(dt) G + (jumps in the step) - compensator_k dt

where all coefficients are frozen at the left limit ``x_k``.  Paths are
processed in fixed-size chunks, optionally on a thread pool; because every
draw comes from the counter-based streams in :mod:`markovproj.rng`, the
output does not depend on the chunking or on the number of threads.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import rng as streams
from .core import (CompensatorDirect, ItoModel, JumpMarks, PathEnsemble, PoissonDriven,
                   ProjectedCoefficients, TimeGrid)
from .errors import ConfigError, NumericalError, ThinningWarning

CHUNK = 16384
_MAX_JUMPS = 10_000


def _run_chunks(fn: Callable, n_paths: int, threads: int, chunk: int):
    starts = list(range(0, n_paths, chunk))
    ranges = [np.arange(s, min(s + chunk, n_paths), dtype=np.int64) for s in starts]
    if threads <= 1 or len(ranges) == 1:
        return [fn(r) for r in ranges]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, ranges))


def _check_finite(arr, what, paths, step):
    if arr.size and not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr.reshape(arr.shape[0], -1)))[0, 0]
        raise NumericalError(f"non-finite {what} at path {int(paths[bad])}, step {step}")


def _merge_marks(parts, dim):
    if not parts:
        return JumpMarks.empty(dim)
    path = np.concatenate([p[0] for p in parts])
    step = np.concatenate([p[1] for p in parts])
    order_in = np.concatenate([p[2] for p in parts])
    size = np.concatenate([p[3] for p in parts]).reshape(-1, dim)
    order = np.lexsort((order_in, path, step))
    return JumpMarks(path[order], step[order], size[order])


def _assemble(grid, seed, results, dim, record, info):
    values = np.concatenate([r["values"] for r in results])
    drift = diff2 = aux = None
    if record:
        drift = np.concatenate([r["drift"] for r in results])
        diff2 = np.concatenate([r["diff2"] for r in results])
    if results[0].get("aux") is not None:
        aux = np.concatenate([r["aux"] for r in results])
    marks = _merge_marks([m for r in results for m in r["marks"]], dim)
    for r in results:
        for k, v in r.get("counters", {}).items():
            info[k] = info.get(k, 0) + v
    return PathEnsemble(grid=grid, seed=seed, values=values, drift=drift, diffusion_sq=diff2,
                        jumps=marks, aux=aux, info=info)


# ---------------------------------------------------------------------------
# source model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _JumpContext:
    """Per-run constants of a Poisson-driven jump part."""

    levy: object
    rate: float
    small_var: float
    comp_identity: np.ndarray | None
    large_identity: np.ndarray | None
    nodes: np.ndarray | None
    weights: np.ndarray | None


def _poisson_context(spec: PoissonDriven) -> _JumpContext:
    levy = spec.levy
    comp = large = nodes = weights = None
    if spec.amplitude is None:
        comp = levy.compensator_mean()
        large = levy.simulated_mean() - comp
    else:
        nodes, weights = levy.quadrature(512) if hasattr(levy, "quadrature") else (None, None)
    return _JumpContext(levy, levy.simulated_intensity(), levy.small_jump_variance(), comp, large, nodes, weights)


def _amplitude_moments(spec, ctx, t, x, aux):
    """Per-path int_{|psi|<=1} psi nu and int_{|psi|>1} psi nu over simulated jumps."""
    n, d = x.shape
    q = len(ctx.weights)
    xr = np.repeat(x, q, axis=0)
    ar = None if aux is None else np.repeat(aux, q, axis=0)
    yr = np.tile(ctx.nodes, (n, 1))
    psi = np.asarray(spec.amplitude(t, xr, ar, yr), dtype=float).reshape(n, q, d)
    small = (np.linalg.norm(psi, axis=2) <= 1.0).astype(float)
    w = ctx.weights[None, :, None]
    comp = np.sum(w * small[:, :, None] * psi, axis=1)
    large = np.sum(w * (1.0 - small[:, :, None]) * psi, axis=1)
    return comp, large


def _amplitude_jacobian0(spec, t, x, aux, dim_levy):
    n, d = x.shape
    if spec.jacobian is not None:
        zero = np.zeros((n, dim_levy))
        return np.asarray(spec.jacobian(t, x, aux, zero), dtype=float).reshape(n, d, dim_levy)
    h = 1e-6
    cols = []
    for i in range(dim_levy):
        e = np.zeros((n, dim_levy))
        e[:, i] = h
        cols.append((spec.amplitude(t, x, aux, e) - spec.amplitude(t, x, aux, -e)) / (2 * h))
    return np.stack(cols, axis=2).reshape(n, d, dim_levy)


def _check_amplitude(model: ItoModel):
    spec = model.jumps
    if not isinstance(spec, PoissonDriven) or spec.amplitude is None:
        return
    rng = streams.CounterRNG(0)
    x = model.initial_states(rng, np.arange(4))
    aux = model.aux_init(x) if model.aux_init is not None else None
    psi0 = np.asarray(spec.amplitude(0.0, x, aux, np.zeros((4, spec.levy.dim))), dtype=float)
    if np.max(np.abs(psi0)) > 1e-12:
        raise ConfigError("jump amplitude must vanish at y = 0")


def _simulate_ito_chunk(model: ItoModel, grid: TimeGrid, rng, paths, record: bool):
    n, d, m = len(paths), model.dim, model.noise_dim
    K, dt = grid.n_steps, grid.dt
    sqdt = np.sqrt(dt)
    x = model.initial_states(rng, paths)
    _check_finite(x, "initial state", paths, 0)
    aux = model.aux_init(x) if model.aux_init is not None else None
    values = np.empty((n, K + 1, d))
    values[:, 0] = x
    aux_rec = None
    if aux is not None:
        aux = np.asarray(aux, dtype=float).reshape(n, -1)
        aux_rec = np.empty((n, K + 1, aux.shape[1]))
        aux_rec[:, 0] = aux
    drift_rec = np.empty((n, K, d)) if record else None
    diff2_rec = np.empty((n, K, d, d)) if record else None
    marks = []
    spec = model.jumps
    ctx = _poisson_context(spec) if isinstance(spec, PoissonDriven) else None
    if isinstance(spec, CompensatorDirect):
        y_nodes = spec.y_grid
        dy = y_nodes[1] - y_nodes[0]
        y_mask = y_nodes != 0.0
        y_small = (np.abs(y_nodes) <= 1.0) & y_mask

    for k in range(K):
        t = grid.t_start + k * dt
        beta = np.array(model.eval_drift(t, x, aux), dtype=float)
        delta = model.eval_diffusion(t, x, aux)
        _check_finite(beta, "drift", paths, k)
        _check_finite(delta, "diffusion", paths, k)
        dw = rng.normals(paths, k, streams.BROWNIAN, m) * sqdt
        incr = beta * dt + np.einsum("pij,pj->pi", delta, dw)
        diff2 = np.einsum("pij,pkj->pik", delta, delta) if record else None
        beta_rec = beta

        if ctx is not None:
            scale = np.ones(n) if spec.intensity_scale is None else np.broadcast_to(
                np.asarray(spec.intensity_scale(t, x, aux), dtype=float).reshape(-1), (n,))
            _check_finite(scale, "jump intensity scale", paths, k)
            if np.any(scale < 0):
                raise NumericalError(f"negative jump intensity scale at step {k}")
            if spec.amplitude is None:
                comp, large = ctx.comp_identity[None, :], ctx.large_identity[None, :]
            else:
                comp, large = _amplitude_moments(spec, ctx, t, x, aux)
            if spec.compensation == "small":
                incr -= scale[:, None] * comp * dt
            else:
                incr -= scale[:, None] * (comp + large) * dt
                beta_rec = beta - scale[:, None] * large
            if ctx.small_var > 0:
                g = rng.normals(paths, k, streams.SMALL_JUMP, ctx.levy.dim)
                s = np.sqrt(scale * ctx.small_var * dt)[:, None]
                if spec.amplitude is None:
                    incr += s * g
                    if record:
                        diff2 = diff2 + (scale * ctx.small_var)[:, None, None] * np.eye(d)[None]
                else:
                    jac = _amplitude_jacobian0(spec, t, x, aux, ctx.levy.dim)
                    incr += np.einsum("pij,pj->pi", jac, s * g)
                    if record:
                        diff2 = diff2 + (scale * ctx.small_var)[:, None, None] * np.einsum("pij,pkj->pik", jac, jac)
            if ctx.rate > 0:
                u = rng.uniforms(paths, k, streams.JUMP_COUNT, 1)[:, 0]
                counts = streams.poisson_inverse(u, ctx.rate * scale * dt)
                nu = ctx.levy.n_uniforms
                blocks = (nu + 1) // 2
                for j in range(int(counts.max(initial=0))):
                    if j >= _MAX_JUMPS:
                        raise NumericalError(f"more than {_MAX_JUMPS} jumps in one step; reduce dt")
                    sel = np.nonzero(counts > j)[0]
                    u_mark = rng.uniforms(paths[sel], k, streams.JUMP_MARK, nu, first_block=j * blocks)
                    ymark = ctx.levy.sample(u_mark)
                    if spec.amplitude is None:
                        size = ymark.reshape(len(sel), d)
                    else:
                        a_sel = None if aux is None else aux[sel]
                        size = np.asarray(spec.amplitude(t, x[sel], a_sel, ymark), dtype=float).reshape(len(sel), d)
                    _check_finite(size, "jump size", paths[sel], k)
                    np.add.at(incr, sel, size)
                    marks.append((paths[sel], np.full(len(sel), k), np.full(len(sel), j), size))

        elif isinstance(spec, CompensatorDirect):
            dens = np.asarray(spec.density(t, x, aux, y_nodes), dtype=float).reshape(n, len(y_nodes))
            _check_finite(dens, "compensator density", paths, k)
            if np.any(dens < 0):
                raise NumericalError(f"negative compensator density at step {k}")
            mass = dens * dy * y_mask[None, :]
            incr -= (mass * y_small[None, :]) @ y_nodes[:, None] * dt
            cum = np.cumsum(mass, axis=1)
            lam = cum[:, -1]
            u = rng.uniforms(paths, k, streams.JUMP_COUNT, 1)[:, 0]
            counts = streams.poisson_inverse(u, lam * dt)
            for j in range(int(counts.max(initial=0))):
                sel = np.nonzero(counts > j)[0]
                um = rng.uniforms(paths[sel], k, streams.JUMP_MARK, 1, first_block=j)[:, 0]
                target = um * lam[sel]
                idx = np.minimum((cum[sel] < target[:, None]).sum(axis=1), len(y_nodes) - 1)
                size = y_nodes[idx][:, None]
                np.add.at(incr, sel, size)
                marks.append((paths[sel], np.full(len(sel), k), np.full(len(sel), j), size))

        x_new = x + incr
        _check_finite(x_new, "state", paths, k + 1)
        if aux is not None:
            dwa = rng.normals(paths, k, streams.AUX_NOISE, model.aux_noise_dim) * sqdt if model.aux_noise_dim else None
            aux = np.asarray(model.aux_update(t, dt, x, x_new, aux, dwa), dtype=float).reshape(n, -1)
            _check_finite(aux, "auxiliary state", paths, k + 1)
            aux_rec[:, k + 1] = aux
        if record:
            drift_rec[:, k] = beta_rec
            diff2_rec[:, k] = diff2
        x = x_new
        values[:, k + 1] = x
    return dict(values=values, drift=drift_rec, diff2=diff2_rec, aux=aux_rec, marks=marks)


def simulate_ito(model: ItoModel, grid: TimeGrid, n_paths: int, seed: int, *, threads: int = 1,
                 record: bool = True, chunk: int = CHUNK) -> PathEnsemble:
    """Simulate ``n_paths`` paths of the source semimartingale.

    Parameters
    ----------
    model : ItoModel
    grid : TimeGrid
    n_paths : int
    seed : int
        Master seed in ``[0, 2**64)``.
    threads : int
        Worker threads; the output is identical for any value.
    record : bool
        Keep the per-step drift and squared diffusion (needed for projection).
    """
    if n_paths < 1:
        raise ConfigError("n_paths must be >= 1")
    if n_paths >= 2**32:
        raise ConfigError("n_paths must fit in 32 bits")
    _check_amplitude(model)
    rng = streams.CounterRNG(seed)
    results = _run_chunks(lambda p: _simulate_ito_chunk(model, grid, rng, p, record), n_paths, threads, chunk)
    info = dict(source=model.name)
    return _assemble(grid, seed, results, model.dim, record, info)


# ---------------------------------------------------------------------------
# projected Markov SDE
# ---------------------------------------------------------------------------


def _locate(z_grid, x):
    """Cell index and linear weight of ``x`` on a uniform grid, clamped at the edges."""
    z0, dz, I = z_grid[0], z_grid[1] - z_grid[0], len(z_grid)
    s = (x - z0) / dz
    outside = (s < 0) | (s > I - 1)
    s = np.clip(s, 0.0, I - 1)
    i = np.minimum(np.floor(s).astype(np.int64), I - 2)
    return i, s - i, outside


@dataclass(frozen=True)
class _KernelSlice:
    """Jump kernel at one time, as atoms on the y-grid per z node."""

    cum: np.ndarray      # (I, J) cumulative mass of simulated atoms
    lam: np.ndarray      # (I,)
    comp: np.ndarray     # (I,) int_{cutoff<|y|<=1} y n
    small_var: np.ndarray  # (I,) second moment of atoms below the cutoff
    tail_lo: np.ndarray  # (I,)
    tail_hi: np.ndarray


def kernel_atoms(coeffs: ProjectedCoefficients, n, tl, tu) -> _KernelSlice:
    y = coeffs.y
    mass = n * coeffs.dy          # (J, I)
    mass = mass.copy()
    mass[0] += tl
    mass[-1] += tu
    nonzero = y != 0.0
    simulated = nonzero & (np.abs(y) > coeffs.jump_cutoff)
    small = nonzero & ~simulated
    m_sim = (mass * simulated[:, None]).T    # (I, J)
    comp = m_sim @ (y * (np.abs(y) <= 1.0))
    small_var = (mass * small[:, None]).T @ (y * y)
    cum = np.cumsum(m_sim, axis=1)
    return _KernelSlice(cum, cum[:, -1].copy(), comp, small_var, tl, tu)


def simulate_projected(coeffs: ProjectedCoefficients, x0, grid: TimeGrid, n_paths: int, seed: int, *,
                       threads: int = 1, record: bool = False, x0_uniforms: int = 1,
                       chunk: int = CHUNK) -> PathEnsemble:
    """Simulate the Markov SDE driven by projected coefficients.

    ``x0`` is a real number or a sampler ``u -> (N,)`` of the initial law.
    Coefficients are interpolated linearly in ``z`` (clamped beyond the grid,
    with the number of excursions reported in ``info``) and in time.  Jumps
    are simulated by thinning at the dominating rate ``max_z Lambda(t, z)``;
    kernel mass beyond the y-grid is drawn at the grid edge and counted.
    """
    if n_paths < 1:
        raise ConfigError("n_paths must be >= 1")
    rng = streams.CounterRNG(seed)
    z = coeffs.z
    K, dt = grid.n_steps, grid.dt
    jumps = coeffs.has_jumps
    slices = []
    warned = False
    for k in range(K):
        t = grid.t_start + k * dt
        b, a, n, tl, tu = coeffs.at_time(t)
        if np.any(a < 0):
            raise NumericalError(f"negative interpolated a at t={t:.6g}")
        ks = kernel_atoms(coeffs, n, tl, tu) if jumps else None
        lam_max = float(ks.lam.max()) if jumps else 0.0
        if lam_max * dt > 0.5 and not warned:
            warnings.warn(f"Lambda * dt = {lam_max * dt:.3g} > 0.5; thinning may be inaccurate", ThinningWarning)
            warned = True
        slices.append((b, a, ks, lam_max))

    def run(paths):
        m = len(paths)
        if callable(x0):
            u = rng.uniforms(paths, 0, streams.INIT, x0_uniforms)
            x = np.asarray(x0(u), dtype=float).reshape(m)
        else:
            x = np.full(m, float(x0))
        values = np.empty((m, K + 1, 1))
        values[:, 0, 0] = x
        drift_rec = np.empty((m, K, 1)) if record else None
        diff2_rec = np.empty((m, K, 1, 1)) if record else None
        marks = []
        counters = dict(excursions=0, tail_draws=0, candidate_jumps=0, accepted_jumps=0)
        for k in range(K):
            b, a, ks, lam_max = slices[k]
            i, w, outside = _locate(z, x)
            counters["excursions"] += int(outside.sum())
            bx = (1 - w) * b[i] + w * b[i + 1]
            ax = (1 - w) * a[i] + w * a[i + 1]
            if ks is not None:
                bx = bx - ((1 - w) * ks.comp[i] + w * ks.comp[i + 1])
                ax = ax + (1 - w) * ks.small_var[i] + w * ks.small_var[i + 1]
            g = rng.normals(paths, k, streams.BROWNIAN, 1)[:, 0]
            incr = bx * dt + np.sqrt(ax * dt) * g
            if lam_max > 0:
                u = rng.uniforms(paths, k, streams.JUMP_COUNT, 1)[:, 0]
                counts = streams.poisson_inverse(u, np.full(m, lam_max * dt))
                lam_x = (1 - w) * ks.lam[i] + w * ks.lam[i + 1]
                for j in range(int(counts.max(initial=0))):
                    sel = np.nonzero(counts > j)[0]
                    counters["candidate_jumps"] += len(sel)
                    acc = rng.uniforms(paths[sel], k, streams.THIN_ACCEPT, 1, first_block=j)[:, 0]
                    sel = sel[acc * lam_max < lam_x[sel]]
                    if not len(sel):
                        continue
                    counters["accepted_jumps"] += len(sel)
                    um = rng.uniforms(paths[sel], k, streams.THIN_MARK, 1, first_block=j)[:, 0]
                    ii, ww = i[sel], w[sel]
                    cum = (1 - ww)[:, None] * ks.cum[ii] + ww[:, None] * ks.cum[ii + 1]
                    target = um * lam_x[sel]
                    idx = np.minimum((cum < target[:, None]).sum(axis=1), len(coeffs.y) - 1)
                    counters["tail_draws"] += int(np.sum((idx == 0) & ((1 - ww) * ks.tail_lo[ii] + ww * ks.tail_lo[ii + 1] > 0)))
                    counters["tail_draws"] += int(np.sum((idx == len(coeffs.y) - 1)
                                                         & ((1 - ww) * ks.tail_hi[ii] + ww * ks.tail_hi[ii + 1] > 0)))
                    size = coeffs.y[idx]
                    np.add.at(incr, sel, size)
                    marks.append((paths[sel], np.full(len(sel), k), np.full(len(sel), j), size[:, None]))
            if record:
                drift_rec[:, k, 0] = (1 - w) * b[i] + w * b[i + 1]
                diff2_rec[:, k, 0, 0] = ax
            x = x + incr
            _check_finite(x, "state", paths, k + 1)
            values[:, k + 1, 0] = x
        return dict(values=values, drift=drift_rec, diff2=diff2_rec, aux=None, marks=marks, counters=counters)

    results = _run_chunks(run, n_paths, threads, chunk)
    return _assemble(grid, seed, results, 1, record, dict(source="projected"))
