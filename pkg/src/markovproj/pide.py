"""Forward Kolmogorov equation for the projected generator on a 1-d grid.

The generator

    L f(x) = b f'(x) + a/2 f''(x) + int [f(x+y) - f(x) - 1{|y|<=1} y f'(x)] n(dy, x)

is discretised as a rate matrix: the truncated compensator is folded into an
effective drift ``b - int_{|y|<=1} y n(dy)``, which is upwinded; the
diffusion uses central second differences; each jump node ``y_j`` moves mass
from ``x_i`` to ``x_i + y_j`` (split linearly when it falls between nodes).
Transitions of the local part that would leave the grid are removed
(reflecting edges); jump transitions that leave the grid are kept in the
diagonal and reported as lost mass.

The density evolves with the transpose of the same matrix, so discrete
duality holds by construction.  The default IMEX step treats the local
(tridiagonal) part implicitly and jumps explicitly::

    (I - dt A^T) p_{n+1} = p_n + dt J^T p_n
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.linalg import solve_banded

from .core import DensityField, ProjectedCoefficients, TimeGrid
from .errors import ConfigError, NumericalError, StepSizeError

CFL_JUMP = 0.9
MASS_TOL = 1e-3


def _uniform_grid(x):
    x = np.asarray(x, dtype=float)
    d = np.diff(x)
    if x.ndim != 1 or len(x) < 3 or np.any(d <= 0) or not np.allclose(d, d[0], rtol=1e-8, atol=0):
        raise ConfigError("x-grid must be uniform with at least 3 nodes")
    return x


def _interp_z(field_zi: np.ndarray, z: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Linear interpolation in z along the last axis, clamped at the grid ends."""
    dz = z[1] - z[0]
    s = np.clip((x - z[0]) / dz, 0.0, len(z) - 1)
    i = np.minimum(np.floor(s).astype(np.int64), len(z) - 2)
    w = s - i
    return field_zi[..., i] * (1 - w) + field_zi[..., i + 1] * w


@dataclass(frozen=True)
class LocalPart:
    """Tridiagonal rate matrix A: ``lower[i] = A[i, i-1]``, ``upper[i] = A[i, i+1]``."""

    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray

    def matrix(self) -> sparse.csr_matrix:
        m = len(self.diag)
        return sparse.diags([self.lower[1:], self.diag, self.upper[:-1]], [-1, 0, 1], shape=(m, m), format="csr")


def _local_part(b_eff, a, dx) -> LocalPart:
    up = np.maximum(b_eff, 0.0) / dx + 0.5 * a / dx ** 2
    lo = -np.minimum(b_eff, 0.0) / dx + 0.5 * a / dx ** 2
    lo = lo.copy()
    up = up.copy()
    lo[0] = 0.0
    up[-1] = 0.0
    return LocalPart(lo, -(lo + up), up)


def _jump_matrix(rate, y, x):
    """Rate matrix for jumps; ``rate[j, i]`` is the rate of a jump of size ``y[j]`` from ``x[i]``.

    Returns the sparse matrix (diagonal ``-sum(rate)``) and the per-node rate
    of jumps landing off the grid.
    """
    M, J = len(x), len(y)
    dx = x[1] - x[0]
    rows, cols, vals = [], [], []
    lost = np.zeros(M)
    total = rate.sum(axis=0)
    idx = np.arange(M)
    for j in range(J):
        r = rate[j]
        if y[j] == 0.0 or not np.any(r > 0):
            total = total - r
            continue
        s = idx + y[j] / dx
        k = np.floor(s + 1e-9).astype(np.int64)
        w = s - k
        w[np.abs(w) < 1e-9] = 0.0
        for node, share in ((k, 1.0 - w), (k + 1, w)):
            inside = (node >= 0) & (node < M) & (share > 0) & (r > 0)
            outside = ~((node >= 0) & (node < M)) & (share > 0)
            rows.append(idx[inside])
            cols.append(node[inside])
            vals.append((r * share)[inside])
            lost += np.where(outside, r * share, 0.0)
    rows.append(idx)
    cols.append(idx)
    vals.append(-total)
    mat = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(M, M))
    mat.sum_duplicates()
    return mat, lost, total


@dataclass(frozen=True)
class Generator:
    """Discretised generator at one time: ``L = A + J``."""

    x: np.ndarray
    local: LocalPart
    jump: sparse.csr_matrix | None
    lost_rate: np.ndarray
    jump_rate: np.ndarray
    b_eff: np.ndarray
    a: np.ndarray

    def matrix(self) -> sparse.csr_matrix:
        A = self.local.matrix()
        return A if self.jump is None else (A + self.jump).tocsr()

    def apply(self, f: np.ndarray) -> np.ndarray:
        """``(L f)`` at the grid nodes."""
        return self.matrix() @ f

    def apply_adjoint(self, p: np.ndarray) -> np.ndarray:
        """``L^T p``: the forward operator acting on densities."""
        return self.matrix().T @ p

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix().sum(axis=1)).ravel()


def _coefficients_on_grid(coeffs: ProjectedCoefficients, x, t, small_jump_dx=None):
    b, a, n, tl, tu = coeffs.at_time(t)
    bx = _interp_z(b, coeffs.z, x)
    ax = _interp_z(a, coeffs.z, x)
    if not coeffs.has_jumps:
        return bx, ax, None
    y = coeffs.y
    dy = coeffs.dy
    mass = _interp_z(n, coeffs.z, x) * dy             # (J, M)
    mass[0] += _interp_z(tl, coeffs.z, x)
    mass[-1] += _interp_z(tu, coeffs.z, x)
    mass[y == 0.0] = 0.0
    small = (np.abs(y) <= coeffs.jump_cutoff)
    if coeffs.jump_cutoff > 0:
        ax = ax + (y[small] ** 2) @ mass[small]
        mass[small] = 0.0
    if small_jump_dx is not None:
        beta, c = coeffs.stable_beta, coeffs.stable_c
        ax = ax + 2 * c * small_jump_dx ** (2 - beta) / (2 - beta)
    comp = (y * (np.abs(y) <= 1.0)) @ mass
    return bx - comp, ax, mass


def build_generator_matrix(coeffs: ProjectedCoefficients, x_grid, t: float, *,
                           experimental_pure_jump: bool = False) -> Generator:
    """Rate-matrix discretisation of the generator at time ``t``.

    ``coeffs`` are interpolated linearly from their (t, z) grid onto ``x_grid``
    (clamped beyond it).  Row sums vanish except for jump mass leaving the
    grid, available as ``lost_rate``.
    """
    x = _uniform_grid(x_grid)
    dx = x[1] - x[0]
    split = None
    if coeffs.stable_c > 0:
        if not experimental_pure_jump:
            raise ConfigError("a declared stable component needs experimental_pure_jump=True")
        split = dx
    b_eff, a, mass = _coefficients_on_grid(coeffs, x, t, split)
    if np.any(a < 0):
        raise NumericalError(f"negative squared diffusion at t={t:.6g}")
    local = _local_part(b_eff, a, dx)
    if mass is None:
        return Generator(x, local, None, np.zeros(len(x)), np.zeros(len(x)), b_eff, a)
    jump, lost, total = _jump_matrix(mass, coeffs.y, x)
    return Generator(x, local, jump, lost, total, b_eff, a)


def _banded_transpose(local: LocalPart, dt: float) -> np.ndarray:
    """Banded storage of ``I - dt A^T`` for ``solve_banded((1, 1), ...)``."""
    m = len(local.diag)
    ab = np.zeros((3, m))
    # (A^T)[i, i+1] = A[i+1, i] = lower[i+1]; (A^T)[i, i-1] = upper[i-1]
    ab[0, 1:] = -dt * local.lower[1:]
    ab[1] = 1.0 - dt * local.diag
    ab[2, :-1] = -dt * local.upper[:-1]
    return ab


def gaussian_density(x, mean: float, sd: float) -> np.ndarray:
    """Gaussian sampled at the nodes and normalised to unit discrete mass."""
    x = _uniform_grid(x)
    p = np.exp(-0.5 * ((x - mean) / sd) ** 2)
    return p / (p.sum() * (x[1] - x[0]))


def evolve_forward(p0, coeffs: ProjectedCoefficients, x_grid, grid: TimeGrid, *, scheme: str = "imex",
                   checkpoints=None, experimental_pure_jump: bool = False,
                   mass_tol: float = MASS_TOL) -> DensityField:
    """Evolve the density ``p0`` at ``grid.t_start`` to ``grid.t_end``.

    Parameters
    ----------
    p0 : ndarray or DensityField
        Initial density on ``x_grid``; must be non-negative with unit mass.
    coeffs : ProjectedCoefficients
    x_grid : ndarray
    grid : TimeGrid
        Time stepping of the solver.
    scheme : {'imex', 'explicit'}
    checkpoints : sequence of float, optional
        Times (on the solver grid) at which the density is stored; all steps by
        default.

    Returns
    -------
    DensityField
        With ``diagnostics`` holding the lost-mass ledger, the minimum density
        per step and the jump CFL numbers.
    """
    x = _uniform_grid(x_grid)
    dx = x[1] - x[0]
    if scheme not in ("imex", "explicit"):
        raise ConfigError(f"unknown scheme {scheme!r}")
    if isinstance(p0, DensityField):
        p = np.array(p0.p[0], dtype=float)
    else:
        p = np.array(p0, dtype=float).reshape(len(x))
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ConfigError("initial density must be finite and non-negative")
    m0 = p.sum() * dx
    if abs(m0 - 1.0) > mass_tol:
        raise ConfigError(f"initial density has mass {m0:.6g}, not 1")
    if coeffs.stable_c > 0 and not experimental_pure_jump:
        raise ConfigError("a declared stable component needs experimental_pure_jump=True")
    a_min = float(coeffs.a.min())
    if a_min <= 0 and coeffs.has_jumps and coeffs.stable_c == 0:
        warnings.warn("projected diffusion vanishes somewhere and no stable component is declared; "
                      "the non-degeneracy assumption does not hold", UserWarning)

    times = grid.times
    dt = grid.dt
    store = set(range(grid.n_steps + 1)) if checkpoints is None else {grid.index_of(t) for t in checkpoints}
    out_t, out_p = [], []
    if 0 in store:
        out_t.append(times[0])
        out_p.append(p.copy())
    lost_total = 0.0
    lost_trace, min_trace, cfl_trace, mass_trace = [], [], [], []

    cache: dict[float, Generator] = {}

    def generator_at(t):
        # jump matrices are assembled at the coefficient time nodes and blended
        k0, k1, w = coeffs.time_weights(t)
        gens = []
        for k in {k0, k1}:
            tk = float(coeffs.times[k])
            if tk not in cache:
                if len(cache) > 2:
                    cache.pop(next(iter(cache)))
                cache[tk] = build_generator_matrix(coeffs, x, tk, experimental_pure_jump=experimental_pure_jump)
            gens.append((k, cache[float(coeffs.times[k])]))
        g0 = dict(gens)[k0]
        g1 = dict(gens)[k1]
        if k0 == k1 or w == 0.0:
            return g0
        local = LocalPart(*((1 - w) * u + w * v for u, v in zip(
            (g0.local.lower, g0.local.diag, g0.local.upper), (g1.local.lower, g1.local.diag, g1.local.upper))))
        jump = None if g0.jump is None else ((1 - w) * g0.jump + w * g1.jump).tocsr()
        return Generator(x, local, jump, (1 - w) * g0.lost_rate + w * g1.lost_rate,
                         (1 - w) * g0.jump_rate + w * g1.jump_rate, (1 - w) * g0.b_eff + w * g1.b_eff,
                         (1 - w) * g0.a + w * g1.a)

    for k in range(grid.n_steps):
        t = times[k]
        gen = generator_at(t)
        lam = float(gen.jump_rate.max()) if gen.jump is not None else 0.0
        cfl = lam * dt
        cfl_trace.append(cfl)
        if cfl > CFL_JUMP:
            raise StepSizeError(f"jump CFL number {cfl:.3g} exceeds {CFL_JUMP}", CFL_JUMP / lam)
        lost = dt * float(gen.lost_rate @ p) * dx
        if scheme == "imex":
            rhs = p if gen.jump is None else p + dt * (gen.jump.T @ p)
            try:
                p_new = solve_banded((1, 1), _banded_transpose(gen.local, dt), rhs, check_finite=True)
            except (np.linalg.LinAlgError, ValueError) as exc:
                raise NumericalError(f"tridiagonal solve failed at step {k}: {exc}") from exc
        else:
            diag_rate = -gen.local.diag + (gen.jump_rate if gen.jump is not None else 0.0)
            if float(diag_rate.max()) * dt > 1.0:
                raise StepSizeError("explicit step violates positivity", 1.0 / float(diag_rate.max()))
            p_new = p + dt * gen.apply_adjoint(p)
        if not np.all(np.isfinite(p_new)):
            raise NumericalError(f"non-finite density at step {k + 1}")
        p = p_new
        lost_total += lost
        mass = p.sum() * dx
        lost_trace.append(lost_total)
        min_trace.append(float(p.min()))
        mass_trace.append(mass)
        if abs(mass - 1.0) > mass_tol:
            raise NumericalError(f"mass drift {mass - 1.0:.3g} at t={times[k + 1]:.6g} "
                                 f"(lost to jumps off the grid: {lost_total:.3g})")
        if k + 1 in store:
            out_t.append(times[k + 1])
            out_p.append(p.copy())

    diag = dict(scheme=scheme, lost_mass=lost_total, lost_mass_trace=lost_trace, min_density=min_trace,
                mass=mass_trace, cfl=cfl_trace, max_cfl=max(cfl_trace, default=0.0),
                min_a=a_min, experimental=bool(experimental_pure_jump and coeffs.stable_c > 0))
    return DensityField(x=x, times=np.array(out_t), p=np.array(out_p), diagnostics=diag)
