"""Domain types shared by the simulators, the projector and the PIDE solver.

All containers are frozen dataclasses whose arrays are made read-only on
construction, so instances can be handed between threads freely.

Model oracles are vectorised over paths: ``x`` has shape ``(N, d)``, the
auxiliary accumulators ``aux`` have shape ``(N, k)`` (or are ``None``), and
oracles return arrays with a leading path axis.  Scalars and arrays that
broadcast to the expected shape are accepted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, NumericalError
from .levy import FiniteActivity, InfiniteActivity, StableTail

MASS_TOL = 1e-3
NEGATIVITY_TOL = 1e-8


def _frozen(arr, dtype=float):
    if arr is None:
        return None
    a = np.asarray(arr, dtype=dtype)
    if a.flags.writeable:
        a = a.copy() if a.base is not None and not a.flags.owndata else a
        a.setflags(write=False)
    return a


def snap_zero(y: np.ndarray) -> np.ndarray:
    """Set grid nodes within rounding of 0 or +-1 to those values exactly.

    The jump truncation ``1{|y| <= 1}`` and the no-op node ``y = 0`` are
    decided by exact comparisons, so nodes meant to sit on them must do so.
    """
    y = np.array(y, dtype=float)
    if len(y) > 1:
        tol = 1e-9 * abs(y[1] - y[0])
        for v in (-1.0, 0.0, 1.0):
            y[np.abs(y - v) < tol] = v
    return y


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if not (np.isfinite(self.t_start) and np.isfinite(self.t_end)):
            raise ConfigError("time grid bounds must be finite")
        if not self.t_end > self.t_start:
            raise ConfigError("t_end must exceed t_start")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ConfigError("n_steps must be a positive integer")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n_steps + 1)

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        """Index of the grid point equal to ``t`` (within ``tol * dt``)."""
        k = int(round((t - self.t_start) / self.dt))
        if k < 0 or k > self.n_steps or abs(self.t_start + k * self.dt - t) > tol * self.dt + 1e-12:
            raise ConfigError(f"t={t} is not a point of the time grid")
        return k


# ---------------------------------------------------------------------------
# source models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PoissonDriven:
    """Jumps ``psi(t, history, y)`` driven by a Poisson measure with intensity ``nu``.

    ``amplitude=None`` means the identity map.  ``intensity_scale`` multiplies
    the rate of the Poisson measure path by path (a random clock on the jumps).
    ``compensation='small'`` compensates jumps with ``|psi| <= 1`` only;
    ``'all'`` compensates every jump.
    """

    levy: FiniteActivity | InfiniteActivity | StableTail
    amplitude: Callable | None = None
    inverse: Callable | None = None
    jacobian: Callable | None = None
    intensity_scale: Callable | None = None
    compensation: str = "small"

    def __post_init__(self):
        if self.compensation not in ("small", "all"):
            raise ConfigError(f"compensation must be 'small' or 'all', got {self.compensation!r}")


@dataclass(frozen=True)
class CompensatorDirect:
    """Jumps given directly by a compensator density ``m(t, history, y)`` on a y-grid."""

    density: Callable
    y_grid: np.ndarray

    def __post_init__(self):
        y = snap_zero(self.y_grid)
        dy = np.diff(y)
        if y.ndim != 1 or len(y) < 3 or not np.allclose(dy, dy[0], rtol=1e-9, atol=0):
            raise ConfigError("compensator y-grid must be uniform with at least 3 nodes")
        object.__setattr__(self, "y_grid", _frozen(y))


@dataclass(frozen=True)
class ItoModel:
    """Source semimartingale: drift, diffusion and jump oracles along a path history.

    The history seen by the oracles is the left-limit state plus auxiliary
    accumulators maintained by ``aux_update`` (e.g. a running average).
    ``x0`` is either a point in R^d or a sampler ``u -> (N, d)`` consuming
    ``x0_uniforms`` uniforms per path.
    """

    dim: int
    x0: np.ndarray | Callable
    drift: Callable
    diffusion: Callable
    noise_dim: int | None = None
    jumps: PoissonDriven | CompensatorDirect | None = None
    aux_init: Callable | None = None
    aux_update: Callable | None = None
    aux_noise_dim: int = 0
    x0_uniforms: int = 0
    bounds: dict = field(default_factory=dict)
    name: str = "model"

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError("dimension must be >= 1")
        if self.noise_dim is None:
            object.__setattr__(self, "noise_dim", self.dim)
        if not callable(self.x0):
            x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
            if x0.shape != (self.dim,):
                raise ConfigError(f"x0 must have shape ({self.dim},)")
            object.__setattr__(self, "x0", _frozen(x0))
        elif self.x0_uniforms < 1:
            raise ConfigError("a sampled initial law needs x0_uniforms >= 1")
        if (self.aux_init is None) != (self.aux_update is None):
            raise ConfigError("aux_init and aux_update must be given together")
        for key, val in self.bounds.items():
            if not np.isfinite(val):
                raise ConfigError(f"declared bound {key} must be finite")
        if isinstance(self.jumps, PoissonDriven) and self.jumps.levy.dim != self.dim and self.jumps.amplitude is None:
            raise ConfigError("identity jump amplitude needs a Lévy measure of the state dimension")

    def initial_states(self, rng, paths) -> np.ndarray:
        from . import rng as streams

        n = len(paths)
        if callable(self.x0):
            u = rng.uniforms(paths, 0, streams.INIT, self.x0_uniforms)
            return np.asarray(self.x0(u), dtype=float).reshape(n, self.dim)
        return np.broadcast_to(self.x0, (n, self.dim)).copy()

    def eval_drift(self, t, x, aux) -> np.ndarray:
        out = np.asarray(self.drift(t, x, aux), dtype=float)
        if self.dim == 1 and out.ndim == 1:
            out = out[:, None]
        return np.broadcast_to(out, x.shape)

    def eval_diffusion(self, t, x, aux) -> np.ndarray:
        n = x.shape[0]
        out = np.asarray(self.diffusion(t, x, aux), dtype=float)
        if self.dim == 1 and self.noise_dim == 1 and out.ndim <= 1:
            out = np.broadcast_to(out.reshape(-1), (n,))[:, None, None]
        return np.broadcast_to(out, (n, self.dim, self.noise_dim))


# ---------------------------------------------------------------------------
# simulated ensembles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JumpMarks:
    """Flat record of realised jumps: path index, step index and size in state space."""

    path: np.ndarray
    step: np.ndarray
    size: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "path", _frozen(self.path, np.int64))
        object.__setattr__(self, "step", _frozen(self.step, np.int64))
        size = np.asarray(self.size, dtype=float)
        if size.ndim == 1:
            size = size[:, None]
        object.__setattr__(self, "size", _frozen(size))
        if not (len(self.path) == len(self.step) == len(self.size)):
            raise ConfigError("jump-mark arrays must have equal length")

    def __len__(self):
        return len(self.path)

    @classmethod
    def empty(cls, dim: int) -> "JumpMarks":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, dim)))

    def __eq__(self, other):
        return (isinstance(other, JumpMarks) and np.array_equal(self.path, other.path)
                and np.array_equal(self.step, other.step) and np.array_equal(self.size, other.size))


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """N simulated paths with their recorded local characteristics.

    ``values[p, k]`` is the state at ``t_k``; ``drift[p, k]`` and
    ``diffusion_sq[p, k]`` are the characteristics used on ``[t_k, t_{k+1})``,
    evaluated at the left limit ``values[p, k]``.  ``diffusion_sq`` already
    contains the variance of any Gaussian small-jump substitute.
    """

    grid: TimeGrid
    seed: int
    values: np.ndarray
    drift: np.ndarray | None = None
    diffusion_sq: np.ndarray | None = None
    jumps: JumpMarks | None = None
    aux: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 3 or v.shape[1] != self.grid.n_steps + 1:
            raise ConfigError("values must have shape (n_paths, n_steps + 1, d)")
        n, _, d = v.shape
        object.__setattr__(self, "values", v)
        if self.drift is not None:
            dr = _frozen(self.drift)
            if dr.shape != (n, self.grid.n_steps, d):
                raise ConfigError("recorded drift has inconsistent shape")
            object.__setattr__(self, "drift", dr)
        if self.diffusion_sq is not None:
            a = _frozen(self.diffusion_sq)
            if a.shape != (n, self.grid.n_steps, d, d):
                raise ConfigError("recorded squared diffusion has inconsistent shape")
            object.__setattr__(self, "diffusion_sq", a)
        if self.aux is not None:
            aux = _frozen(self.aux)
            if aux.shape[:2] != (n, self.grid.n_steps + 1):
                raise ConfigError("auxiliary record has inconsistent shape")
            object.__setattr__(self, "aux", aux)
        if self.jumps is None:
            object.__setattr__(self, "jumps", JumpMarks.empty(d))
        j = self.jumps
        if len(j) and (j.path.min() < 0 or j.path.max() >= n or j.step.min() < 0
                       or j.step.max() >= self.grid.n_steps or j.size.shape[1] != d):
            raise ConfigError("jump marks reference invalid paths or steps")

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def at(self, t: float) -> np.ndarray:
        """States at grid time ``t`` (first coordinate for scalar processes)."""
        k = self.grid.index_of(t)
        x = self.values[:, k, :]
        return x[:, 0] if self.dim == 1 else x

    def __eq__(self, other):
        if not isinstance(other, PathEnsemble):
            return NotImplemented

        def same(a, b):
            return (a is None and b is None) or (a is not None and b is not None and np.array_equal(a, b))

        return (self.grid == other.grid and self.seed == other.seed and same(self.values, other.values)
                and same(self.drift, other.drift) and same(self.diffusion_sq, other.diffusion_sq)
                and same(self.aux, other.aux) and self.jumps == other.jumps)


# ---------------------------------------------------------------------------
# Markovian projection
# ---------------------------------------------------------------------------


def _uniform(x, name):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or len(x) < 2:
        raise ConfigError(f"{name} must be a 1-d grid with at least 2 nodes")
    d = np.diff(x)
    if np.any(d <= 0) or not np.allclose(d, d[0], rtol=1e-8, atol=0):
        raise ConfigError(f"{name} must be uniform and strictly increasing")
    return x


@dataclass(frozen=True, eq=False)
class ProjectedCoefficients:
    """Projected drift, squared diffusion and jump kernel on a (t, z) grid.

    ``n[k, j, i]`` is the density in ``y`` at ``y[j]`` given ``z[i]`` at
    ``times[k]``; ``tail_lower``/``tail_upper`` hold the kernel mass below
    and above the y-grid, which the solvers lump at the grid edges.  Kernel
    nodes with ``0 < |y| <= jump_cutoff`` are treated as a Gaussian with
    matched second moment rather than as discrete jumps.
    """

    times: np.ndarray
    z: np.ndarray
    b: np.ndarray
    a: np.ndarray
    y: np.ndarray | None = None
    n: np.ndarray | None = None
    tail_lower: np.ndarray | None = None
    tail_upper: np.ndarray | None = None
    jump_cutoff: float = 0.0
    filled: np.ndarray | None = None
    integrability_bound: float | None = None
    stable_c: float = 0.0
    stable_beta: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        if np.any(np.diff(times) <= 0):
            raise ConfigError("coefficient times must be strictly increasing")
        z = _uniform(self.z, "z grid")
        K, I = len(times), len(z)
        b = np.asarray(self.b, dtype=float).reshape(K, I)
        a = np.asarray(self.a, dtype=float).reshape(K, I)
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(a))):
            raise NumericalError("projected coefficients contain non-finite values")
        if np.any(a < 0):
            raise NumericalError("projected squared diffusion a must be non-negative")
        if self.y is None:
            y = np.array([-1.0, 0.0, 1.0])
            n = np.zeros((K, 3, I))
        else:
            y = snap_zero(_uniform(self.y, "y grid"))
            n = np.asarray(self.n, dtype=float).reshape(K, len(y), I)
        if np.any(n < 0) or not np.all(np.isfinite(n)):
            raise NumericalError("jump kernel must be finite and non-negative")
        tl = np.zeros((K, I)) if self.tail_lower is None else np.asarray(self.tail_lower, float).reshape(K, I)
        tu = np.zeros((K, I)) if self.tail_upper is None else np.asarray(self.tail_upper, float).reshape(K, I)
        if np.any(tl < 0) or np.any(tu < 0):
            raise NumericalError("kernel tail masses must be non-negative")
        filled = np.zeros((K, I), bool) if self.filled is None else np.asarray(self.filled, bool).reshape(K, I)
        for name, arr in dict(times=times, z=z, b=b, a=a, y=y, n=n, tail_lower=tl,
                              tail_upper=tu, filled=filled).items():
            object.__setattr__(self, name, _frozen(arr, arr.dtype))
        if self.integrability_bound is not None:
            worst = float(self.integrability().max())
            if worst > self.integrability_bound * (1 + 1e-12):
                raise NumericalError(
                    f"discrete int (1 ^ y^2) n dy = {worst:.6g} exceeds declared bound {self.integrability_bound:.6g}")

    @property
    def dz(self) -> float:
        return float(self.z[1] - self.z[0])

    @property
    def dy(self) -> float:
        return float(self.y[1] - self.y[0])

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(self.a)

    @property
    def has_jumps(self) -> bool:
        return bool(np.any(self.n > 0) or np.any(self.tail_lower > 0) or np.any(self.tail_upper > 0))

    def integrability(self) -> np.ndarray:
        """Per-(k, i) discrete int (1 ^ y^2) n(dy), tails counted at weight 1."""
        w = np.minimum(1.0, self.y ** 2) * self.dy
        lo = min(1.0, self.y[0] ** 2)
        hi = min(1.0, self.y[-1] ** 2)
        return np.einsum("j,kji->ki", w, self.n) + lo * self.tail_lower + hi * self.tail_upper

    def at_time(self, t: float):
        """Coefficients linearly interpolated in time (clamped to the ends).

        Returns ``(b, a, n, tail_lower, tail_upper)`` on the z grid.
        """
        times = self.times
        if len(times) == 1 or t <= times[0]:
            k0, k1, w = 0, 0, 0.0
        elif t >= times[-1]:
            k0, k1, w = len(times) - 1, len(times) - 1, 0.0
        else:
            k1 = int(np.searchsorted(times, t, side="right"))
            k0 = k1 - 1
            w = (t - times[k0]) / (times[k1] - times[k0])
        if w == 0.0:
            return self.b[k0], self.a[k0], self.n[k0], self.tail_lower[k0], self.tail_upper[k0]

        def mix(f):
            return (1 - w) * f[k0] + w * f[k1]

        return mix(self.b), mix(self.a), mix(self.n), mix(self.tail_lower), mix(self.tail_upper)

    def time_weights(self, t: float):
        times = self.times
        if len(times) == 1 or t <= times[0]:
            return 0, 0, 0.0
        if t >= times[-1]:
            return len(times) - 1, len(times) - 1, 0.0
        k1 = int(np.searchsorted(times, t, side="right"))
        return k1 - 1, k1, (t - times[k1 - 1]) / (times[k1] - times[k1 - 1])

    def __eq__(self, other):
        if not isinstance(other, ProjectedCoefficients):
            return NotImplemented
        arrays = ("times", "z", "b", "a", "y", "n", "tail_lower", "tail_upper", "filled")
        return (all(np.array_equal(getattr(self, k), getattr(other, k)) for k in arrays)
                and self.jump_cutoff == other.jump_cutoff and self.stable_c == other.stable_c
                and self.stable_beta == other.stable_beta
                and self.integrability_bound == other.integrability_bound)


@dataclass(frozen=True, eq=False)
class DensityField:
    """Marginal densities ``p[k, i]`` at ``times[k]`` on a uniform x-grid."""

    x: np.ndarray
    times: np.ndarray
    p: np.ndarray
    validate: bool = True
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        x = _uniform(self.x, "x grid")
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        p = np.asarray(self.p, dtype=float).reshape(len(times), len(x))
        for name, arr in dict(x=x, times=times, p=p).items():
            object.__setattr__(self, name, _frozen(arr))
        if self.validate:
            mass = self.mass()
            if np.any(np.abs(mass - 1.0) > MASS_TOL):
                k = int(np.argmax(np.abs(mass - 1.0)))
                raise NumericalError(f"density mass {mass[k]:.6g} at t={times[k]:.6g} outside 1 +- {MASS_TOL:g}")
            if p.min() < -NEGATIVITY_TOL:
                raise NumericalError(f"density has negative values down to {p.min():.3g}")

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    def mass(self) -> np.ndarray:
        return self.p.sum(axis=1) * self.dx

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > tol * max(1.0, abs(t)):
            raise ConfigError(f"t={t} is not a checkpoint of the density field")
        return k

    def density_at(self, t: float) -> np.ndarray:
        return self.p[self.index_of(t)]

    def cdf(self, t: float, points=None):
        """CDF by cumulative trapezoid, normalised to end at 1."""
        from scipy.integrate import cumulative_trapezoid

        p = self.density_at(t)
        c = cumulative_trapezoid(p, self.x, initial=0.0)
        c = c / c[-1]
        if points is None:
            return c
        return np.interp(points, self.x, c, left=0.0, right=1.0)

    def __eq__(self, other):
        if not isinstance(other, DensityField):
            return NotImplemented
        return (np.array_equal(self.x, other.x) and np.array_equal(self.times, other.times)
                and np.array_equal(self.p, other.p))


# ---------------------------------------------------------------------------
# closed-form projection inputs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeChangeSpec:
    """A scalar Lévy process run on the clock ``Theta_t = int_0^t theta_s ds``.

    ``rate(t, x, aux)`` returns theta per path.  The cumulative clock is
    kept as the last auxiliary component of the simulated model.
    """

    rate: Callable
    b: float = 0.0
    sigma2: float = 1.0
    levy: FiniteActivity | InfiniteActivity | StableTail | None = None
    x0: float = 0.0
    aux_init: Callable | None = None
    aux_update: Callable | None = None
    aux_noise_dim: int = 0

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ConfigError("base diffusion variance must be non-negative")
        if (self.aux_init is None) != (self.aux_update is None):
            raise ConfigError("aux_init and aux_update must be given together")

    def rate_of(self, t, x, aux) -> np.ndarray:
        inner = None if aux is None or self.aux_init is None else aux[:, :-1]
        th = np.asarray(self.rate(t, x, inner), dtype=float)
        return np.broadcast_to(th.reshape(-1) if th.ndim else th, (x.shape[0],))

    def to_ito_model(self, name: str = "time-changed-levy") -> ItoModel:
        b, sigma = self.b, float(np.sqrt(self.sigma2))
        user_init, user_update = self.aux_init, self.aux_update

        def aux_init(x):
            inner = user_init(x) if user_init is not None else np.zeros((x.shape[0], 0))
            return np.column_stack([inner, np.zeros(x.shape[0])])

        def aux_update(t, dt, x_prev, x_new, aux, dw):
            theta = self.rate_of(t, x_prev, aux)
            inner = aux[:, :-1]
            if user_update is not None:
                inner = user_update(t, dt, x_prev, x_new, inner, dw)
            return np.column_stack([inner, aux[:, -1] + theta * dt])

        def drift(t, x, aux):
            return (b * self.rate_of(t, x, aux))[:, None]

        def diffusion(t, x, aux):
            return (sigma * np.sqrt(self.rate_of(t, x, aux)))[:, None, None]

        def scale(t, x, aux):
            return self.rate_of(t, x, aux)

        jumps = None if self.levy is None else PoissonDriven(self.levy, intensity_scale=scale)
        return ItoModel(dim=1, x0=np.array([self.x0]), drift=drift, diffusion=diffusion, noise_dim=1,
                        jumps=jumps, aux_init=aux_init, aux_update=aux_update,
                        aux_noise_dim=self.aux_noise_dim, name=name)

    def rates_from_ensemble(self, ensemble: PathEnsemble) -> np.ndarray:
        """theta at every (path, step) of an ensemble simulated from ``to_ito_model``."""
        K = ensemble.grid.n_steps
        out = np.empty((ensemble.n_paths, K))
        for k, t in enumerate(ensemble.grid.times[:-1]):
            aux = None if ensemble.aux is None else ensemble.aux[:, k, :]
            out[:, k] = self.rate_of(t, ensemble.values[:, k, :], aux)
        return out


def solve_level(g: Callable, zp: np.ndarray, w: float, bracket: float = 50.0) -> float:
    """Root of ``g(z_d) = w`` by bracket doubling and Brent's method.

    The search stops at ``bracket * (1 + max|zp| + |w|)`` so that level sets
    far out in the quadrature domain are still reached.
    """
    from scipy.optimize import brentq

    limit = bracket * (1.0 + float(np.max(np.abs(zp), initial=0.0)) + abs(float(w)))
    fn = lambda zd: g(zd) - w
    lo, hi = -1.0, 1.0
    flo, fhi = fn(lo), fn(hi)
    while flo * fhi > 0:
        lo, hi = 2 * lo, 2 * hi
        if hi > limit:
            raise NumericalError(f"no root of f(z', .) = {w} within +-{limit:.3g}")
        flo, fhi = fn(lo), fn(hi)
    return brentq(fn, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=200)


@dataclass(frozen=True)
class FunctionOfMarkovSpec:
    """xi = f(Z) for a Markov process Z with known marginal densities q_t.

    ``f``, ``grad`` and ``hess`` act on points of shape ``(n, d)`` and return
    ``(n,)``, ``(n, d)`` and ``(n, d, d)``.  ``inverse(zp, w)`` solves
    ``f(zp, z_d) = w`` for ``z_d`` with ``zp`` of shape ``(n, d - 1)`` and ``w``
    of shape ``(n,)``; without it a bracketed root search is used.
    ``density(t, z)`` evaluates q_t at points of shape ``(n, d)``.  The drift
    of Z is the fully compensated one (every jump of Z compensated), and its
    jumps must come from a finite-activity measure.
    """

    markov: ItoModel
    f: Callable
    grad: Callable
    hess: Callable
    density: Callable
    inverse: Callable | None = None
    bracket: float = 50.0
    slice_bounds: Callable | None = None

    def __post_init__(self):
        if self.markov.aux_init is not None:
            raise ConfigError("the driving process must be Markov (no auxiliary history)")

    @property
    def dim(self) -> int:
        return self.markov.dim

    def solve_last(self, zp: np.ndarray, w: np.ndarray) -> np.ndarray:
        """``z_d`` with ``f(zp, z_d) = w``, row by row."""
        zp = np.atleast_2d(np.asarray(zp, dtype=float))
        w = np.broadcast_to(np.asarray(w, dtype=float), (zp.shape[0],))
        if self.inverse is not None:
            return np.asarray(self.inverse(zp, w), dtype=float).reshape(zp.shape[0])
        out = np.empty(zp.shape[0])
        for r in range(zp.shape[0]):
            row = zp[r]
            out[r] = solve_level(lambda zd: float(self.f(np.concatenate([row, [zd]])[None, :])[0]), row, w[r],
                                 self.bracket)
        return out

    def audit_last_derivative(self, points: np.ndarray, floor: float = 1e-8) -> float:
        """Smallest |df/dz_d| over ``points``; raises if the sign changes or it vanishes."""
        d = np.asarray(self.grad(np.atleast_2d(points)), dtype=float)[:, -1]
        if np.any(np.abs(d) < floor) or (np.any(d > 0) and np.any(d < 0)):
            raise NumericalError("df/dz_d vanishes or changes sign on the working domain")
        return float(np.min(np.abs(d)))


# ---------------------------------------------------------------------------
# reports and audit configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarginalComparison:
    t: float
    ks: float
    w1: float
    moments: tuple
    reference_moments: tuple
    n: int
    n_reference: int
    se_mean: float
    se_mean_reference: float
    ks_scale: float

    def __post_init__(self):
        if not 0.0 <= self.ks <= 1.0:
            raise NumericalError(f"KS statistic {self.ks} outside [0, 1]")
        if not self.w1 >= 0.0:
            raise NumericalError(f"Wasserstein-1 distance {self.w1} is negative")
        object.__setattr__(self, "moments", tuple(float(m) for m in self.moments))
        object.__setattr__(self, "reference_moments", tuple(float(m) for m in self.reference_moments))


@dataclass(frozen=True)
class MimicReport:
    route: str
    entries: tuple

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    @property
    def max_ks(self) -> float:
        return max((e.ks for e in self.entries), default=0.0)


@dataclass(frozen=True)
class AssumptionAuditConfig:
    k1: float
    k2: float
    k3: float
    ellipticity: float
    stable_beta: float = 1.0
    tail_radii: tuple = (1.0, 2.0, 4.0, 8.0)
    tail_tolerance: float = 1e-3
    lipschitz: float | None = None

    def __post_init__(self):
        vals = dict(k1=self.k1, k2=self.k2, k3=self.k3, ellipticity=self.ellipticity,
                    stable_beta=self.stable_beta, tail_tolerance=self.tail_tolerance)
        for k, v in vals.items():
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(f"audit constant {k} must be positive, got {v}")
        radii = tuple(float(r) for r in self.tail_radii)
        if not radii or any(r <= 0 for r in radii) or any(np.diff(radii) <= 0):
            raise ConfigError("tail radii must be positive and increasing")
        object.__setattr__(self, "tail_radii", radii)
        if self.lipschitz is not None and not self.lipschitz > 0:
            raise ConfigError("lipschitz threshold must be positive")
