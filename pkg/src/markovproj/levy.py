"""Lévy measures and jump-size laws.

Three measure variants are supported: finite activity (an intensity times a
probability law of jump sizes), infinite activity given by a density with a
small-jump cutoff, and a symmetric stable tail ``C/|y|^(1+beta)`` plus a
finite-activity remainder.  All of them present the same interface to the
simulators: an intensity of "simulated" jumps (those above the cutoff), a
sampler mapping uniforms to jump sizes, the compensator mean of the
simulated jumps inside the unit ball, and the second moment of the jumps
below the cutoff (for the Gaussian substitute).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, stats

from .errors import ConfigError

_QUAD = dict(epsabs=1e-13, epsrel=1e-11, limit=400)


def _quad(fn, lo, hi, points=None):
    if points is not None and np.isfinite(lo) and np.isfinite(hi):
        pts = [p for p in points if lo < p < hi]
        return integrate.quad(fn, lo, hi, points=pts or None, **_QUAD)[0]
    return integrate.quad(fn, lo, hi, **_QUAD)[0]


# ---------------------------------------------------------------------------
# jump-size laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscreteJumpLaw:
    """Jump sizes drawn from finitely many atoms."""

    sizes: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        sizes = np.atleast_1d(np.asarray(self.sizes, dtype=float))
        if sizes.ndim == 1:
            sizes = sizes[:, None]
        probs = np.asarray(self.probs, dtype=float)
        if probs.shape != (sizes.shape[0],):
            raise ConfigError("probs must have one entry per atom")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ConfigError("jump probabilities must be non-negative and sum to 1")
        if np.any(np.all(sizes == 0, axis=1)):
            raise ConfigError("a jump atom of size 0 is not allowed")
        sizes.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "_cum", np.cumsum(probs))

    @property
    def dim(self) -> int:
        return self.sizes.shape[1]

    n_uniforms = 1

    def sample(self, u: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self._cum, u[:, 0], side="right")
        return self.sizes[np.minimum(idx, len(self.probs) - 1)]

    def quadrature(self):
        return self.sizes, self.probs

    def pdf(self, y):
        raise ConfigError("a discrete jump law has no density")


@dataclass(frozen=True)
class ContinuousJumpLaw:
    """Scalar jump sizes with a density.

    ``ppf`` is optional; without it the inverse CDF is tabulated on ``support``.
    """

    pdf: Callable
    ppf: Callable | None = None
    support: tuple[float, float] | None = None
    check_tol: float = 1e-6

    def __post_init__(self):
        lo, hi = self.support if self.support is not None else (-np.inf, np.inf)
        mass = _quad(lambda y: float(self.pdf(y)), lo, hi) if np.isinf(lo) or np.isinf(hi) else _quad(
            lambda y: float(self.pdf(y)), lo, hi, points=[0.0])
        if abs(mass - 1.0) > self.check_tol:
            raise ConfigError(f"jump pdf integrates to {mass:.9f}, not 1 (tolerance {self.check_tol:g})")
        if self.ppf is None:
            if self.support is None or not np.all(np.isfinite(self.support)):
                raise ConfigError("a jump law without ppf needs a finite support")
            grid = np.linspace(lo, hi, 20001)
            cdf = integrate.cumulative_trapezoid(self.pdf(grid), grid, initial=0.0)
            cdf /= cdf[-1]
            keep = np.concatenate([[True], np.diff(cdf) > 0])
            object.__setattr__(self, "_table", (cdf[keep], grid[keep]))

    dim = 1
    n_uniforms = 1

    def inverse_cdf(self, u):
        if self.ppf is not None:
            return np.asarray(self.ppf(u), dtype=float)
        cdf, grid = self._table
        return np.interp(u, cdf, grid)

    def sample(self, u: np.ndarray) -> np.ndarray:
        return self.inverse_cdf(u[:, 0])[:, None]

    def quadrature(self, n: int = 96):
        # Gauss-Legendre in probability space: E[g(Y)] = int_0^1 g(F^-1(u)) du
        x, w = np.polynomial.legendre.leggauss(n)
        u = 0.5 * (x + 1.0)
        return self.inverse_cdf(u)[:, None], 0.5 * w

    def expect(self, g: Callable, lo=-np.inf, hi=np.inf) -> float:
        lo_s, hi_s = self.support if self.support is not None else (-np.inf, np.inf)
        lo, hi = max(lo, lo_s), min(hi, hi_s)
        if lo >= hi:
            return 0.0
        pts = [p for p in (-1.0, 0.0, 1.0) if lo < p < hi]
        total = 0.0
        edges = [lo, *pts, hi]
        for a, b in zip(edges[:-1], edges[1:]):
            total += _quad(lambda y: g(y) * float(self.pdf(y)), a, b)
        return total


@dataclass(frozen=True)
class SamplerJumpLaw:
    """Multivariate jump sizes given only by a sampler ``u -> y``.

    Expectations use a fixed scrambled Sobol set, so they are deterministic.
    """

    sampler: Callable
    dim: int
    n_uniforms: int
    n_quadrature: int = 2**14

    def sample(self, u):
        return np.asarray(self.sampler(u), dtype=float).reshape(len(u), self.dim)

    def quadrature(self):
        from scipy.stats import qmc

        u = qmc.Sobol(self.n_uniforms, scramble=True, seed=20240601).random(self.n_quadrature)
        u = np.clip(u, 1e-12, 1 - 1e-12)
        return self.sample(u), np.full(len(u), 1.0 / len(u))


def _norm(y):
    y = np.asarray(y, dtype=float)
    return np.abs(y) if y.ndim <= 1 else np.linalg.norm(y, axis=-1)


# ---------------------------------------------------------------------------
# Lévy measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FiniteActivity:
    intensity: float
    law: DiscreteJumpLaw | ContinuousJumpLaw | SamplerJumpLaw

    def __post_init__(self):
        if not np.isfinite(self.intensity) or self.intensity < 0:
            raise ConfigError(f"jump intensity must be a finite non-negative rate, got {self.intensity}")

    kind = "finite"
    cutoff = 0.0

    @property
    def dim(self) -> int:
        return self.law.dim

    @property
    def n_uniforms(self) -> int:
        return self.law.n_uniforms

    def simulated_intensity(self) -> float:
        return float(self.intensity)

    def sample(self, u):
        return self.law.sample(u)

    def small_jump_variance(self) -> float:
        return 0.0

    def _expect(self, g) -> float:
        if isinstance(self.law, ContinuousJumpLaw):
            return self.law.expect(lambda y: g(np.atleast_1d(y)[None, :])[0])
        nodes, w = self.law.quadrature()
        return float(np.sum(w * g(nodes)))

    def compensator_mean(self) -> np.ndarray:
        """int_{|y|<=1} y nu(dy) over the simulated jumps."""
        if isinstance(self.law, ContinuousJumpLaw):
            return np.array([self.intensity * self.law.expect(lambda y: y, -1.0, 1.0)])
        nodes, w = self.law.quadrature()
        inside = _norm(nodes) <= 1.0
        return self.intensity * np.sum((w * inside)[:, None] * nodes, axis=0)

    def simulated_mean(self) -> np.ndarray:
        """int y nu(dy) over all simulated jumps."""
        if isinstance(self.law, ContinuousJumpLaw):
            return np.array([self.intensity * self.law.expect(lambda y: y)])
        nodes, w = self.law.quadrature()
        return self.intensity * np.sum(w[:, None] * nodes, axis=0)

    def integrability(self) -> float:
        """int (1 ^ |y|^2) nu(dy)."""
        return self.intensity * self._expect(lambda y: np.minimum(1.0, _norm(y) ** 2))

    def tail_mass(self, radius: float) -> float:
        if isinstance(self.law, ContinuousJumpLaw):
            return self.intensity * (self.law.expect(lambda y: 1.0, radius, np.inf)
                                     + self.law.expect(lambda y: 1.0, -np.inf, -radius))
        return self.intensity * self._expect(lambda y: (_norm(y) >= radius).astype(float))

    def density(self, y):
        return self.intensity * np.asarray(self.law.pdf(y), dtype=float)

    def quadrature(self, n: int = 96):
        nodes, w = self.law.quadrature(n) if isinstance(self.law, ContinuousJumpLaw) else self.law.quadrature()
        return nodes, self.intensity * w


@dataclass(frozen=True)
class InfiniteActivity:
    """Scalar Lévy density with infinitely many small jumps.

    Jumps with ``|y| <= cutoff`` are not simulated; ``small_jumps`` selects
    whether they are replaced by a Gaussian with matched second moment or
    dropped.  Simulated jumps are truncated at ``|y| <= support``.
    """

    density_fn: Callable
    cutoff: float | None
    small_jumps: str = "gaussian"
    support: float = 50.0
    _tables: dict = field(default=None, init=False, repr=False, compare=False)

    kind = "infinite"
    dim = 1
    n_uniforms = 1

    def __post_init__(self):
        if self.cutoff is None or not self.cutoff > 0:
            raise ConfigError("infinite-activity Lévy measure requires a positive small-jump cutoff")
        if self.small_jumps not in ("gaussian", "drop"):
            raise ConfigError(f"small_jumps must be 'gaussian' or 'drop', got {self.small_jumps!r}")
        if self.support <= self.cutoff:
            raise ConfigError("support must exceed the cutoff")
        eps, R = float(self.cutoff), float(self.support)
        nu = lambda y: float(self.density_fn(y))
        integ = (_quad(lambda y: y * y * nu(y), -1.0, 0.0) + _quad(lambda y: y * y * nu(y), 0.0, 1.0)
                 + _quad(nu, 1.0, np.inf) + _quad(nu, -np.inf, -1.0))
        if not np.isfinite(integ):
            raise ConfigError("int (1 ^ y^2) nu(dy) is not finite")
        # inverse CDF of the simulated jumps on a geometric grid, both sides
        r = np.geomspace(eps, R, 4001)
        pos = integrate.cumulative_trapezoid(self.density_fn(r), r, initial=0.0)
        neg = integrate.cumulative_trapezoid(self.density_fn(-r), r, initial=0.0)
        lam_pos = _quad(nu, eps, R, points=[1.0])
        lam_neg = _quad(nu, -R, -eps, points=[-1.0])
        if pos[-1] > 0:
            pos *= lam_pos / pos[-1]
        if neg[-1] > 0:
            neg *= lam_neg / neg[-1]
        small = 0.0
        if self.small_jumps == "gaussian":
            small = _quad(lambda y: y * y * nu(y), -eps, 0.0) + _quad(lambda y: y * y * nu(y), 0.0, eps)
        comp = _quad(lambda y: y * nu(y), eps, 1.0) + _quad(lambda y: y * nu(y), -1.0, -eps) if eps < 1 else 0.0
        object.__setattr__(self, "_tables", dict(
            r=r, pos=pos, neg=neg, lam_pos=lam_pos, lam_neg=lam_neg,
            integrability=integ, small=small, comp=comp))

    def simulated_intensity(self) -> float:
        return self._tables["lam_pos"] + self._tables["lam_neg"]

    def sample(self, u):
        T = self._tables
        lam = T["lam_pos"] + T["lam_neg"]
        v = u[:, 0] * lam
        neg = v < T["lam_neg"]
        out = np.empty(len(v))
        out[neg] = -np.interp(v[neg], T["neg"], T["r"])
        out[~neg] = np.interp(v[~neg] - T["lam_neg"], T["pos"], T["r"])
        return out[:, None]

    def small_jump_variance(self) -> float:
        return self._tables["small"]

    def compensator_mean(self) -> np.ndarray:
        return np.array([self._tables["comp"]])

    def simulated_mean(self) -> np.ndarray:
        eps, R = float(self.cutoff), float(self.support)
        nu = lambda y: y * float(self.density_fn(y))
        return np.array([_quad(nu, eps, R, points=[1.0]) + _quad(nu, -R, -eps, points=[-1.0])])

    def integrability(self) -> float:
        return self._tables["integrability"]

    def tail_mass(self, radius: float) -> float:
        nu = lambda y: float(self.density_fn(y))
        return _quad(nu, radius, np.inf) + _quad(nu, -np.inf, -radius)

    def density(self, y):
        return np.asarray(self.density_fn(y), dtype=float)

    def quadrature(self, n: int = 96):
        x, w = np.polynomial.legendre.leggauss(n)
        u = 0.5 * (x + 1.0)
        return self.sample(u[:, None]), 0.5 * w * self.simulated_intensity()


@dataclass(frozen=True)
class StableTail:
    """Symmetric ``c/|y|^(1+beta)`` tail plus an optional finite remainder."""

    c: float
    beta: float
    cutoff: float
    remainder: FiniteActivity | None = None
    small_jumps: str = "gaussian"

    kind = "stable"
    dim = 1

    def __post_init__(self):
        if not 0.0 < self.beta < 2.0:
            raise ConfigError(f"stable exponent must lie in (0, 2), got {self.beta}")
        if self.c < 0:
            raise ConfigError("stable constant must be non-negative")
        if not self.cutoff > 0:
            raise ConfigError("stable tail requires a positive small-jump cutoff")
        if self.small_jumps not in ("gaussian", "drop"):
            raise ConfigError(f"small_jumps must be 'gaussian' or 'drop', got {self.small_jumps!r}")
        if self.remainder is not None and self.remainder.dim != 1:
            raise ConfigError("stable tail is scalar")

    @property
    def n_uniforms(self) -> int:
        return 1 + max(1, self.remainder.n_uniforms if self.remainder else 1)

    def _stable_rate(self) -> float:
        return 2.0 * self.c * self.cutoff ** (-self.beta) / self.beta

    def simulated_intensity(self) -> float:
        rem = self.remainder.simulated_intensity() if self.remainder else 0.0
        return self._stable_rate() + rem

    def sample(self, u):
        lam_s = self._stable_rate()
        lam = self.simulated_intensity()
        pick_stable = u[:, 0] * lam < lam_s
        out = np.empty((len(u), 1))
        v = u[:, 1]
        # Pareto magnitude by inversion, sign from the first half of v
        w = np.where(v < 0.5, 2 * v, 2 * v - 1)
        w = np.clip(w, 1e-300, 1.0)
        mag = self.cutoff * w ** (-1.0 / self.beta)
        out[:, 0] = np.where(v < 0.5, -mag, mag)
        if self.remainder is not None and np.any(~pick_stable):
            k = self.remainder.n_uniforms
            out[~pick_stable] = self.remainder.sample(u[~pick_stable, 1:1 + k])
        return out

    def small_jump_variance(self) -> float:
        if self.small_jumps == "drop":
            return 0.0
        return 2.0 * self.c * self.cutoff ** (2.0 - self.beta) / (2.0 - self.beta)

    def compensator_mean(self) -> np.ndarray:
        rem = self.remainder.compensator_mean() if self.remainder else np.zeros(1)
        return rem  # the stable part is symmetric

    def simulated_mean(self) -> np.ndarray:
        # symmetric stable part contributes zero (principal value)
        return self.remainder.simulated_mean() if self.remainder else np.zeros(1)

    def integrability(self) -> float:
        stable = 2.0 * self.c * (1.0 / (2.0 - self.beta) + 1.0 / self.beta)
        return stable + (self.remainder.integrability() if self.remainder else 0.0)

    def remainder_beta_moment(self) -> float:
        """int (1 ^ |y|^beta) n^beta(dy) for the remainder."""
        if self.remainder is None:
            return 0.0
        b = self.beta
        return self.remainder.intensity * self.remainder._expect(lambda y: np.minimum(1.0, _norm(y) ** b))

    def tail_mass(self, radius: float) -> float:
        stable = 2.0 * self.c * radius ** (-self.beta) / self.beta
        return stable + (self.remainder.tail_mass(radius) if self.remainder else 0.0)

    def density(self, y):
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore"):
            out = self.c * np.abs(y) ** (-1.0 - self.beta)
        if self.remainder is not None:
            out = out + self.remainder.density(y)
        return out

    def quadrature(self, n: int = 96):
        x, w = np.polynomial.legendre.leggauss(n)
        u = 0.5 * (x + 1.0)
        mag = self.cutoff * u ** (-1.0 / self.beta)
        nodes = np.concatenate([-mag, mag])[:, None]
        weights = np.concatenate([w, w]) * 0.25 * self._stable_rate()
        if self.remainder is not None:
            rn, rw = self.remainder.quadrature()
            nodes = np.concatenate([nodes, rn])
            weights = np.concatenate([weights, rw])
        return nodes, weights


LevyDensitySpec = FiniteActivity | InfiniteActivity | StableTail


def laplace_density(scale: float = 1.0):
    """Laplace density ``exp(-|y|/s)/(2s)`` as a continuous jump law."""
    d = stats.laplace(scale=scale)
    return ContinuousJumpLaw(pdf=d.pdf, ppf=d.ppf)


def symmetric_atoms(size: float = 1.0) -> DiscreteJumpLaw:
    return DiscreteJumpLaw(sizes=[-size, size], probs=[0.5, 0.5])
