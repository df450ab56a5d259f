"""Absorbing a jump amplitude into the compensator.

If jumps of size ``psi(y)`` are driven by a Poisson measure with intensity
``nu``, the jump measure of the state has compensator ``nu(psi^{-1}(A))``
per unit time (set form), and when ``psi`` is a diffeomorphism it has the
density

    m(y) = 1{y in psi(R^d)} |det grad psi|^{-1}(psi^{-1}(y)) nu(psi^{-1}(y)).

Scalar maps are handled directly (bracketed inversion, central-difference
Jacobian); in higher dimension the caller supplies the inverse and Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from . import rng as streams
from .errors import ConfigError, NumericalError
from .levy import FiniteActivity, InfiniteActivity, StableTail

ROOT_TOL = 1e-10


def _density_of(nu) -> Callable:
    if isinstance(nu, (FiniteActivity, InfiniteActivity, StableTail)):
        return nu.density
    if callable(nu):
        return nu
    raise ConfigError("nu must be a Lévy measure or a density callable")


def fd_derivative(psi: Callable, z: np.ndarray) -> np.ndarray:
    """Central difference with step ``1e-6 (1 + |z|)``."""
    z = np.asarray(z, dtype=float)
    h = 1e-6 * (1.0 + np.abs(z))
    return (np.asarray(psi(z + h), dtype=float) - np.asarray(psi(z - h), dtype=float)) / (2.0 * h)


@dataclass(frozen=True)
class ScalarAmplitude:
    """A scalar jump amplitude ``psi`` on a working domain, audited for monotonicity.

    The image of the domain is approximated by the interval between the
    sampled extremes of ``psi``.
    """

    psi: Callable
    inverse: Callable | None = None
    jacobian: Callable | None = None
    domain: tuple[float, float] = (-50.0, 50.0)
    n_check: int = 4001

    def __post_init__(self):
        lo, hi = self.domain
        if not lo < 0.0 < hi:
            raise ConfigError("amplitude domain must contain 0 in its interior")
        zs = np.linspace(lo, hi, self.n_check)
        deriv = self.derivative(zs)
        if not np.all(np.isfinite(deriv)):
            raise NumericalError("amplitude derivative is not finite on the working domain")
        pos, neg = np.any(deriv > 0), np.any(deriv < 0)
        if pos and neg:
            k = int(np.argmax(np.sign(deriv) != np.sign(deriv[0])))
            raise NumericalError(f"amplitude is not monotone: derivative changes sign near y={zs[k]:.6g}")
        if not (pos or neg):
            raise NumericalError("amplitude derivative vanishes on the working domain")
        vals = np.asarray(self.psi(np.array([lo, hi])), dtype=float)
        if abs(float(self.psi(np.array([0.0]))[0])) > 1e-12:
            raise ConfigError("jump amplitude must vanish at y = 0")
        object.__setattr__(self, "_image", (float(vals.min()), float(vals.max())))
        object.__setattr__(self, "_increasing", bool(pos))

    @property
    def image(self) -> tuple[float, float]:
        return self._image

    def derivative(self, z):
        if self.jacobian is not None:
            return np.asarray(self.jacobian(np.asarray(z, dtype=float)), dtype=float)
        return fd_derivative(self.psi, z)

    def invert(self, y) -> np.ndarray:
        """``psi^{-1}(y)`` for ``y`` inside the image; NaN outside."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        lo_img, hi_img = self._image
        inside = (y >= lo_img) & (y <= hi_img)
        out = np.full(y.shape, np.nan)
        if self.inverse is not None:
            out[inside] = np.asarray(self.inverse(y[inside]), dtype=float)
            return out
        lo, hi = self.domain
        for idx in np.flatnonzero(inside):
            target = y[idx]
            g = lambda z: float(self.psi(np.array([z]))[0]) - target
            glo, ghi = g(lo), g(hi)
            if glo == 0.0:
                out[idx] = lo
            elif ghi == 0.0:
                out[idx] = hi
            else:
                out[idx] = optimize.brentq(g, lo, hi, xtol=ROOT_TOL * 1e-3, rtol=4 * np.finfo(float).eps,
                                           maxiter=500)
        return out


def pushforward_density(amplitude: ScalarAmplitude | Callable, nu, y, *, inverse: Callable | None = None,
                        jacobian: Callable | None = None, dim: int = 1) -> np.ndarray:
    """Density ``m(y)`` of the image of ``nu`` under the jump amplitude.

    Parameters
    ----------
    amplitude : ScalarAmplitude or callable
        A bare callable is wrapped in :class:`ScalarAmplitude` (d = 1).  For
        ``dim > 1`` pass the callable together with ``inverse`` and ``jacobian``.
    nu : Lévy measure or density callable
    y : array_like
        Points, shape ``(n,)`` for d = 1 or ``(n, d)``.

    Returns
    -------
    ndarray
        ``m(y)``, zero outside the image of the amplitude and at ``y = 0``.
    """
    density = _density_of(nu)
    if dim > 1:
        if inverse is None or jacobian is None:
            raise ConfigError("d > 1 requires inverse and Jacobian oracles")
        y = np.atleast_2d(np.asarray(y, dtype=float))
        z = np.asarray(inverse(y), dtype=float).reshape(y.shape)
        det = np.abs(np.linalg.det(np.asarray(jacobian(z), dtype=float).reshape(len(y), dim, dim)))
        out = np.zeros(len(y))
        ok = np.all(np.isfinite(z), axis=1) & (det > 0) & np.any(y != 0, axis=1)
        out[ok] = np.asarray(density(z[ok]), dtype=float) / det[ok]
        return out
    if not isinstance(amplitude, ScalarAmplitude):
        amplitude = ScalarAmplitude(amplitude, inverse=inverse, jacobian=jacobian)
    y = np.asarray(y, dtype=float)
    shape = y.shape
    y = y.reshape(-1)
    z = amplitude.invert(y)
    out = np.zeros(y.shape)
    ok = np.isfinite(z) & (y != 0.0)
    if np.any(ok):
        deriv = np.abs(amplitude.derivative(z[ok]))
        out[ok] = np.asarray(density(z[ok]), dtype=float) / deriv
    if np.any(out < 0) or not np.all(np.isfinite(out)):
        raise NumericalError("pushforward density is negative or not finite")
    return out.reshape(shape)


@dataclass(frozen=True)
class SetMass:
    value: float
    stderr: float
    n: int


def _preimage_interval(amplitude: ScalarAmplitude, lo: float, hi: float):
    img_lo, img_hi = amplitude.image
    a, b = max(lo, img_lo), min(hi, img_hi)
    if a >= b:
        return None
    za, zb = amplitude.invert(np.array([a, b]))
    return (min(za, zb), max(za, zb))


def pushforward_set_mass(amplitude: ScalarAmplitude | Callable, nu, A, *, n_mc: int = 100_000, seed: int = 0,
                         method: str = "mc", dim: int = 1) -> SetMass:
    """``nu(psi^{-1}(A))`` for an interval (d = 1) or a box ``A = (lower, upper)``.

    ``method='mc'`` samples jump sizes from ``nu`` through the counter-based
    streams and counts those mapped into ``A``; the standard error is the
    binomial one.  ``method='quadrature'`` integrates ``nu`` over the exact
    preimage interval (d = 1 only).
    """
    lower, upper = (np.atleast_1d(np.asarray(v, dtype=float)) for v in A)
    if np.any(lower >= upper):
        raise ConfigError("set A must have lower < upper")
    if np.all((lower <= 0) & (upper >= 0)):
        if not isinstance(nu, FiniteActivity):
            raise ConfigError("A touches 0: the mass may be infinite for an infinite-activity measure")
    if dim == 1 and not isinstance(amplitude, ScalarAmplitude):
        amplitude = ScalarAmplitude(amplitude)
    if method == "quadrature":
        if dim != 1:
            raise ConfigError("quadrature set mass is implemented for d = 1")
        pre = _preimage_interval(amplitude, float(lower[0]), float(upper[0]))
        if pre is None:
            return SetMass(0.0, 0.0, 0)
        density = _density_of(nu)
        pts = [p for p in (-1.0, 0.0, 1.0) if pre[0] < p < pre[1]]
        val = integrate.quad(lambda s: float(density(np.array([s]))[0]), pre[0], pre[1], points=pts or None,
                             epsabs=1e-13, epsrel=1e-11, limit=400)[0]
        return SetMass(val, 0.0, 0)
    if method != "mc":
        raise ConfigError(f"unknown set-mass method {method!r}")
    if not isinstance(nu, (FiniteActivity, InfiniteActivity, StableTail)):
        raise ConfigError("Monte Carlo set mass needs a samplable Lévy measure")
    if not isinstance(nu, FiniteActivity) and dim == 1:
        pre = _preimage_interval(amplitude, float(lower[0]), float(upper[0]))
        if pre is not None and pre[0] < nu.cutoff and pre[1] > -nu.cutoff:
            raise ConfigError("preimage of A reaches below the small-jump cutoff")
    rate = nu.simulated_intensity()
    gen = streams.CounterRNG(seed)
    u = gen.uniforms(np.arange(n_mc), 0, streams.JUMP_MARK, nu.n_uniforms)
    y = nu.sample(u)
    img = amplitude.psi(y[:, 0]) if dim == 1 else amplitude(y)
    img = np.asarray(img, dtype=float).reshape(n_mc, -1)
    hit = np.all((img >= lower) & (img <= upper), axis=1)
    p = hit.mean()
    return SetMass(rate * p, rate * np.sqrt(p * (1.0 - p) / n_mc), n_mc)


def integrate_density(amplitude: ScalarAmplitude, nu, lo: float, hi: float) -> float:
    """``int_lo^hi m(y) dy`` by adaptive quadrature of the pushforward density."""
    f = lambda s: float(pushforward_density(amplitude, nu, np.array([s]))[0])
    pts = [p for p in (-1.0, 1.0) if lo < p < hi]
    return integrate.quad(f, lo, hi, points=pts or None, epsabs=1e-12, epsrel=1e-10, limit=400)[0]


def pushforward_table(amplitude: ScalarAmplitude | Callable, nu, y_grid) -> np.ndarray:
    """Tabulate ``m`` on a y-grid (for export in the kernel CSV format)."""
    return pushforward_density(amplitude, nu, np.asarray(y_grid, dtype=float))
