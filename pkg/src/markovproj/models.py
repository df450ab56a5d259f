"""Built-in model registry used by the experiment configs.

Each builder takes a parameter dict and returns a :class:`ModelBundle`: the
source model, optionally a closed-form projection route, and optionally the
exact marginal law of the projected coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from .core import FunctionOfMarkovSpec, ItoModel, PoissonDriven, TimeChangeSpec
from .errors import ConfigError
from .levy import DiscreteJumpLaw, FiniteActivity, laplace_density


@dataclass(frozen=True)
class ModelBundle:
    """Source model plus whatever closed forms the registry knows for it.

    ``project`` extracts the scalar projected coordinate from a state array
    ``(..., d)``; ``exact(t)`` returns a frozen scipy distribution of that
    coordinate at time ``t`` when one is known.
    """

    name: str
    model: ItoModel
    project: Callable | None = None
    exact: Callable | None = None
    time_change: TimeChangeSpec | None = None
    function_of_markov: FunctionOfMarkovSpec | None = None


def _scalar(x):
    return x[..., 0]


def _params(p: dict, defaults: dict) -> dict:
    unknown = set(p) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown model parameter(s): {', '.join(sorted(unknown))}")
    return {**defaults, **p}


def brownian(params: dict) -> ModelBundle:
    p = _params(params, dict(mu=0.0, sigma=1.0, x0=0.0))
    mu, sigma, x0 = float(p["mu"]), float(p["sigma"]), float(p["x0"])
    model = ItoModel(dim=1, x0=[x0], drift=lambda t, x, aux: mu, diffusion=lambda t, x, aux: sigma,
                     bounds=dict(drift=abs(mu), diffusion=abs(sigma)), name="brownian")
    exact = (lambda t: stats.norm(x0 + mu * t, abs(sigma) * np.sqrt(t))) if sigma != 0 else None
    return ModelBundle("brownian", model, _scalar, exact)


def zero(params: dict) -> ModelBundle:
    p = _params(params, dict(x0=1.0))
    model = ItoModel(dim=1, x0=[float(p["x0"])], drift=lambda t, x, aux: 0.0, diffusion=lambda t, x, aux: 0.0,
                     bounds=dict(drift=0.0, diffusion=0.0), name="zero")
    return ModelBundle("zero", model, _scalar)


def local_vol(params: dict) -> ModelBundle:
    """``d xi = (s0 + s1 tanh xi) dW``."""
    p = _params(params, dict(s0=0.2, s1=0.1, x0=0.0))
    s0, s1 = float(p["s0"]), float(p["s1"])
    model = ItoModel(dim=1, x0=[float(p["x0"])], drift=lambda t, x, aux: 0.0,
                     diffusion=lambda t, x, aux: s0 + s1 * np.tanh(x[:, 0]),
                     bounds=dict(drift=0.0, diffusion=abs(s0) + abs(s1)), name="local-vol")
    return ModelBundle("local-vol", model, _scalar)


def running_average_vol(params: dict) -> ModelBundle:
    """``d xi = (s0 + s1 |A_t|) dW`` with ``A_t`` the running time average of ``xi``.

    The auxiliary state holds ``int_0^t xi_s ds`` (left-point rule); at
    ``t = 0`` the average is ``xi_0``.  The volatility is capped at ``cap``
    so that it stays bounded.
    """
    p = _params(params, dict(s0=0.2, s1=0.1, x0=0.0, cap=5.0))
    s0, s1, cap = float(p["s0"]), float(p["s1"]), float(p["cap"])

    def aux_init(x):
        return np.zeros((x.shape[0], 1))

    def aux_update(t, dt, x_prev, x_new, aux, dw):
        return aux + x_prev[:, :1] * dt

    def diffusion(t, x, aux):
        avg = x[:, 0] if t <= 0 else aux[:, 0] / t
        return np.minimum(s0 + s1 * np.abs(avg), cap)

    model = ItoModel(dim=1, x0=[float(p["x0"])], drift=lambda t, x, aux: 0.0, diffusion=diffusion,
                     aux_init=aux_init, aux_update=aux_update, bounds=dict(drift=0.0, diffusion=cap),
                     name="running-average-vol")
    return ModelBundle("running-average-vol", model, _scalar)


def ou2_sum(params: dict) -> ModelBundle:
    """Two independent OU coordinates ``dZ_i = -k Z_i dt + s dW_i`` from 0, observed through ``z1 + z2``."""
    p = _params(params, dict(kappa=1.0, sigma=1.0))
    k, s = float(p["kappa"]), float(p["sigma"])
    model = ItoModel(dim=2, x0=[0.0, 0.0], drift=lambda t, x, aux: -k * x,
                     diffusion=lambda t, x, aux: s * np.eye(2), name="ou2-sum")

    def var(t):
        return s * s * (1.0 - np.exp(-2.0 * k * t)) / (2.0 * k)

    def density(t, z):
        v = var(t)
        z = np.atleast_2d(z)
        return np.exp(-0.5 * np.sum(z * z, axis=1) / v) / (2.0 * np.pi * v)

    spec = FunctionOfMarkovSpec(
        markov=model,
        f=lambda z: z[:, 0] + z[:, 1],
        grad=lambda z: np.ones_like(z),
        hess=lambda z: np.zeros((z.shape[0], 2, 2)),
        density=density,
        inverse=lambda zp, w: w - zp[:, 0],
    )
    exact = lambda t: stats.norm(0.0, np.sqrt(2.0 * var(t)))
    return ModelBundle("ou2-sum", model, lambda x: x[..., 0] + x[..., 1], exact, function_of_markov=spec)


def _levy_from_params(p: dict | None):
    if not p:
        return None
    kind = p.get("kind", "atoms")
    lam = float(p.get("intensity", 1.0))
    if kind == "atoms":
        return FiniteActivity(lam, DiscreteJumpLaw(sizes=p.get("sizes", [-1.0, 1.0]),
                                                   probs=p.get("probs", [0.5, 0.5])))
    if kind == "laplace":
        return FiniteActivity(lam, laplace_density(float(p.get("scale", 1.0))))
    raise ConfigError(f"unknown Lévy measure kind {kind!r}")


def time_changed_levy(params: dict) -> ModelBundle:
    """Lévy triplet ``(b, sigma2, nu)`` run on the clock ``int theta``.

    ``clock='linear'`` uses ``theta(t) = c0 + c1 t``; ``clock='exp-brownian'``
    uses ``theta_t = exp(B'_t - t/2)`` with an independent Brownian ``B'``.
    """
    p = _params(params, dict(b=0.0, sigma2=1.0, levy=None, clock="linear", c0=1.0, c1=1.0, x0=0.0))
    levy = _levy_from_params(p["levy"])
    c0, c1 = float(p["c0"]), float(p["c1"])
    b, s2, x0 = float(p["b"]), float(p["sigma2"]), float(p["x0"])
    if p["clock"] == "linear":
        spec = TimeChangeSpec(rate=lambda t, x, aux: np.full(x.shape[0], c0 + c1 * t), b=b, sigma2=s2, levy=levy,
                              x0=x0)
        clock = lambda t: c0 * t + 0.5 * c1 * t * t
        exact = None
        if levy is None:
            exact = lambda t: stats.norm(x0 + b * clock(t), np.sqrt(s2 * clock(t)))
    elif p["clock"] == "exp-brownian":
        spec = TimeChangeSpec(rate=lambda t, x, aux: np.exp(aux[:, 0] - 0.5 * t), b=b, sigma2=s2, levy=levy, x0=x0,
                              aux_init=lambda x: np.zeros((x.shape[0], 1)),
                              aux_update=lambda t, dt, xp, xn, aux, dw: aux + dw, aux_noise_dim=1)
        exact = None
    else:
        raise ConfigError(f"unknown clock {p['clock']!r}")
    return ModelBundle("time-changed-levy", spec.to_ito_model(), _scalar, exact, time_change=spec)


def compound_poisson(params: dict) -> ModelBundle:
    """Compound Poisson plus optional Brownian part.

    ``law`` is ``'atoms'`` (``sizes``/``probs``) or ``'laplace'`` (``scale``).
    ``compensated`` subtracts the full jump mean, which makes the process a
    martingale.
    """
    p = _params(params, dict(intensity=1.0, sizes=[-1.0, 1.0], probs=[0.5, 0.5], law="atoms", scale=1.0,
                             sigma=0.0, compensated=True, x0=0.0))
    levy = _levy_from_params(dict(kind=p["law"], intensity=p["intensity"], sizes=p["sizes"], probs=p["probs"],
                                  scale=p["scale"]))
    sigma = float(p["sigma"])
    jumps = PoissonDriven(levy, compensation="all" if p["compensated"] else "small")
    model = ItoModel(dim=1, x0=[float(p["x0"])], drift=lambda t, x, aux: 0.0, diffusion=lambda t, x, aux: sigma,
                     jumps=jumps, bounds=dict(drift=float(np.abs(levy.simulated_mean()).max()), diffusion=abs(sigma)),
                     name="compound-poisson")
    return ModelBundle("compound-poisson", model, _scalar)


REGISTRY = {
    "brownian": brownian,
    "zero": zero,
    "local-vol": local_vol,
    "running-average-vol": running_average_vol,
    "ou2-sum": ou2_sum,
    "time-changed-levy": time_changed_levy,
    "compound-poisson": compound_poisson,
}


def build_model(name: str, params: dict | None = None) -> ModelBundle:
    try:
        builder = REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; known: {', '.join(sorted(REGISTRY))}") from None
    return builder(dict(params or {}))
