"""Continuous-time system/cost abstraction and the two benchmark problems.

All model callables broadcast over leading axes: ``x`` has shape ``(..., n)``
and ``u`` has shape ``(..., m)``.  That lets the front and DP solvers evaluate
whole agent populations or grids in one call.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    ModelDefinitionError,
    ModelEvaluationError,
    SingularityError,
    UsageError,
)

__all__ = [
    "SystemModel",
    "ControlLaw",
    "NearSingularWarning",
    "eval_dynamics",
    "eval_cost_rate",
    "make_system_a",
    "make_pendulum",
    "linearize_forward_a",
    "linearize_inverse_a",
    "system_a_optimal_law",
    "get_model",
    "register_model",
    "available_models",
]

SQRT3 = math.sqrt(3.0)


class NearSingularWarning(RuntimeWarning):
    """Input transform evaluated close to (but above) its singularity floor."""


@dataclass(frozen=True)
class SystemModel:
    """Deterministic control-affine-or-not system with a running cost.

    Parameters
    ----------
    state_dim, control_dim : int
        Dimensions of x and u.
    dynamics : callable
        ``dynamics(x, u) -> xdot``; must vanish at the origin.
    cost_rate : callable
        ``cost_rate(x, u) -> g``; nonnegative, zero at the origin.
    state_domain : sequence of (lo, hi), optional
        Box on which the model is considered valid.
    label : str
    quadratic_cost : (Q, R), optional
        Quadratic approximation of ``cost_rate`` at the origin.  Estimated by
        finite differences when absent.
    """

    state_dim: int
    control_dim: int
    dynamics: Callable[[np.ndarray, np.ndarray], np.ndarray]
    cost_rate: Callable[[np.ndarray, np.ndarray], np.ndarray]
    state_domain: Optional[tuple] = None
    label: str = "model"
    quadratic_cost: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        if int(self.state_dim) < 1 or int(self.control_dim) < 1:
            raise UsageError("state_dim and control_dim must be positive")
        if self.state_domain is not None and len(self.state_domain) != self.state_dim:
            raise UsageError("state_domain needs one (lo, hi) pair per state")

    def cost_matrices(self, eps: float = 1e-4):
        """Return ``(Q, R)`` such that g(x, u) ~ x'Qx + u'Ru near the origin."""
        if self.quadratic_cost is not None:
            Q, R = self.quadratic_cost
            return np.array(Q, dtype=float), np.array(R, dtype=float)
        n, m = self.state_dim, self.control_dim
        H = _hessian(lambda w: float(self.cost_rate(w[:n], w[n:])), np.zeros(n + m), eps)
        return 0.5 * H[:n, :n], 0.5 * H[n:, n:]


@dataclass(frozen=True)
class ControlLaw:
    """State feedback ``u = c(x)``; broadcasts like the model callables."""

    func: Callable[[np.ndarray], np.ndarray]
    label: str = "law"

    def __call__(self, x):
        return self.func(np.asarray(x, dtype=float))


def _hessian(fun, w0, eps):
    k = w0.size
    H = np.empty((k, k))
    I = np.eye(k) * eps
    for i in range(k):
        for j in range(i, k):
            val = (fun(w0 + I[i] + I[j]) - fun(w0 + I[i] - I[j])
                   - fun(w0 - I[i] + I[j]) + fun(w0 - I[i] - I[j])) / (4 * eps * eps)
            H[i, j] = H[j, i] = val
    return H


def _check_dims(model: SystemModel, x, u):
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if x.shape[-1:] != (model.state_dim,):
        raise UsageError(f"state has shape {x.shape}, model {model.label!r} expects n={model.state_dim}")
    if u.shape[-1:] != (model.control_dim,):
        raise UsageError(f"control has shape {u.shape}, model {model.label!r} expects m={model.control_dim}")
    return x, u


def eval_dynamics(model: SystemModel, x, u) -> np.ndarray:
    """Evaluate ``xdot = f(x, u)`` with dimension and finiteness checks."""
    x, u = _check_dims(model, x, u)
    xdot = np.asarray(model.dynamics(x, u), dtype=float)
    if not np.all(np.isfinite(xdot)):
        raise ModelEvaluationError(f"{model.label}: non-finite dynamics at x={x}, u={u}")
    return xdot


def eval_cost_rate(model: SystemModel, x, u):
    """Evaluate the running cost ``g(x, u)``; negative or NaN output aborts."""
    x, u = _check_dims(model, x, u)
    g = np.asarray(model.cost_rate(x, u), dtype=float)
    if not np.all(np.isfinite(g)) or np.any(g < 0):
        raise ModelDefinitionError(f"{model.label}: cost rate {g} invalid at x={x}, u={u}")
    return float(g) if g.ndim == 0 else g


# -- benchmark problems ------------------------------------------------------

def _system_a_dynamics(x, u):
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([x2, u[..., 0] - x1 * x1], axis=-1)


def _system_a_cost(x, u):
    x1, x2 = x[..., 0], x[..., 1]
    c = np.cos(x2)
    return x1 * x1 + np.sin(x2) ** 2 + c * c * (u[..., 0] - x1 * x1) ** 2


def make_system_a() -> SystemModel:
    """Second-order nonlinear example with its non-quadratic running cost."""
    return SystemModel(
        state_dim=2,
        control_dim=1,
        dynamics=_system_a_dynamics,
        cost_rate=_system_a_cost,
        state_domain=((-10.0, 10.0), (-math.pi / 2, math.pi / 2)),
        label="system_a",
        quadratic_cost=(np.eye(2), np.eye(1)),
    )


def make_pendulum(mass: float = 1.0, length: float = 1.0, damping: float = 0.5,
                  gravity: float = 9.81) -> SystemModel:
    """Damped pendulum regulated to the upright position.

    The state is ``e1 = theta - pi``, ``e2 = theta_dot`` with theta measured
    from the hanging position, so that

        e1' = e2
        e2' = (g/l) sin(e1) - b/(m l^2) e2 - u/(m l^2)

    and the origin is the unstable upright equilibrium.  The formula is the
    same one written in terms of the upright-referenced angle, so ``(pi, 0)``
    and ``(-pi, 0)`` (hanging) are equilibria as well.  Running cost is
    ``e1^2 + e2^2 + u^2``.
    """
    ml2 = mass * length * length
    a = gravity / length
    c = damping / ml2
    d = 1.0 / ml2

    def dynamics(e, u):
        e1, e2 = e[..., 0], e[..., 1]
        return np.stack([e2, a * np.sin(e1) - c * e2 - d * u[..., 0]], axis=-1)

    def cost_rate(e, u):
        return e[..., 0] ** 2 + e[..., 1] ** 2 + u[..., 0] ** 2

    return SystemModel(
        state_dim=2,
        control_dim=1,
        dynamics=dynamics,
        cost_rate=cost_rate,
        state_domain=((-10.0, 10.0), (-10.0, 10.0)),
        label="pendulum",
        quadratic_cost=(np.eye(2), np.eye(1)),
    )


# -- feedback linearization of system A -----------------------------------------

def linearize_forward_a(x, u):
    """Map ``(x, u)`` to double-integrator coordinates ``(z, v)``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    z = np.stack([x1, np.sin(x2)], axis=-1)
    v = np.cos(x2) * (u - x1 * x1)
    return z, v


def linearize_inverse_a(x, v, floor: float = 1e-6, warn_below: float = 1e-2):
    """Recover ``u = v / cos(x2) + x1^2``.

    Raises
    ------
    SingularityError
        If ``|cos(x2)| < floor`` anywhere.
    """
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    c = np.cos(x2)
    ac = np.abs(c)
    if np.any(ac < floor):
        raise SingularityError(f"|cos(x2)| = {np.min(ac):.3g} below floor {floor:g}")
    if np.any(ac < warn_below):
        warnings.warn(f"near-singular input transform, |cos(x2)| = {np.min(ac):.3g}",
                      NearSingularWarning, stacklevel=2)
    u = np.asarray(v, dtype=float) / c + x1 * x1
    return float(u) if np.ndim(u) == 0 else u


def system_a_optimal_law(gain: Sequence[float] = (1.0, SQRT3), floor: float = 1e-6) -> ControlLaw:
    """Closed-form optimal law for system A via the double-integrator LQR.

    ``u = x1^2 + (-k1 z1 - k2 z2) / cos(x2)`` with ``z = (x1, sin x2)``.
    """
    k1, k2 = float(gain[0]), float(gain[1])

    def law(x):
        x1, x2 = x[..., 0], x[..., 1]
        c = np.cos(x2)
        c = np.where(np.abs(c) < floor, np.copysign(floor, c), c)
        v = -k1 * x1 - k2 * np.sin(x2)
        return (x1 * x1 + v / c)[..., None]

    return ControlLaw(law, label="system_a_lqr_exact")


# -- registry ---------------------------------------------------------------

_REGISTRY: dict[str, Callable[[], SystemModel]] = {
    "system_a": make_system_a,
    "pendulum": make_pendulum,
}


def register_model(name: str, factory: Callable[[], SystemModel]) -> None:
    """Make a custom model available to the harness under ``name``."""
    _REGISTRY[name] = factory


def available_models() -> list[str]:
    return sorted(_REGISTRY)


def get_model(name: str) -> SystemModel:
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise UsageError(f"unknown model {name!r}; known: {', '.join(available_models())}") from None
