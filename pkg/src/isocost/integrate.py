"""Fixed-step RK4, closed-loop simulation and the backward isocost step."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InstabilityError, IntegrationError, StallError, UsageError
from .models import ControlLaw, SystemModel, eval_cost_rate

__all__ = [
    "Trajectory",
    "rk4_step",
    "rk4_integrate",
    "backward_step",
    "backward_step_batch",
    "simulate_closed_loop",
    "G_FLOOR",
    "DIVERGENCE_BOUND",
    "BACKWARD_MAX_STEP",
]

G_FLOOR = 1e-10
BACKWARD_MAX_STEP = 0.02
DIVERGENCE_BOUND = 1e3


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    cost: np.ndarray
    stop_reason: str = "t_max"

    @property
    def total_cost(self) -> float:
        return float(self.cost[-1])

    def __len__(self):
        return len(self.t)

    def to_csv(self, path) -> Path:
        path = Path(path)
        n, m = self.x.shape[1], self.u.shape[1]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *(f"x{i + 1}" for i in range(n)), *(f"u{j + 1}" for j in range(m)),
                        "cumulative_cost"])
            for k in range(len(self.t)):
                w.writerow([repr(float(self.t[k])), *map(repr, self.x[k].tolist()),
                            *map(repr, self.u[k].tolist()), repr(float(self.cost[k]))])
        return path


def rk4_step(model: SystemModel, x, u, dt: float) -> np.ndarray:
    """One classical RK4 step with the control held constant.

    ``dt`` may be negative (backward time) and may be an array broadcasting
    against the leading axes of ``x``.
    """
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    h = np.asarray(dt, dtype=float)
    if h.ndim:
        h = h[..., None]
    f = model.dynamics
    k1 = f(x, u)
    k2 = f(x + 0.5 * h * k1, u)
    k3 = f(x + 0.5 * h * k2, u)
    k4 = f(x + h * k3, u)
    out = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if x.ndim == 1 and not np.all(np.isfinite(out)):
        raise IntegrationError(f"non-finite RK4 stage from x={x}, u={u}, dt={dt}", state=x)
    return out


def rk4_integrate(model: SystemModel, x, u, dt: float, max_step: float | None = None) -> np.ndarray:
    """Integrate over ``dt`` with ``ceil(|dt| / max_step)`` equal RK4 steps."""
    if max_step is None or abs(dt) <= max_step:
        return rk4_step(model, x, u, dt)
    n = math.ceil(abs(dt) / max_step)
    h = dt / n
    for _ in range(n):
        x = rk4_step(model, x, u, h)
    return x


def backward_step(model: SystemModel, x, u, dgamma: float, g_floor: float = G_FLOOR,
                  max_step: float | None = BACKWARD_MAX_STEP):
    """Move a state backward in time until ``dgamma`` more cost has been spent.

    Returns ``(x_prev, dt)`` with ``dt = -dgamma / g(x, u) <= 0``.  Forward
    integration of ``x_prev`` under the frozen ``u`` for ``-dt`` seconds lands
    back on ``x``.  The interval is covered by RK4 substeps no longer than
    ``max_step``.

    Raises
    ------
    StallError
        When ``g(x, u) <= g_floor``.
    """
    x = np.asarray(x, dtype=float)
    if dgamma < 0:
        raise UsageError("dgamma must be nonnegative")
    if dgamma == 0:
        return x.copy(), 0.0
    g_c = eval_cost_rate(model, x, u)
    if g_c <= g_floor:
        raise StallError(f"cost rate {g_c:.3g} at x={x} is below floor {g_floor:g}")
    dt = -dgamma / g_c
    return rk4_integrate(model, x, u, dt, max_step), dt


def backward_step_batch(model: SystemModel, X, U, dgamma, g_floor: float = G_FLOOR,
                        max_step: float | None = BACKWARD_MAX_STEP):
    """Vectorised :func:`backward_step` over leading axes.

    Stalled or non-finite entries are reported through the returned mask
    instead of raising.  Each element's substep count depends only on its own
    ``dt`` so results do not depend on how a population is batched.

    Returns
    -------
    X_prev, dt, ok
    """
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    g = np.asarray(model.cost_rate(X, U), dtype=float)
    dgamma = np.broadcast_to(np.asarray(dgamma, dtype=float), g.shape)
    ok = np.isfinite(g) & (g > g_floor)
    dt = np.where(ok, -dgamma / np.where(ok, g, 1.0), 0.0)
    # trial controls may blow up; those rows are flagged through ``ok`` below
    with np.errstate(over="ignore", invalid="ignore"):
        if max_step is None:
            out = rk4_step(model, X, U, dt)
        else:
            nsub = np.maximum(np.ceil(np.abs(dt) / max_step), 1).astype(int)
            h = dt / nsub
            out = X.copy()
            for s in range(int(nsub.max()) if nsub.size else 0):
                active = nsub > s
                if active.all():
                    out = rk4_step(model, out, U, h)
                else:
                    out[active] = rk4_step(model, out[active], U[active], h[active])
    with np.errstate(invalid="ignore"):
        ok &= np.all(np.isfinite(out), axis=-1)
    return out, dt, ok


def simulate_closed_loop(model: SystemModel, law: ControlLaw, x0, dt: float = 0.01,
                         t_max: float = 20.0, stop_radius: float = 1e-2,
                         divergence_bound: float = DIVERGENCE_BOUND) -> Trajectory:
    """Integrate ``xdot = f(x, c(x))`` with zero-order-hold control.

    Cost accumulates by the trapezoidal rule on ``g`` over each step with the
    held control.  Stops on ``|x| <= stop_radius`` (``stop_reason='radius'``)
    or at ``t_max``.

    Raises
    ------
    InstabilityError
        If ``|x|`` exceeds ``divergence_bound``; the partial trajectory is
        attached.
    """
    if dt <= 0:
        raise UsageError("dt must be positive")
    x = np.asarray(x0, dtype=float).copy()
    n_steps = int(round(t_max / dt))
    ts, xs, us, cs = [0.0], [x.copy()], [], [0.0]
    reason = "t_max"
    cost = 0.0
    for k in range(n_steps):
        if np.linalg.norm(x) <= stop_radius:
            reason = "radius"
            break
        u = np.atleast_1d(np.asarray(law(x), dtype=float))
        g0 = float(model.cost_rate(x, u))
        x = rk4_step(model, x, u, dt)
        g1 = float(model.cost_rate(x, u))
        cost += 0.5 * (g0 + g1) * dt
        us.append(u)
        ts.append((k + 1) * dt)
        xs.append(x.copy())
        cs.append(cost)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > divergence_bound:
            us.append(u)
            traj = Trajectory(np.array(ts), np.array(xs), np.array(us), np.array(cs), "diverged")
            raise InstabilityError(f"state left |x| <= {divergence_bound:g} at t={ts[-1]:.3f}", traj)
    else:
        if np.linalg.norm(x) <= stop_radius:
            reason = "radius"
    us.append(np.atleast_1d(np.asarray(law(x), dtype=float)))
    return Trajectory(np.array(ts), np.array(xs), np.array(us), np.array(cs), reason)
