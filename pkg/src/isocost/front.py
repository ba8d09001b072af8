"""Isocost fronts: agent populations sharing one cost level.

A front stores its agents as parallel arrays (states, controls, alive flags,
stable ids).  Geometry helpers treat a planar front as the star-shaped
polygon obtained by sorting agents by polar angle about the origin.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import (
    DegenerateFrontError,
    GeometryError,
    UnsupportedDimensionError,
    UsageError,
)
from .integrate import BACKWARD_MAX_STEP, G_FLOOR, backward_step_batch
from .lqr import lqr_for_model
from .models import ControlLaw, SystemModel

__all__ = [
    "FrontAgent",
    "IsoCostFront",
    "SurroundResult",
    "init_front_random",
    "init_front_lqr",
    "propagate_front",
    "propagate_front_to",
    "front_radius",
    "front_inscribed_radius",
    "resample_front",
    "front_hypervolume",
    "front_polygon",
    "front_normals",
    "surrounds",
    "fronts_equal",
    "fronts_to_csv",
    "fronts_from_csv",
    "GAMMA_MIN",
]

GAMMA_MIN = 1e-12


@dataclass(frozen=True)
class FrontAgent:
    state: np.ndarray
    gamma: float
    control: np.ndarray
    alive: bool
    id: int


@dataclass
class IsoCostFront:
    """Agents on one isocost level ``gamma`` at generation ``generation``."""

    gamma: float
    states: np.ndarray
    controls: np.ndarray
    alive: np.ndarray
    ids: np.ndarray
    generation: int = 0
    dt: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.controls = np.asarray(self.controls, dtype=float).reshape(len(self.states), -1)
        self.alive = np.asarray(self.alive, dtype=bool)
        self.ids = np.asarray(self.ids, dtype=int)
        if self.gamma < 0:
            raise UsageError("gamma must be nonnegative")

    def __len__(self):
        return len(self.states)

    @property
    def n_alive(self) -> int:
        return int(self.alive.sum())

    @property
    def alive_states(self) -> np.ndarray:
        return self.states[self.alive]

    @property
    def agents(self) -> list[FrontAgent]:
        return [FrontAgent(self.states[i].copy(), self.gamma, self.controls[i].copy(),
                           bool(self.alive[i]), int(self.ids[i])) for i in range(len(self))]

    def copy(self) -> "IsoCostFront":
        return replace(self, states=self.states.copy(), controls=self.controls.copy(),
                       alive=self.alive.copy(), ids=self.ids.copy())


def init_front_random(N: int, R0: float, gamma0: float, seed=0, state_dim: int = 2,
                      control_dim: int = 1) -> IsoCostFront:
    """``N`` agents at uniformly random directions on the sphere of radius ``R0``."""
    if N < 3 or R0 <= 0:
        raise UsageError("need N >= 3 and R0 > 0")
    rng = np.random.default_rng(seed)
    if state_dim == 2:
        th = rng.uniform(0.0, 2.0 * math.pi, N)
        states = R0 * np.column_stack([np.cos(th), np.sin(th)])
    else:
        d = rng.standard_normal((N, state_dim))
        states = R0 * d / np.linalg.norm(d, axis=1, keepdims=True)
    return IsoCostFront(gamma0, states, np.zeros((N, control_dim)), np.ones(N, bool), np.arange(N))


def init_front_lqr(model: SystemModel, N: int, gamma0: float,
                   gamma_min: float = GAMMA_MIN) -> IsoCostFront:
    """Agents on the ellipse ``x'Px = gamma0`` of the linearized LQR problem.

    Agents are evenly spaced in arclength, so the tips of a thin ellipse
    are covered as densely as its flanks; each agent starts with ``u = -Kx``.
    """
    if model.state_dim != 2:
        raise UnsupportedDimensionError("LQR front initialisation is planar only")
    if N < 3:
        raise UsageError("need N >= 3")
    if gamma0 < gamma_min:
        raise UsageError(f"gamma0={gamma0:g} below gamma_min={gamma_min:g}: front collapses to the origin")
    _, P, K = lqr_for_model(model)
    # x = sqrt(gamma0) L^-T (cos t, sin t) with P = L L'
    Linv = np.linalg.inv(np.linalg.cholesky(P)).T
    t = np.linspace(0.0, 2.0 * math.pi, 64 * N + 1)
    curve = math.sqrt(gamma0) * np.column_stack([np.cos(t), np.sin(t)]) @ Linv.T
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(curve, axis=0), axis=1))])
    tq = np.interp(arc[-1] * np.arange(N) / N, arc, t)
    states = math.sqrt(gamma0) * np.column_stack([np.cos(tq), np.sin(tq)]) @ Linv.T
    controls = -states @ K.T
    return IsoCostFront(gamma0, states, controls, np.ones(N, bool), np.arange(N))


def propagate_front(model: SystemModel, law: ControlLaw, front: IsoCostFront, dgamma: float,
                    substeps: int = 1, g_floor: float = G_FLOOR,
                    max_step: float | None = BACKWARD_MAX_STEP) -> IsoCostFront:
    """Push every alive agent one cost increment outward under ``law``.

    Each of the ``substeps`` sub-increments is one backward isocost step with
    the law evaluated at the agent's current state.  Agents that stall or
    diverge are marked dead.

    Raises
    ------
    DegenerateFrontError
        If fewer than three agents survive.
    """
    if dgamma < 0:
        raise UsageError("dgamma must be nonnegative")
    if dgamma == 0:
        return front.copy()
    if front.n_alive < 3:
        raise DegenerateFrontError("front has fewer than 3 alive agents")
    out = front.copy()
    idx = np.flatnonzero(out.alive)
    X = out.states[idx]
    U = out.controls[idx]
    ok = np.ones(len(idx), bool)
    step = dgamma / substeps
    dt_total = np.zeros(len(idx))
    for _ in range(substeps):
        U = np.asarray(law(X), dtype=float).reshape(len(idx), -1)
        Xn, dt, good = backward_step_batch(model, X, U, step, g_floor, max_step)
        ok &= good
        X = np.where(ok[:, None], Xn, X)
        dt_total += dt
    out.states[idx] = X
    out.controls[idx] = U
    out.alive[idx] = ok
    out.gamma = front.gamma + dgamma
    out.generation = front.generation + 1
    out.dt = np.zeros(len(out))
    out.dt[idx] = dt_total
    if out.n_alive < 3:
        raise DegenerateFrontError(f"only {out.n_alive} agents survived the step to gamma={out.gamma:g}")
    return out


def propagate_front_to(model: SystemModel, law: ControlLaw, front: IsoCostFront, gamma: float,
                       max_backward_time: float = 0.05, max_total_time: float = 60.0,
                       g_floor: float = G_FLOOR, max_step: float | None = BACKWARD_MAX_STEP) -> IsoCostFront:
    """Carry every agent of ``front`` to the cost level ``gamma`` under ``law``.

    Unlike :func:`propagate_front` each agent takes its own cost increments,
    sized so that no single backward step lasts longer than
    ``max_backward_time`` seconds.  The law is fixed, so agents need not
    share intermediate levels.  An agent whose backward flow stops accruing
    cost (total backward time above ``max_total_time``, or ``g`` below
    ``g_floor``) never reaches ``gamma`` and is marked dead.
    """
    if gamma < front.gamma:
        raise UsageError("target gamma lies below the front")
    out = front.copy()
    idx = np.flatnonzero(out.alive)
    X = out.states[idx].copy()
    U = out.controls[idx].copy()
    remaining = np.full(len(idx), gamma - front.gamma)
    elapsed = np.zeros(len(idx))
    ok = np.ones(len(idx), bool)
    active = ok & (remaining > 0)
    with np.errstate(over="ignore", invalid="ignore"):
        while np.any(active):
            a = np.flatnonzero(active)
            Ua = np.asarray(law(X[a]), dtype=float).reshape(len(a), -1)
            g = np.asarray(model.cost_rate(X[a], Ua), dtype=float)
            step = np.minimum(remaining[a], max_backward_time * np.maximum(g, 0.0))
            Xn, dt, good = backward_step_batch(model, X[a], Ua, step, g_floor, max_step)
            good &= np.all(np.isfinite(Xn), axis=1)
            X[a] = np.where(good[:, None], Xn, X[a])
            U[a] = Ua
            elapsed[a] -= np.where(good, dt, 0.0)
            remaining[a] = np.where(good, remaining[a] - step, remaining[a])
            ok[a] &= good & (elapsed[a] <= max_total_time)
            active = ok & (remaining > 1e-12 * max(1.0, abs(gamma)))
    out.states[idx] = X
    out.controls[idx] = U
    out.alive[idx] = ok
    out.gamma = float(gamma)
    out.generation = front.generation + 1
    out.dt = np.zeros(len(out))
    out.dt[idx] = -elapsed
    if out.n_alive < 3:
        raise DegenerateFrontError(f"only {out.n_alive} agents reached gamma={gamma:g}")
    return out


def front_radius(front: IsoCostFront) -> float:
    """Root-mean-square norm of the alive agents."""
    X = front.alive_states
    if len(X) == 0:
        raise DegenerateFrontError("front has no alive agents")
    return float(np.sqrt(np.mean(np.sum(X * X, axis=1))))


def _require_planar(front):
    if front.states.shape[1] != 2:
        raise UnsupportedDimensionError("front geometry is implemented for 2-D states only")


def front_polygon(front: IsoCostFront, return_index: bool = False):
    """Alive agents sorted by polar angle, duplicate angles reduced to the farthest."""
    _require_planar(front)
    idx = np.flatnonzero(front.alive)
    X = front.states[idx]
    ang = np.arctan2(X[:, 1], X[:, 0])
    r2 = np.sum(X * X, axis=1)
    order = np.lexsort((-r2, ang))
    ang_s = ang[order]
    keep = np.ones(len(order), bool)
    keep[1:] = ang_s[1:] != ang_s[:-1]
    order = order[keep]
    if return_index:
        return X[order], idx[order]
    return X[order]


def _shoelace(V):
    x, y = V[:, 0], V[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def front_hypervolume(front: IsoCostFront) -> float:
    """Area enclosed by the angularly ordered polygon of alive agents."""
    _require_planar(front)
    if front.n_alive < 3:
        raise DegenerateFrontError("need at least 3 alive agents")
    V = front_polygon(front)
    if len(V) < 3:
        return 0.0
    return max(_shoelace(V), 0.0)


def front_normals(front: IsoCostFront, order=None, span: float = 1.0) -> np.ndarray:
    """Unit outward normals at every agent (rows of dead agents are radial).

    The tangent at an agent is the chord between the nearest vertices at
    least ``span`` mean vertex spacings away on either side, measured along
    the front.  Taking immediate neighbours instead makes the normal pure
    noise wherever agents bunch up, e.g. at sharp tips.

    Parameters
    ----------
    order : array of agent indices, optional
        Counter-clockwise cyclic order of the agents along the curve.  By
        default agents are sorted by polar angle, which scrambles needle-like
        fronts whose flanks run almost radially; a solver that tracks its
        agents should pass the order they were created in.
    """
    _require_planar(front)
    normals = np.zeros_like(front.states)
    r = np.linalg.norm(front.states, axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        normals[:] = np.where(r > 0, front.states / r, 0.0)
    if order is None:
        idx = np.flatnonzero(front.alive)
        ang = np.arctan2(front.states[idx, 1], front.states[idx, 0])
        idx = idx[np.argsort(ang, kind="stable")]
    else:
        idx = np.asarray(order, dtype=int)
        idx = idx[front.alive[idx]]
    if len(idx) < 3:
        return normals
    Xs = front.states[idx]
    n_pts = len(Xs)
    seg = np.linalg.norm(np.roll(Xs, -1, axis=0) - Xs, axis=1)
    L = float(seg.sum())
    s_arc = np.concatenate([[0.0], np.cumsum(seg[:-1])])
    # shaved so an exactly uniform polygon picks its immediate neighbours on both sides
    h = span * L / n_pts * (1.0 - 1e-9)
    # three laps of the closed polygon so every lookup stays in range
    S = np.concatenate([s_arc - L, s_arc, s_arc + L])
    fwd = np.searchsorted(S, s_arc + max(h, 0.0), side="left")
    bwd = np.searchsorted(S, s_arc - max(h, 0.0), side="right") - 1
    fwd = np.maximum(fwd, np.arange(n_pts) + n_pts + 1)
    bwd = np.minimum(bwd, np.arange(n_pts) + n_pts - 1)
    t = Xs[fwd % n_pts] - Xs[bwd % n_pts]
    n = np.column_stack([t[:, 1], -t[:, 0]])
    nn = np.linalg.norm(n, axis=1)
    good = nn > 1e-14 * max(1.0, float(np.max(np.abs(Xs))))
    out = normals[idx]
    out[good] = n[good] / nn[good, None]
    normals[idx] = out
    return normals


@dataclass
class SurroundResult:
    verdict: bool
    violators: list
    max_excess: float
    tolerance: float

    def __bool__(self):
        return self.verdict


def _segment_distance(P, A, B):
    """Distance from each point in P (k,2) to every segment A[j]B[j]; returns (k, s)."""
    AB = B - A
    L2 = np.sum(AB * AB, axis=1)
    AP = P[:, None, :] - A[None, :, :]
    t = np.clip(np.sum(AP * AB[None], axis=2) / np.where(L2 > 0, L2, 1.0), 0.0, 1.0)
    proj = A[None] + t[..., None] * AB[None]
    return np.linalg.norm(P[:, None, :] - proj, axis=2)


def surrounds(outer: IsoCostFront, inner: IsoCostFront, tol: float | None = None,
              gamma_tol: float = 1e-9) -> SurroundResult:
    """Does ``outer`` enclose every alive agent of ``inner``?

    An inner agent violates the relation when it lies outside the outer
    polygon by more than ``tol`` (default ``1e-6 * front_radius(outer)``).

    Raises
    ------
    UsageError
        If the two fronts are at different cost levels.
    GeometryError
        If the outer polygon does not enclose the origin.
    """
    _require_planar(outer)
    _require_planar(inner)
    if abs(outer.gamma - inner.gamma) > gamma_tol * max(1.0, abs(outer.gamma)):
        raise UsageError(f"fronts at different levels: {outer.gamma} vs {inner.gamma}")
    if outer.n_alive < 3 or inner.n_alive < 3:
        raise DegenerateFrontError("surround check needs >= 3 alive agents on each front")
    V = front_polygon(outer)
    if len(V) < 3:
        raise GeometryError("outer polygon is degenerate")
    ang = np.arctan2(V[:, 1], V[:, 0])
    gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * math.pi]]))
    if np.max(gaps) >= math.pi or _shoelace(V) <= 0:
        raise GeometryError("outer polygon does not enclose the origin")
    if tol is None:
        tol = 1e-6 * front_radius(outer)

    idx = np.flatnonzero(inner.alive)
    Pts = inner.states[idx]
    phi = np.arctan2(Pts[:, 1], Pts[:, 0])
    k = len(V)
    j = (np.searchsorted(ang, phi, side="right") - 1) % k
    A = V[j]
    B = V[(j + 1) % k]
    d = np.column_stack([np.cos(phi), np.sin(phi)])
    cross_ab = A[:, 0] * B[:, 1] - A[:, 1] * B[:, 0]
    e = B - A
    cross_de = d[:, 0] * e[:, 1] - d[:, 1] * e[:, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        r_edge = np.where(cross_de != 0, cross_ab / cross_de, np.inf)
    rp = np.linalg.norm(Pts, axis=1)
    outside = rp > r_edge
    excess = np.zeros(len(idx))
    if np.any(outside):
        Vn = np.roll(V, -1, axis=0)
        excess[outside] = np.min(_segment_distance(Pts[outside], V, Vn), axis=1)
    bad = excess > tol
    return SurroundResult(not bool(bad.any()), inner.ids[idx[bad]].tolist(),
                          float(excess.max(initial=0.0)), float(tol))


def front_inscribed_radius(front: IsoCostFront) -> float:
    """Radius of the largest origin-centred disc inside the front polygon."""
    _require_planar(front)
    V = front_polygon(front)
    return float(np.min(_segment_distance(np.zeros((1, 2)), V, np.roll(V, -1, axis=0))))


def resample_front(front: IsoCostFront, N: int) -> IsoCostFront:
    """Re-space ``N`` agents evenly in arclength along the current front.

    The curve is a periodic cubic spline through the angularly ordered
    agents, so new agents sit on a smooth curve rather than on chords.
    Controls are interpolated linearly along the same parameter.
    """
    V, idx = front_polygon(front, return_index=True)
    Uc = front.controls[idx]
    seg = np.linalg.norm(np.roll(V, -1, axis=0) - V, axis=1)
    keep = seg > 1e-12 * max(1.0, float(np.max(np.abs(V))))
    V, Uc, seg = V[keep], Uc[keep], seg[keep]
    if len(V) < 4:
        return front
    s = np.concatenate([[0.0], np.cumsum(seg)])
    L = s[-1]
    spline = CubicSpline(s, np.vstack([V, V[:1]]), bc_type="periodic")
    # chord length is only a proxy for arclength; measure the spline itself
    fine = np.linspace(0.0, L, 16 * len(V) + 1)
    P = spline(fine)
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(P, axis=0), axis=1))])
    sq = np.interp(arc[-1] * np.arange(N) / N, arc, fine)
    states = spline(sq)
    Uw = np.vstack([Uc, Uc[:1]])
    controls = np.column_stack([np.interp(sq, s, Uw[:, j]) for j in range(Uw.shape[1])])
    return IsoCostFront(front.gamma, states, controls, np.ones(N, bool), np.arange(N),
                        generation=front.generation, dt=None)


def fronts_equal(a: IsoCostFront, b: IsoCostFront, tol: float | None = None) -> bool:
    """Two fronts coincide when each surrounds the other within ``tol``."""
    return bool(surrounds(a, b, tol)) and bool(surrounds(b, a, tol))


def fronts_to_csv(fronts, path, extra_control_name: str = "u") -> Path:
    """Write fronts as rows ``generation, gamma, agent_id, x1.., u.., alive``."""
    path = Path(path)
    fronts = list(fronts)
    n = fronts[0].states.shape[1]
    m = fronts[0].controls.shape[1]
    ucols = [extra_control_name] if m == 1 else [f"{extra_control_name}{j + 1}" for j in range(m)]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["generation", "gamma", "agent_id", *(f"x{i + 1}" for i in range(n)), *ucols, "alive"])
        for fr in fronts:
            for i in range(len(fr)):
                w.writerow([fr.generation, repr(float(fr.gamma)), int(fr.ids[i]),
                            *map(repr, fr.states[i].tolist()), *map(repr, fr.controls[i].tolist()),
                            int(fr.alive[i])])
    return path


def fronts_from_csv(path) -> list[IsoCostFront]:
    """Inverse of :func:`fronts_to_csv`."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], rows[1:]
    xcols = [i for i, h in enumerate(head) if h.startswith("x")]
    ucols = [i for i, h in enumerate(head) if h.startswith("u")]
    groups: dict[int, list] = {}
    for r in body:
        groups.setdefault(int(r[0]), []).append(r)
    out = []
    for g in sorted(groups):
        rs = groups[g]
        out.append(IsoCostFront(
            float(rs[0][1]),
            np.array([[float(r[i]) for i in xcols] for r in rs]),
            np.array([[float(r[i]) for i in ucols] for r in rs]),
            np.array([r[-1] == "1" for r in rs]),
            np.array([int(r[2]) for r in rs]),
            generation=g,
        ))
    return out
