"""Grid value iteration: the standard dynamic-programming comparator.

The state box is meshed with a tensor grid, the control interval with a
uniform 1-D grid, and the discounted Bellman backup

    V(x) <- min_u [ g(x, u) dt + beta V(x+) ],    x+ = rk4_step(x, u, dt)

is swept Jacobi-style until the sup-norm change drops below the tolerance.
Successor values come from multilinear interpolation on the grid.  The
successor lookups depend only on the grid, so they are precomputed once and
each sweep is a gather plus a min.
"""

from __future__ import annotations

import csv
import itertools
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import UnsupportedDimensionError, UsageError
from .integrate import rk4_step
from .models import ControlLaw, SystemModel

__all__ = ["GridSpec", "ValueField", "solve_dp", "dp_policy", "grid_axes", "discount_factor"]


@dataclass(frozen=True)
class GridSpec:
    """Mesh and iteration settings for :func:`solve_dp`.

    Defaults follow the desk-scale benchmark: a 40 x 40 state grid on
    ``[-10, 10]^2`` and 30 control levels on ``[-50, 50]``.

    Parameters
    ----------
    x_bounds : sequence of (lo, hi)
        One interval per state coordinate.
    x_points : sequence of int
        Grid points per state coordinate.
    u_bounds : (lo, hi)
    u_points : int
    dt : float
        Time step of the discrete-time model, seconds.
    decay : float
        Discount accumulated over one time constant.
    time_constant : float
        Dominant time constant ``T_c`` used to turn ``decay`` into a per-step
        factor ``beta = decay ** (dt / T_c)``.
    tolerance : float
        Sup-norm change at which iteration stops.
    max_iterations : int
    """

    x_bounds: tuple = ((-10.0, 10.0), (-10.0, 10.0))
    x_points: tuple = (40, 40)
    u_bounds: tuple = (-50.0, 50.0)
    u_points: int = 30
    dt: float = 0.05
    decay: float = 0.9
    time_constant: float = 1.0
    tolerance: float = 1e-5
    max_iterations: int = 10000

    def __post_init__(self):
        object.__setattr__(self, "x_bounds", tuple(tuple(map(float, b)) for b in self.x_bounds))
        object.__setattr__(self, "x_points", tuple(int(p) for p in self.x_points))
        object.__setattr__(self, "u_bounds", tuple(map(float, self.u_bounds)))
        if len(self.x_bounds) != len(self.x_points):
            raise UsageError("x_bounds and x_points must have the same length")
        if any(p < 2 for p in self.x_points) or self.u_points < 2:
            raise UsageError("every axis needs at least 2 points")
        if any(not lo < hi for lo, hi in self.x_bounds) or not self.u_bounds[0] < self.u_bounds[1]:
            raise UsageError("grid intervals must have lo < hi")
        if self.tolerance <= 0:
            raise UsageError("tolerance must be positive")
        if self.dt <= 0 or self.time_constant <= 0:
            raise UsageError("dt and time_constant must be positive")
        if not 0 < self.decay < 1:
            raise UsageError("decay must lie in (0, 1)")
        if self.max_iterations < 1:
            raise UsageError("max_iterations must be >= 1")

    @property
    def beta(self) -> float:
        return discount_factor(self.decay, self.dt, self.time_constant)

    @property
    def controls(self) -> np.ndarray:
        return np.linspace(self.u_bounds[0], self.u_bounds[1], self.u_points)

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise UsageError(f"unknown grid config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["x_bounds"] = [list(b) for b in self.x_bounds]
        d["x_points"] = list(self.x_points)
        d["u_bounds"] = list(self.u_bounds)
        return d


def discount_factor(decay: float, dt: float, time_constant: float) -> float:
    """Per-step discount ``decay ** (dt / time_constant)``."""
    return float(decay ** (dt / time_constant))


def grid_axes(spec: GridSpec) -> list[np.ndarray]:
    return [np.linspace(lo, hi, p) for (lo, hi), p in zip(spec.x_bounds, spec.x_points)]


@dataclass
class ValueField:
    """Converged (or capped) value grid with its greedy controls.

    ``values`` and ``greedy_index`` have shape ``spec.x_points``;
    ``greedy_u`` holds the control values at those indices.
    """

    values: np.ndarray
    greedy_index: np.ndarray
    greedy_u: np.ndarray
    iterations: int
    residual: float
    converged: bool
    axes: list = field(repr=False)
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    clamped_fraction: float = 0.0
    timing: dict = field(default_factory=dict)

    def to_csv(self, path) -> Path:
        """Write rows ``x1, x2, ..., V, u_greedy`` in C order."""
        path = Path(path)
        mesh = np.meshgrid(*self.axes, indexing="ij")
        n = len(self.axes)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([*(f"x{i + 1}" for i in range(n)), "V", "u_greedy"])
            for idx in np.ndindex(*self.values.shape):
                w.writerow([*(repr(float(m[idx])) for m in mesh), repr(float(self.values[idx])),
                            repr(float(self.greedy_u[idx]))])
        return path

    @classmethod
    def from_csv(cls, path, spec: GridSpec | None = None) -> "ValueField":
        """Reload a field written by :meth:`to_csv` for policy-only runs.

        Greedy indices are recovered against ``spec.controls`` when a spec is
        given, otherwise against the distinct stored controls.
        """
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        n = data.shape[1] - 2
        axes = [np.unique(data[:, i]) for i in range(n)]
        shape = tuple(len(a) for a in axes)
        if int(np.prod(shape)) != len(data):
            raise UsageError(f"{path}: rows do not form a full tensor grid")
        values = data[:, n].reshape(shape)
        greedy_u = data[:, n + 1].reshape(shape)
        levels = spec.controls if spec is not None else np.unique(greedy_u)
        index = np.abs(greedy_u[..., None] - levels).argmin(axis=-1)
        return cls(values, index, greedy_u, 0, float("nan"), True, axes)


def _multilinear(axes, pts):
    """Corner indices and weights for multilinear interpolation.

    Points are clamped into the box first.  Returns ``(flat_idx, weights)``
    each of shape ``pts.shape[:-1] + (2**n,)``.
    """
    n = len(axes)
    shape = tuple(len(a) for a in axes)
    lo_idx, frac = [], []
    for d, a in enumerate(axes):
        p = np.clip(pts[..., d], a[0], a[-1])
        i = np.clip(np.searchsorted(a, p, side="right") - 1, 0, len(a) - 2)
        lo_idx.append(i)
        frac.append((p - a[i]) / (a[i + 1] - a[i]))
    strides = np.array([int(np.prod(shape[d + 1:])) for d in range(n)])
    idx, wts = [], []
    for corner in itertools.product((0, 1), repeat=n):
        flat = sum((lo_idx[d] + corner[d]) * strides[d] for d in range(n))
        w = np.ones_like(frac[0])
        for d in range(n):
            w = w * (frac[d] if corner[d] else 1.0 - frac[d])
        idx.append(flat)
        wts.append(w)
    return np.stack(idx, axis=-1), np.stack(wts, axis=-1)


def _inside(axes, pts):
    ok = np.ones(pts.shape[:-1], bool)
    for d, a in enumerate(axes):
        ok &= (pts[..., d] >= a[0]) & (pts[..., d] <= a[-1])
    return ok


def solve_dp(model: SystemModel, spec: GridSpec, V0=None) -> ValueField:
    """Discounted value iteration on the grid described by ``spec``.

    Successors leaving the box are clamped to it and charged the node's
    largest one-step cost ``max_u g(x, u) dt`` on top.  Ties in the minimum
    go to the control of smallest magnitude.

    Returns a field with ``converged=False`` when ``max_iterations`` is hit
    before the residual reaches ``spec.tolerance``.
    """
    if len(spec.x_points) != model.state_dim:
        raise UsageError(f"grid has {len(spec.x_points)} state axes, model {model.label!r} has {model.state_dim}")
    if model.control_dim != 1:
        raise UnsupportedDimensionError("grid DP supports scalar controls only")
    t0 = time.perf_counter()
    axes = grid_axes(spec)
    shape = spec.x_points
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, model.state_dim)
    us = spec.controls
    # sorting by |u| makes argmin's first-hit rule break ties toward small controls
    order = np.argsort(np.abs(us), kind="stable")
    us_sorted = us[order]
    Xb = np.broadcast_to(X[:, None, :], (len(X), len(us), model.state_dim))
    Ub = np.broadcast_to(us_sorted[None, :, None], (len(X), len(us), 1))
    stage = np.asarray(model.cost_rate(Xb, Ub), dtype=float) * spec.dt
    Xn = rk4_step(model, Xb, Ub, spec.dt)
    outside = ~_inside(axes, Xn) | ~np.all(np.isfinite(Xn), axis=-1)
    Xn = np.where(np.isfinite(Xn), Xn, 0.0)
    stage = stage + outside * stage.max(axis=1, keepdims=True)
    idx, wts = _multilinear(axes, Xn)
    beta = spec.beta
    t_setup = time.perf_counter() - t0

    V = np.zeros(len(X)) if V0 is None else np.asarray(V0, dtype=float).reshape(-1).copy()
    residuals = []
    best = np.zeros(len(X), dtype=int)
    t1 = time.perf_counter()
    it = 0
    res = math.inf
    while it < spec.max_iterations:
        Q = stage + beta * np.einsum("puk,puk->pu", V[idx], wts)
        best = Q.argmin(axis=1)
        Vn = Q[np.arange(len(X)), best]
        res = float(np.max(np.abs(Vn - V)))
        V = Vn
        it += 1
        residuals.append(res)
        if res <= spec.tolerance:
            break
    t_iter = time.perf_counter() - t1
    gidx = order[best]
    return ValueField(
        values=V.reshape(shape),
        greedy_index=gidx.reshape(shape),
        greedy_u=us[gidx].reshape(shape),
        iterations=it,
        residual=res,
        converged=res <= spec.tolerance,
        axes=axes,
        residuals=np.array(residuals),
        clamped_fraction=float(outside.mean()),
        timing={"setup_s": t_setup, "total_s": t_setup + t_iter,
                "per_iteration_s": t_iter / max(it, 1)},
    )


def dp_policy(field: ValueField, spec: GridSpec | None = None) -> ControlLaw:
    """Greedy control blended multilinearly from the surrounding grid nodes.

    States outside the grid are clamped to its boundary.  ``spec`` is only
    checked for shape agreement when given.
    """
    axes = field.axes
    if spec is not None and tuple(len(a) for a in axes) != tuple(spec.x_points):
        raise UsageError("value field does not match the grid spec")
    table = field.greedy_u.reshape(-1)

    def law(x):
        x = np.asarray(x, dtype=float)
        idx, w = _multilinear(axes, x)
        return np.sum(table[idx] * w, axis=-1)[..., None]

    return ControlLaw(law, label="dp")
