"""Look-up table of optimal controls and barycentric closed-loop queries.

Every stored agent of a solved run is one sample ``(x, gamma, u*)``.  A query
takes the ``k`` nearest samples, looks for the tightest triangle among them
that contains the query point, and blends the three controls with
barycentric weights.  Outside the sampled band no triangle contains the
point and inverse-distance weighting over the three nearest samples is used
instead; those queries are counted.  Before falling back, a query is
retried once with ``3k`` candidates.
"""

from __future__ import annotations

import itertools
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateTableError, UnsupportedDimensionError, UsageError
from .models import ControlLaw

__all__ = ["PolicyTable", "QueryStats", "build_policy_table", "policy_query", "policy_law",
           "barycentric_weights"]

DEDUP_RADIUS = 1e-9
INSIDE_TOL = 1e-12


@dataclass
class QueryStats:
    queries: int = 0
    fallbacks: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, queries: int, fallbacks: int):
        with self._lock:
            self.queries += queries
            self.fallbacks += fallbacks


@dataclass
class PolicyTable:
    """Immutable sample set plus a KD-tree over the states."""

    states: np.ndarray
    controls: np.ndarray
    gammas: np.ndarray
    label: str = "policy"
    provenance: dict = field(default_factory=dict)
    k: int = 12
    stats: QueryStats = field(default_factory=QueryStats, repr=False, compare=False)

    def __post_init__(self):
        self.states = np.ascontiguousarray(self.states, dtype=float)
        self.controls = np.asarray(self.controls, dtype=float).reshape(len(self.states), -1)
        self.gammas = np.asarray(self.gammas, dtype=float).reshape(-1)
        if self.states.ndim != 2 or self.states.shape[1] != 2:
            raise UnsupportedDimensionError("policy tables interpolate planar states only")
        _check_spread(self.states)
        self.tree = cKDTree(self.states)

    def __len__(self):
        return len(self.states)

    def save(self, path) -> Path:
        """Single CSV ``x1, x2, gamma, u`` preceded by a ``#``-prefixed JSON header."""
        path = Path(path)
        m = self.controls.shape[1]
        ucols = ["u"] if m == 1 else [f"u{j + 1}" for j in range(m)]
        header = {"label": self.label, "k": self.k, "n_samples": len(self), "provenance": self.provenance}
        with path.open("w") as fh:
            fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
            fh.write(",".join(["x1", "x2", "gamma", *ucols]) + "\n")
            for s, g, u in zip(self.states, self.gammas, self.controls):
                fh.write(",".join(repr(float(v)) for v in (*s, g, *u)) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "PolicyTable":
        path = Path(path)
        with path.open() as fh:
            first = fh.readline()
        if not first.startswith("# "):
            raise UsageError(f"{path}: missing JSON header line")
        header = json.loads(first[2:])
        data = np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)
        return cls(data[:, :2], data[:, 3:], data[:, 2], label=header.get("label", "policy"),
                   provenance=header.get("provenance", {}), k=int(header.get("k", 12)))


def _check_spread(states):
    if len(states) < 3:
        raise DegenerateTableError(f"need at least 3 samples, got {len(states)}")
    c = states - states.mean(axis=0)
    sv = np.linalg.svd(c, compute_uv=False)
    if sv[-1] <= 1e-12 * max(sv[0], 1e-300):
        raise DegenerateTableError("policy samples are collinear")


def _dedup(states, generations):
    """Indices to keep after merging states closer than ``DEDUP_RADIUS``.

    Within a cluster the sample of the latest generation wins, ties going to
    the later row.
    """
    tree = cKDTree(states)
    pairs = tree.query_pairs(DEDUP_RADIUS, output_type="ndarray")
    if len(pairs) == 0:
        return np.arange(len(states))
    nbrs: dict[int, list[int]] = {}
    for a, b in pairs:
        nbrs.setdefault(int(a), []).append(int(b))
        nbrs.setdefault(int(b), []).append(int(a))
    rows = np.arange(len(states))
    priority = np.lexsort((-rows, -np.asarray(generations)))
    keep = np.ones(len(states), bool)
    kept = np.zeros(len(states), bool)
    for i in priority:
        if any(kept[j] for j in nbrs.get(int(i), ())):
            keep[i] = False
        else:
            kept[i] = True
    return np.flatnonzero(keep)


def build_policy_table(solution, k: int = 12) -> PolicyTable:
    """Collect every alive agent of every generation into a table.

    ``solution`` is a solved IDP run (see ``solve_idp``).  The number of merged
    duplicates is recorded in ``table.provenance['merged_duplicates']``.
    """
    if len(solution.fronts) < 1 or solution.n_samples == 0:
        raise UsageError("solution has no generations")
    keep = _dedup(solution.states, solution.generations)
    prov = dict(solution.provenance)
    prov.pop("timing", None)
    prov["merged_duplicates"] = int(solution.n_samples - len(keep))
    return PolicyTable(solution.states[keep], solution.controls[keep], solution.gammas[keep],
                       label=str(solution.provenance.get("model", "policy")), provenance=prov, k=k)


def barycentric_weights(tri, x):
    """Barycentric coordinates of ``x`` in triangles ``tri``.

    ``tri`` has shape ``(..., 3, 2)`` and ``x`` broadcasts to ``(..., 2)``.
    Returns weights ``(..., 3)`` and twice the signed area ``(...)``.
    """
    a, b, c = tri[..., 0, :], tri[..., 1, :], tri[..., 2, :]
    v0, v1, v2 = b - a, c - a, x - a
    det = v0[..., 0] * v1[..., 1] - v0[..., 1] * v1[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        w1 = (v2[..., 0] * v1[..., 1] - v2[..., 1] * v1[..., 0]) / det
        w2 = (v0[..., 0] * v2[..., 1] - v0[..., 1] * v2[..., 0]) / det
    return np.stack([1.0 - w1 - w2, w1, w2], axis=-1), det


_COMBOS: dict[int, np.ndarray] = {}


def _combos(k):
    if k not in _COMBOS:
        _COMBOS[k] = np.array(list(itertools.combinations(range(k), 3)))
    return _COMBOS[k]


def _containing(table, Xq, k, chunk):
    """Blend over the tightest containing triangle among the ``k`` nearest.

    Returns ``(U, found, dist, nn)``; rows with ``found`` False are left zero.
    """
    dist, nn = table.tree.query(Xq, k=k)
    dist = dist.reshape(len(Xq), k)
    nn = nn.reshape(len(Xq), k)
    C = _combos(k)
    U = np.zeros((len(Xq), table.controls.shape[1]))
    found = np.zeros(len(Xq), bool)
    for s in range(0, len(Xq), chunk):
        sl = slice(s, s + chunk)
        P = table.states[nn[sl][:, C]]                   # (q, T, 3, 2)
        w, det = barycentric_weights(P, Xq[sl, None, :])
        scale = np.maximum(dist[sl, -1], 1e-300) ** 2
        good = (np.abs(det) > 1e-10 * scale[:, None]) & np.all(w >= -INSIDE_TOL, axis=-1)
        score = np.where(good, dist[sl][:, C].sum(axis=-1), np.inf)
        best = score.argmin(axis=1)
        rows = np.arange(len(best))
        ok = np.isfinite(score[rows, best])
        wb = np.clip(w[rows, best], 0.0, None)
        wb /= np.where(ok, wb.sum(axis=1), 1.0)[:, None]
        U[sl] = np.einsum("qt,qtm->qm", np.where(ok[:, None], wb, 0.0),
                          table.controls[nn[sl][rows[:, None], C[best]]])
        found[sl] = ok
    return U, found, dist, nn


def policy_query(table: PolicyTable, x, return_fallback: bool = False):
    """Interpolated control at ``x`` (shape ``(2,)`` or ``(Q, 2)``).

    Among the triangles formed by the ``k`` nearest samples, the containing
    one with the smallest summed vertex distance is used.  Queries with no
    such triangle are retried once with ``3k`` candidates, which rescues
    points whose nearest samples all sit on one sparse front.  A query that
    coincides with a sample returns that sample's control exactly.
    """
    if len(table) == 0:
        raise UsageError("empty policy table")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    Xq = np.atleast_2d(x)
    if Xq.shape[-1] != 2:
        raise UsageError(f"query has shape {x.shape}, expected (..., 2)")
    k = min(table.k, len(table))
    U, found, dist, nn = _containing(table, Xq, k, chunk=4096)
    k2 = min(3 * table.k, len(table))
    if k2 > k and not found.all():
        miss = np.flatnonzero(~found)
        U2, f2, _, _ = _containing(table, Xq[miss], k2, chunk=64)
        U[miss[f2]] = U2[f2]
        found[miss[f2]] = True
    fb = ~found
    if fb.any():
        d3 = dist[fb, :3]
        wi = 1.0 / np.maximum(d3, 1e-300) ** 2
        wi /= wi.sum(axis=1, keepdims=True)
        U[fb] = np.einsum("qt,qtm->qm", wi, table.controls[nn[fb, :3]])
    exact = dist[:, 0] == 0.0
    U[exact] = table.controls[nn[exact, 0]]
    table.stats.add(len(Xq), int(np.count_nonzero(fb & ~exact)))
    out = U[0] if single else U
    if return_fallback:
        return out, (fb & ~exact)[0] if single else fb & ~exact
    return out


def policy_law(table: PolicyTable) -> ControlLaw:
    """Wrap a table as a state-feedback law for closed-loop simulation."""
    def law(x):
        x = np.asarray(x, dtype=float)
        u = policy_query(table, x.reshape(-1, 2))
        return u.reshape(*x.shape[:-1], -1)

    return ControlLaw(law, label=f"idp:{table.label}")
