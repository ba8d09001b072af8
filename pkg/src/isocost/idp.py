"""Isocost dynamic programming: grow optimal fronts outward from the origin.

Every generation, each agent searches the admissible control interval for
the input whose backward isocost step pushes it farthest out, and the
chosen ``(state, control)`` pairs are stored as policy samples.

Two per-agent objectives are available:

``"normal"`` (default)
    displacement along the front's outward normal at the agent.  Summed
    over agents this is the first variation of the enclosed area, so each
    agent maximizes its own contribution to the next front's area.
``"norm"``
    Euclidean norm of the pushed state.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DegenerateFrontError, PartialSolutionError, UsageError
from .front import (
    IsoCostFront,
    front_normals,
    front_radius,
    fronts_to_csv,
    init_front_lqr,
    init_front_random,
    resample_front,
)
from .ga import GaConfig, ga_maximize_batch
from .integrate import BACKWARD_MAX_STEP, G_FLOOR, backward_step_batch
from .models import SystemModel

__all__ = [
    "SolverConfig",
    "PolicySolution",
    "solve_idp",
    "select_optimal_control",
    "agent_rng",
    "DEVIATIONS",
]

# Recorded in every provenance block so reports say how the run departs from
# the textbook statement of the method.
DEVIATIONS = (
    "backward time step uses the cost increment dgamma, not the running total",
    "front radius is the RMS agent norm; gamma advances by dgamma each generation",
    "cost increment capped so no agent integrates backward longer than max_backward_time",
    "candidate controls rejected when g drifts by more than cost_drift over the step",
    "accepted step re-timed with the trapezoid rule, dt = 2 dgamma / (g_start + g_end)",
    "argmax taken per agent, not over the whole front",
)


@dataclass(frozen=True)
class SolverConfig:
    N: int = 600
    R0: float = 0.01
    gamma0: float = 0.1
    gamma_f: float = 250.0
    dgamma: float = 0.2
    u_bounds: tuple = ((-50.0, 50.0),)
    init: str = "random"
    ga: GaConfig = field(default_factory=GaConfig)
    tolerance: float = 1e-5
    max_iterations: int = 10000
    seed: int = 0
    schedule: str = "fixed"
    growth: float = 0.05
    objective: str = "normal"
    max_backward_time: Optional[float] = 0.1
    cost_drift: Optional[float] = 0.25
    corrector: bool = True
    resample: bool = False
    g_floor: float = G_FLOOR
    max_step: float = BACKWARD_MAX_STEP

    def __post_init__(self):
        if not 0 < self.gamma0 <= self.gamma_f:
            raise UsageError("need 0 < gamma0 <= gamma_f")
        if self.dgamma <= 0:
            raise UsageError("dgamma must be positive")
        b = np.asarray(self.u_bounds, dtype=float).reshape(-1, 2)
        if not (np.all(np.isfinite(b)) and np.all(b[:, 0] <= b[:, 1])):
            raise UsageError("u_bounds must be finite with lower <= upper")
        if self.init not in ("random", "lqr"):
            raise UsageError("init must be 'random' or 'lqr'")
        if self.schedule not in ("fixed", "geometric"):
            raise UsageError("schedule must be 'fixed' or 'geometric'")
        if self.objective not in ("normal", "norm"):
            raise UsageError("objective must be 'normal' or 'norm'")
        if self.N < 3:
            raise UsageError("N must be >= 3")
        if self.cost_drift is not None and self.cost_drift <= 0:
            raise UsageError("cost_drift must be positive or None")

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        d = dict(d)
        ga_keys = {f for f in GaConfig.__dataclass_fields__}
        ga = {k[3:]: d.pop(k) for k in list(d) if k.startswith("ga_") and k[3:] in ga_keys}
        if "ga" in d:
            ga.update(d.pop("ga"))
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise UsageError(f"unknown solver config keys: {sorted(unknown)}")
        if "u_bounds" in d:
            d["u_bounds"] = tuple(tuple(map(float, b)) for b in np.asarray(d["u_bounds"], float).reshape(-1, 2))
        return cls(**d, ga=GaConfig(**ga))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["u_bounds"] = [list(b) for b in self.u_bounds]
        return d


@dataclass
class PolicySolution:
    fronts: list
    states: np.ndarray
    gammas: np.ndarray
    controls: np.ndarray
    generations: np.ndarray
    provenance: dict

    @property
    def n_samples(self) -> int:
        return len(self.states)

    @property
    def iterations(self) -> int:
        return len(self.fronts) - 1

    def save(self, directory) -> Path:
        """Write ``fronts.csv`` and ``provenance.json`` into ``directory``."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        fronts_to_csv(self.fronts, out / "fronts.csv")
        (out / "provenance.json").write_text(json.dumps(self.provenance, indent=2, sort_keys=True))
        return out

    @classmethod
    def load(cls, directory) -> "PolicySolution":
        from .front import fronts_from_csv

        d = Path(directory)
        fronts = fronts_from_csv(d / "fronts.csv")
        prov = json.loads((d / "provenance.json").read_text())
        return _assemble(fronts, prov)


def _assemble(fronts, provenance) -> PolicySolution:
    S, G, U, K = [], [], [], []
    for fr in fronts:
        a = fr.alive
        S.append(fr.states[a])
        U.append(fr.controls[a])
        G.append(np.full(int(a.sum()), fr.gamma))
        K.append(np.full(int(a.sum()), fr.generation))
    return PolicySolution(list(fronts), np.concatenate(S), np.concatenate(G),
                          np.concatenate(U), np.concatenate(K), provenance)


def agent_rng(seed: int, generation: int, agent_id: int) -> np.random.Generator:
    """Independent random stream for one agent in one generation."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(generation), int(agent_id)]))


def _step_feasible(model, X, U, Xn, dt, ok, max_dt, drift):
    """Trust region for the first-order step.

    The step charges ``g(x, u) * |dt|`` for the whole segment, so it is only
    trusted while the segment is short and ``g`` barely changes along it.
    """
    if max_dt is not None:
        ok = ok & (np.abs(dt) <= max_dt)
    if drift is not None:
        with np.errstate(invalid="ignore", over="ignore"):
            g0 = model.cost_rate(X, U)
            g1 = model.cost_rate(np.where(ok[..., None], Xn, X), U)
            ok = ok & (g1 <= (1.0 + drift) * g0) & (g1 * (1.0 + drift) >= g0)
    return ok


def _objective_factory(model, X, dirs, dgamma, cfg_floor, max_step, objective, max_dt=None,
                       drift=None):
    """Build ``evaluate(pop)`` for a batch of agents (P, S, m) -> (P, S).

    Candidates outside the step trust region (see ``_step_feasible``) score
    ``-inf``, otherwise the search exploits the first-order cost error.
    """
    P = len(X)

    def evaluate(pop):
        S = pop.shape[1]
        Xr = np.repeat(X[:, None, :], S, axis=1)
        dg = np.broadcast_to(np.asarray(dgamma, dtype=float).reshape(-1, 1), (P, S))
        Xn, dt, ok = backward_step_batch(model, Xr, pop, dg, cfg_floor, max_step)
        ok = _step_feasible(model, Xr, pop, Xn, dt, ok, max_dt, drift)
        if objective == "norm":
            val = np.linalg.norm(Xn, axis=-1)
        else:
            val = np.einsum("psk,pk->ps", Xn - Xr, dirs)
        return np.where(ok, val, -np.inf)

    return evaluate


def select_optimal_control(model: SystemModel, agent, dgamma: float, bounds, ga: GaConfig | None = None,
                           seed=None, direction=None, g_floor: float = G_FLOOR,
                           max_step: float | None = BACKWARD_MAX_STEP):
    """Best control for one agent and the pre-image it produces.

    With ``direction=None`` the objective is the norm of the pushed state;
    otherwise it is the displacement along ``direction``.

    Returns
    -------
    (u_star, x_star)
        ``(None, None)`` when every candidate control stalls.
    """
    ga = ga or GaConfig()
    state = np.asarray(getattr(agent, "state", agent), dtype=float)
    b = np.asarray(bounds, dtype=float).reshape(-1, 2)
    if np.all(b[:, 0] == b[:, 1]):
        u = b[:, 0].copy()
        Xn, _, ok = backward_step_batch(model, state[None], u[None], dgamma, g_floor, max_step)
        return (u, Xn[0]) if ok[0] else (None, None)
    rng = np.random.default_rng(ga.seed if seed is None else seed)
    dirs = None if direction is None else np.asarray(direction, dtype=float)[None]
    evaluate = _objective_factory(model, state[None], dirs, dgamma, g_floor, max_step,
                                  "norm" if direction is None else "normal")
    res = ga_maximize_batch(evaluate, b[None, :, 0], b[None, :, 1], ga, [rng])
    if not res.ok[0] or not np.isfinite(res.value[0]):
        return None, None
    u = res.x[0]
    Xn, _, ok = backward_step_batch(model, state[None], u[None], dgamma, g_floor, max_step)
    return u, Xn[0]


def _polish_iters(cfg: SolverConfig) -> int:
    # bracket of 2*polish_width*|interval| shrunk to tolerance*|interval|
    ratio = cfg.tolerance / (2.0 * cfg.ga.polish_width)
    return max(1, math.ceil(math.log(ratio) / math.log(0.5 * (math.sqrt(5) - 1))))


def _next_dgamma(cfg: SolverConfig, model, front: IsoCostFront):
    d = cfg.dgamma if cfg.schedule == "fixed" else cfg.growth * front.gamma
    if cfg.max_backward_time is not None:
        # half the trust region, so every agent may still lower g by 2x
        a = front.alive
        g_min = float(np.min(model.cost_rate(front.states[a], front.controls[a])))
        if g_min > 0:
            d = min(d, 0.5 * cfg.max_backward_time * g_min)
    return d


def _trapezoid_retime(model, X, U, Xn, ok, dg, cfg: SolverConfig):
    """Redo the step so that the trapezoid estimate of the accrued cost is ``dg``."""
    g0 = model.cost_rate(X, U)
    with np.errstate(invalid="ignore", over="ignore"):
        g1 = model.cost_rate(np.where(ok[:, None], Xn, X), U)
        # backward_step_batch divides by g0, so scale the increment instead of dt
        dg_eff = np.where(ok, 2.0 * dg * g0 / (g0 + g1), dg)
    return backward_step_batch(model, X, U, dg_eff, cfg.g_floor, cfg.max_step)


def _shrink_to_trust(cfg: SolverConfig, model, X, U, bounds, dg, n_grid: int = 17,
                     max_halvings: int = 40):
    """Halve ``dg`` until every agent has a control inside the step trust region.

    Candidates are the agent's current control plus a coarse grid over the
    control box, so one agent stuck on a bad control does not stall the front.
    """
    axes = [np.linspace(lo, hi, n_grid) for lo, hi in bounds]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(bounds))
    C = np.concatenate([U[:, None, :], np.broadcast_to(grid, (len(X),) + grid.shape)], axis=1)
    Xr = np.repeat(X[:, None, :], C.shape[1], axis=1)
    for _ in range(max_halvings):
        Xn, dt, ok = backward_step_batch(model, Xr, C, dg, cfg.g_floor, cfg.max_step)
        good = _step_feasible(model, Xr, C, Xn, dt, ok, cfg.max_backward_time, cfg.cost_drift)
        if np.all(np.any(good, axis=1) | ~np.any(ok, axis=1)):
            break
        dg *= 0.5
    return dg


def solve_idp(model: SystemModel, cfg: SolverConfig, initial_front: IsoCostFront | None = None,
              callback=None) -> PolicySolution:
    """Grow fronts from ``gamma0`` until the first level ``>= gamma_f``.

    Raises
    ------
    PartialSolutionError
        When the front degenerates or ``max_iterations`` is reached first;
        the completed generations are attached as ``err.solution``.
    """
    n, m = model.state_dim, model.control_dim
    x0, u0 = np.zeros(n), np.zeros(m)
    if np.linalg.norm(model.dynamics(x0, u0)) > 1e-12 or abs(float(model.cost_rate(x0, u0))) > 1e-12:
        raise UsageError(f"model {model.label!r} must satisfy f(0,0)=0 and g(0,0)=0")
    if n != 2 and cfg.objective != "norm":
        raise UsageError(f"the {cfg.objective!r} objective needs planar fronts; use objective='norm'")

    bounds = np.asarray(cfg.u_bounds, dtype=float).reshape(-1, 2)
    if bounds.shape[0] != m:
        raise UsageError(f"u_bounds has {bounds.shape[0]} rows, model has {m} controls")
    ga = replace(cfg.ga, polish_iters=_polish_iters(cfg)) if cfg.ga.polish else cfg.ga

    t_start = time.perf_counter()
    if initial_front is not None:
        front = initial_front.copy()
    elif cfg.init == "random":
        front = init_front_random(cfg.N, cfg.R0, cfg.gamma0, np.random.SeedSequence([cfg.seed, 0xF0]),
                                  state_dim=n, control_dim=m)
    else:
        front = init_front_lqr(model, cfg.N, cfg.gamma0)
    fronts = [front]
    gen_times = []
    dgammas = []
    search_calls = 0
    lower = np.broadcast_to(bounds[:, 0], (cfg.N, m))
    upper = np.broadcast_to(bounds[:, 1], (cfg.N, m))

    def provenance(status):
        return {
            "model": model.label,
            "config": cfg.to_dict(),
            "seed": cfg.seed,
            "status": status,
            "generations": len(fronts) - 1,
            "gamma_final": fronts[-1].gamma,
            "dgammas": dgammas,
            "search_calls": search_calls,
            "timing": {
                "total_s": time.perf_counter() - t_start,
                "per_iteration_s": float(np.mean(gen_times)) if gen_times else 0.0,
            },
            "deviations": list(DEVIATIONS) + (["arclength resampling enabled"] if cfg.resample else []),
        }

    k = 0
    while front.gamma < cfg.gamma_f:
        if k >= cfg.max_iterations:
            sol = _assemble(fronts, provenance("max_iterations"))
            raise PartialSolutionError(f"iteration cap {cfg.max_iterations} hit at gamma={front.gamma:g}", sol)
        tg = time.perf_counter()
        dg = _next_dgamma(cfg, model, front)
        idx = np.flatnonzero(front.alive)
        X = front.states[idx]
        dg = _shrink_to_trust(cfg, model, X, front.controls[idx], bounds, dg)
        dirs = front_normals(front)[idx] if cfg.objective == "normal" else None
        evaluate = _objective_factory(model, X, dirs, dg, cfg.g_floor, cfg.max_step, cfg.objective,
                                      cfg.max_backward_time, cfg.cost_drift)
        rngs = [agent_rng(cfg.seed, k + 1, i) for i in front.ids[idx]]
        res = ga_maximize_batch(evaluate, lower[: len(idx)], upper[: len(idx)], ga, rngs,
                                inject=front.controls[idx][:, None, :])
        search_calls += len(idx)
        Xn, dt, ok = backward_step_batch(model, X, res.x, dg, cfg.g_floor, cfg.max_step)
        if cfg.corrector:
            Xn, dt, ok = _trapezoid_retime(model, X, res.x, Xn, ok, dg, cfg)
        ok &= res.ok & np.isfinite(res.value)
        new = front.copy()
        new.states[idx] = np.where(ok[:, None], Xn, X)
        new.controls[idx] = res.x
        new.alive[idx] = ok
        new.gamma = front.gamma + dg
        new.generation = front.generation + 1
        new.dt = np.zeros(len(new))
        new.dt[idx] = dt
        if new.n_alive < 3:
            sol = _assemble(fronts, provenance("degenerate"))
            raise PartialSolutionError(f"front degenerated at gamma={new.gamma:g}", sol)
        if cfg.resample:
            new = resample_front(new, cfg.N)
        fronts.append(new)
        dgammas.append(dg)
        gen_times.append(time.perf_counter() - tg)
        front = new
        k += 1
        if callback is not None:
            callback(new)
    return _assemble(fronts, provenance("complete"))
