"""Comparison harness: closed-loop cost tables, timing, surround checks, exports.

Methods compared on a model:

``idp_lqr`` / ``idp_random``
    isocost solver started from the LQR ellipse or a random circle, queried
    through the barycentric policy table.
``lqr``
    ``u = -Kx`` of the linearization at the origin, clipped to the control
    bounds.
``dp``
    greedy policy of grid value iteration.

A run is fully determined by ``(config, seed)``.  Timing fields are the only
non-reproducible part of a report and are excluded from its hash.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .dp import GridSpec, ValueField, dp_policy, solve_dp
from .errors import (
    DegenerateFrontError,
    GeometryError,
    InstabilityError,
    IntegrationError,
    PartialSolutionError,
    UsageError,
)
from .front import (
    IsoCostFront,
    front_hypervolume,
    front_inscribed_radius,
    fronts_to_csv,
    propagate_front_to,
    surrounds,
)
from .idp import DEVIATIONS, PolicySolution, SolverConfig, solve_idp
from .integrate import simulate_closed_loop
from .lqr import lqr_for_model
from .models import ControlLaw, SystemModel, get_model
from .policy import build_policy_table, policy_law

__all__ = [
    "METHODS",
    "SCHEMA_VERSION",
    "HarnessConfig",
    "RunReport",
    "run_comparison",
    "measure_timing",
    "export_contours",
    "perturbed_laws",
    "lqr_law",
    "sample_initial_conditions",
    "surround_suite",
    "SuiteResult",
]

METHODS = ("idp_random", "idp_lqr", "lqr", "dp")
SCHEMA_VERSION = "1.0"

HARNESS_DEVIATIONS = (
    "initial conditions drawn in the annulus ic_inner*R..ic_outer*R with R the inscribed radius "
    "of the outermost IDP front",
    "DP discount per step beta = decay ** (dt / time_constant)",
    "DP successors leaving the grid are clamped and charged max_u g dt",
    "LQR law from the linearization at the origin, clipped to the control bounds",
    "policy table queries outside the sampled band fall back to inverse-distance weighting",
)


def _desk_solver() -> SolverConfig:
    return SolverConfig(N=200, gamma_f=50.0, resample=True)


def _desk_grid() -> GridSpec:
    return GridSpec(x_points=(25, 25), u_points=15)


@dataclass(frozen=True)
class HarnessConfig:
    """Everything a comparison run depends on.

    The defaults are desk scale: 200 agents up to ``gamma_f = 50`` and a
    25 x 25 x 15 DP grid.
    """

    solver: SolverConfig = field(default_factory=_desk_solver)
    grid: GridSpec = field(default_factory=_desk_grid)
    sim_dt: float = 0.01
    t_max: float = 20.0
    stop_radius: float = 1e-2
    ic_inner: float = 0.3
    ic_outer: float = 0.9
    ic_radius: float | None = None
    workers: int = 1

    def __post_init__(self):
        if not 0 <= self.ic_inner < self.ic_outer:
            raise UsageError("need 0 <= ic_inner < ic_outer")
        if self.workers < 1:
            raise UsageError("workers must be >= 1")
        if self.sim_dt <= 0 or self.t_max <= 0:
            raise UsageError("sim_dt and t_max must be positive")

    @classmethod
    def from_flat(cls, d: dict) -> "HarnessConfig":
        """Build from one flat mapping.

        Solver keys are used as-is, grid keys take a ``dp_`` prefix, and the
        remaining harness keys are the fields of this class.  Unknown keys
        raise :class:`UsageError`.
        """
        d = dict(d)
        own = {f.name for f in fields(cls)} - {"solver", "grid"}
        grid_keys = {"dp_" + f for f in GridSpec.__dataclass_fields__}
        grid = {k[3:]: d.pop(k) for k in list(d) if k in grid_keys}
        mine = {k: d.pop(k) for k in list(d) if k in own}
        base = _desk_solver().to_dict()
        base.update(d)
        solver = SolverConfig.from_dict(base)
        gbase = _desk_grid().to_dict()
        gbase.update(grid)
        return cls(solver=solver, grid=GridSpec.from_dict(gbase), **mine)

    def to_flat(self) -> dict:
        d = self.solver.to_dict()
        ga = d.pop("ga")
        d.update({"ga_" + k: v for k, v in ga.items()})
        d.update({"dp_" + k: v for k, v in self.grid.to_dict().items()})
        d.update({f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("solver", "grid")})
        return d


@dataclass
class RunReport:
    """Closed-loop comparison results; serializes to JSON."""

    model: str
    methods: list
    seed: int
    initial_conditions: list
    costs: dict
    stop_reasons: dict
    failures: dict
    averages: dict
    ranking: list
    solve: dict
    policy_fallbacks: dict
    config: dict
    deviations: list
    timing: dict = field(default_factory=dict)
    schema_version: str = SCHEMA_VERSION

    def to_dict(self, mask_timing: bool = False) -> dict:
        d = asdict(self)
        if mask_timing:
            d["timing"] = None
        return d

    def to_json(self, mask_timing: bool = False) -> str:
        return json.dumps(self.to_dict(mask_timing), indent=2, sort_keys=True, allow_nan=False)

    def determinism_hash(self) -> str:
        """SHA-256 of the report with timing fields masked."""
        return hashlib.sha256(self.to_json(mask_timing=True).encode()).hexdigest()

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json() + "\n")
        return path

    @classmethod
    def load(cls, path) -> "RunReport":
        return cls(**json.loads(Path(path).read_text()))


# -- laws ------------------------------------------------------------------------

def lqr_law(model: SystemModel, u_bounds=((-50.0, 50.0),), scale: float = 1.0, label: str = "lqr") -> ControlLaw:
    """``u = clip(-scale K x)`` with K from the linearization at the origin."""
    _, _, K = lqr_for_model(model)
    b = np.asarray(u_bounds, dtype=float).reshape(-1, 2)

    def law(x):
        return np.clip(-scale * (np.asarray(x) @ K.T), b[:, 0], b[:, 1])

    return ControlLaw(law, label=label)


def perturbed_laws(model: SystemModel, u_bounds=((-50.0, 50.0),), damp: float = 5.0) -> dict:
    """Suboptimal comparison laws built around the LQR gain.

    Gain scalings 0.5, 1.5 and 2 (clipped to the bounds), the sign-damped law
    ``u = -damp tanh(Kx / damp)`` and zero control.
    """
    _, _, K = lqr_for_model(model)
    out = {f"gain_{s:g}x": lqr_law(model, u_bounds, s, label=f"gain_{s:g}x") for s in (0.5, 1.5, 2.0)}

    def damped(x):
        return -damp * np.tanh((np.asarray(x) @ K.T) / damp)

    def zero(x):
        return np.zeros(np.asarray(x).shape[:-1] + (K.shape[0],))

    out["sign_damped"] = ControlLaw(damped, label="sign_damped")
    out["zero"] = ControlLaw(zero, label="zero")
    return out


# -- initial conditions -------------------------------------------------------------

def sample_initial_conditions(n: int, radius: float, seed: int, inner: float = 0.3,
                              outer: float = 0.9) -> np.ndarray:
    """``n`` states uniform (in area) on the annulus ``inner*radius <= |x| <= outer*radius``."""
    if n < 1:
        raise UsageError("n_init must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1C]))
    r = radius * np.sqrt(rng.uniform(inner * inner, outer * outer, n))
    th = rng.uniform(0.0, 2.0 * math.pi, n)
    return np.column_stack([r * np.cos(th), r * np.sin(th)])


# -- solving ---------------------------------------------------------------------

def _solve_method(model: SystemModel, method: str, cfg: HarnessConfig):
    """Return ``(law, info, timing, artifact)`` for one method."""
    t0 = time.perf_counter()
    if method in ("idp_lqr", "idp_random"):
        scfg = replace(cfg.solver, init=method[4:])
        status = "complete"
        try:
            sol = solve_idp(model, scfg)
        except PartialSolutionError as exc:
            if exc.solution is None:
                raise
            sol, status = exc.solution, exc.solution.provenance["status"]
        table = build_policy_table(sol)
        info = {"iterations": sol.iterations, "status": status, "samples": len(table),
                "gamma_final": float(sol.fronts[-1].gamma),
                "merged_duplicates": table.provenance["merged_duplicates"]}
        timing = dict(sol.provenance["timing"])
        return policy_law(table), info, timing, (sol, table)
    if method == "lqr":
        law = lqr_law(model, cfg.solver.u_bounds)
        el = time.perf_counter() - t0
        timing = {"total_s": el, "per_iteration_s": el}
        return law, {"iterations": 1, "status": "complete"}, timing, None
    if method == "dp":
        vf = solve_dp(model, cfg.grid)
        info = {"iterations": vf.iterations, "status": "complete" if vf.converged else "not_converged",
                "residual": vf.residual, "clamped_fraction": vf.clamped_fraction}
        return dp_policy(vf, cfg.grid), info, dict(vf.timing), vf
    raise UsageError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def _simulate(model, law, x0, cfg: HarnessConfig):
    try:
        tr = simulate_closed_loop(model, law, x0, dt=cfg.sim_dt, t_max=cfg.t_max, stop_radius=cfg.stop_radius)
    except (InstabilityError, IntegrationError) as exc:
        return None, "diverged", str(exc)
    if not math.isfinite(tr.total_cost):
        return None, "diverged", "non-finite cost"
    return tr.total_cost, tr.stop_reason, None


def run_comparison(model_name: str, methods=METHODS, n_init: int = 11, seed: int = 0,
                   config: HarnessConfig | None = None, initial_conditions=None,
                   workers: int | None = None) -> RunReport:
    """Closed-loop cost of each method from ``n_init`` seeded initial states.

    Initial states come from :func:`sample_initial_conditions` with the
    radius set to ``config.ic_radius`` or, when that is None, the inscribed
    radius of the first IDP method's outermost front (the LQR ellipse at
    ``gamma_f`` when no IDP method runs).  Passing ``initial_conditions``
    bypasses the sampler.

    A method that diverges from some state gets a ``None`` cost and a
    failure entry; averages cover the remaining entries.
    """
    methods = list(methods)
    if not methods:
        raise UsageError("methods must be non-empty")
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown methods {bad}; choose from {', '.join(METHODS)}")
    cfg = config or HarnessConfig()
    cfg = replace(cfg, solver=replace(cfg.solver, seed=int(seed)))
    if workers is not None:
        cfg = replace(cfg, workers=int(workers))
    model = get_model(model_name)

    laws, solve_info, timing, artifacts = {}, {}, {}, {}
    for mth in methods:
        laws[mth], solve_info[mth], timing[mth], artifacts[mth] = _solve_method(model, mth, cfg)

    if initial_conditions is not None:
        X0 = np.atleast_2d(np.asarray(initial_conditions, dtype=float))
        radius = None
    else:
        radius = cfg.ic_radius
        if radius is None:
            radius = _reference_radius(model, cfg, methods, artifacts)
        X0 = sample_initial_conditions(n_init, radius, seed, cfg.ic_inner, cfg.ic_outer)

    tasks = [(mth, i) for mth in methods for i in range(len(X0))]
    t0 = time.perf_counter()
    if cfg.workers == 1:
        results = [_simulate(model, laws[m], X0[i], cfg) for m, i in tasks]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as ex:
            results = list(ex.map(lambda t: _simulate(model, laws[t[0]], X0[t[1]], cfg), tasks))
    sim_s = time.perf_counter() - t0

    costs = {m: [] for m in methods}
    reasons = {m: [] for m in methods}
    failures = {m: [] for m in methods}
    for (m, i), (c, why, err) in zip(tasks, results):
        costs[m].append(c)
        reasons[m].append(why)
        if err is not None:
            failures[m].append({"index": i, "error": err})
    averages = {}
    for m in methods:
        ok = [c for c in costs[m] if c is not None]
        averages[m] = float(np.mean(ok)) if ok else None
    ranking = sorted((m for m in methods if averages[m] is not None), key=lambda m: (averages[m], m))
    fallbacks = {m: int(artifacts[m][1].stats.fallbacks) for m in methods if m.startswith("idp")}
    resolved = cfg.to_flat()
    resolved.update({"model": model_name, "methods": methods, "n_init": len(X0), "seed": int(seed),
                     "ic_radius_resolved": radius})
    return RunReport(
        model=model_name,
        methods=methods,
        seed=int(seed),
        initial_conditions=X0.tolist(),
        costs=costs,
        stop_reasons=reasons,
        failures=failures,
        averages=averages,
        ranking=ranking,
        solve=solve_info,
        policy_fallbacks=fallbacks,
        config=resolved,
        deviations=list(DEVIATIONS) + list(HARNESS_DEVIATIONS),
        timing={"solve": timing, "simulation_s": sim_s},
    )


def _reference_radius(model, cfg: HarnessConfig, methods, artifacts) -> float:
    for m in ("idp_lqr", "idp_random"):
        if m in methods:
            return front_inscribed_radius(artifacts[m][0].fronts[-1])
    _, P, _ = lqr_for_model(model)
    return math.sqrt(cfg.solver.gamma_f / float(np.max(np.linalg.eigvalsh(P))))


def measure_timing(model_name: str, methods=("idp_lqr", "dp"), repeats: int = 1, seed: int = 0,
                   config: HarnessConfig | None = None) -> dict:
    """Average wall-clock per solve and per iteration over ``repeats`` runs.

    Runs are sequential on one worker so the numbers are comparable.
    """
    if repeats < 1:
        raise UsageError("repeats must be >= 1")
    cfg = config or HarnessConfig()
    model = get_model(model_name)
    out = {}
    for mth in methods:
        totals, per_it, iters = [], [], []
        for r in range(repeats):
            c = replace(cfg, solver=replace(cfg.solver, seed=int(seed) + r))
            _, info, timing, _ = _solve_method(model, mth, c)
            totals.append(timing["total_s"])
            per_it.append(timing["per_iteration_s"])
            iters.append(info["iterations"])
        out[mth] = {"repeats": repeats, "total_s": float(np.mean(totals)),
                    "per_iteration_s": float(np.mean(per_it)), "iterations": float(np.mean(iters)),
                    "runs_total_s": totals, "runs_per_iteration_s": per_it, "runs_iterations": iters}
    return out


# -- exports ------------------------------------------------------------------------

def export_contours(solution: PolicySolution, path) -> list[Path]:
    """One CSV per front (agents in angular order, alive only) plus ``index.csv``."""
    fronts = list(getattr(solution, "fronts", solution) or [])
    if not fronts:
        raise UsageError("solution has no fronts to export")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    rows = []
    for fr in fronts:
        name = f"front_{fr.generation:05d}.csv"
        a = np.flatnonzero(fr.alive)
        if fr.states.shape[1] == 2 and len(a) >= 3:
            order = a[np.argsort(np.arctan2(fr.states[a, 1], fr.states[a, 0]), kind="stable")]
        else:
            order = a
        sub = IsoCostFront(fr.gamma, fr.states[order], fr.controls[order], fr.alive[order], fr.ids[order],
                           generation=fr.generation)
        files.append(fronts_to_csv([sub], out / name))
        rows.append([fr.generation, repr(float(fr.gamma)), name, len(order)])
    with (out / "index.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["generation", "gamma", "file", "n_alive"])
        w.writerows(rows)
    return files + [out / "index.csv"]


# -- surround property suite -------------------------------------------------------

@dataclass
class SuiteResult:
    model: str
    passed: bool
    rows: list
    idp_generations: int
    idp_seconds: float

    @property
    def total_violators(self) -> int:
        return int(sum(r["violators"] for r in self.rows))


def _in_box(X, box):
    if box is None:
        return np.ones(len(X), bool)
    b = np.asarray(box, dtype=float)
    return np.all((X >= b[:, 0]) & (X <= b[:, 1]), axis=1)


def surround_suite(model_name: str, N: int = 200, gamma_f: float = 20.0, n_levels: int = 5,
                   solver: SolverConfig | None = None, law_step_time: float = 0.002,
                   tol: float | None = None) -> SuiteResult:
    """Check that IDP fronts surround fronts grown under suboptimal laws.

    The IDP run starts from the LQR ellipse; each comparison law carries the
    same initial agents to ``n_levels`` IDP levels evenly spread up to
    ``gamma_f`` with fine per-agent steps.  Every row records the violators
    beyond ``tol`` (default ``1e-6`` times the front radius) and how many of
    them lie inside the model's state domain.
    """
    model = get_model(model_name)
    scfg = solver or SolverConfig(N=N, gamma_f=gamma_f, init="lqr", resample=True)
    t0 = time.perf_counter()
    sol = solve_idp(model, scfg)
    idp_s = time.perf_counter() - t0
    G = np.array([f.gamma for f in sol.fronts])
    picks = sorted({int(np.argmin(np.abs(G - q * G[-1]))) for q in np.linspace(1.0 / n_levels, 1.0, n_levels)})
    rows = []
    for name, law in perturbed_laws(model, scfg.u_bounds).items():
        fr = sol.fronts[0]
        dead = False
        for lvl in picks:
            ref = sol.fronts[lvl]
            row = {"law": name, "generation": lvl, "gamma": float(ref.gamma), "violators": 0,
                   "violators_in_domain": 0, "max_excess": 0.0, "law_alive": 0, "note": "",
                   "idp_hypervolume": front_hypervolume(ref), "law_hypervolume": None}
            if not dead:
                try:
                    fr = propagate_front_to(model, law, fr, ref.gamma, max_backward_time=law_step_time)
                except DegenerateFrontError as exc:
                    dead = True
                    row["note"] = f"law front degenerate: {exc}"
            if not dead:
                try:
                    res = surrounds(ref, fr, tol)
                except GeometryError as exc:
                    row["note"] = f"geometry: {exc}"
                    row["violators"] = fr.n_alive
                else:
                    pos = np.isin(fr.ids, res.violators) & fr.alive
                    row["violators"] = len(res.violators)
                    row["violators_in_domain"] = int(_in_box(fr.states[pos], model.state_domain).sum())
                    row["max_excess"] = res.max_excess
                    row["tolerance"] = res.tolerance
                row["law_alive"] = fr.n_alive
                if fr.n_alive >= 3:
                    row["law_hypervolume"] = front_hypervolume(fr)
            rows.append(row)
    passed = all(r["violators"] == 0 for r in rows)
    return SuiteResult(model_name, passed, rows, sol.iterations, idp_s)
