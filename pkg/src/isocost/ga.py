"""Seeded real-coded genetic algorithm for bounded maximization.

The core loop is written for a *batch* of independent problems so that the
IDP solver can search controls for every agent of a front at once.  Each
problem draws from its own random stream, which makes the outcome of one
problem independent of which other problems share the batch.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import SearchError, UsageError

__all__ = ["GaConfig", "GaResult", "ga_maximize", "ga_maximize_batch"]

_GOLDEN = 0.5 * (np.sqrt(5.0) - 1.0)


@dataclass(frozen=True)
class GaConfig:
    """GA knobs.  Only ``mutation_rate`` comes from a published setting."""

    population: int = 24
    generations: int = 30
    mutation_rate: float = 0.03
    mutation_scale: float = 0.1
    elite: int = 2
    tournament: int = 3
    seed: int = 0
    polish: bool = True
    polish_iters: int = 40
    polish_width: float = 0.02

    def __post_init__(self):
        if self.population < 2:
            raise UsageError("population must be >= 2")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise UsageError("mutation_rate must lie in [0, 1]")
        if not 0 <= self.elite < self.population:
            raise UsageError("elite must satisfy 0 <= elite < population")
        if self.generations < 1 or self.tournament < 1:
            raise UsageError("generations and tournament must be >= 1")


@dataclass
class GaResult:
    x: np.ndarray
    value: np.ndarray
    ok: np.ndarray
    history: np.ndarray = field(repr=False)
    evaluations: int = 0


def _draw_counts(cfg: GaConfig, d: int):
    S, E = cfg.population, cfg.elite
    n_child = S - E
    per_gen_u = n_child * 2 * cfg.tournament + n_child + n_child * d
    per_gen_n = n_child * d
    return S * d + cfg.generations * per_gen_u, cfg.generations * per_gen_n


def _prepare_draws(rngs, cfg, d):
    nu, nn = _draw_counts(cfg, d)
    U = np.stack([r.random(nu) for r in rngs])
    N = np.stack([r.standard_normal(nn) for r in rngs])
    return U, N


def ga_maximize_batch(evaluate, lower, upper, cfg: GaConfig, rngs, inject=None) -> GaResult:
    """Run one independent GA per problem.

    Parameters
    ----------
    evaluate : callable
        ``evaluate(pop) -> fitness`` with ``pop`` of shape ``(P, S, d)`` and
        fitness of shape ``(P, S)``.  Non-finite fitness counts as -inf.
    lower, upper : array_like, shape ``(P, d)`` or ``(d,)``
    rngs : sequence of numpy Generators, one per problem
    inject : array_like, shape ``(P, k, d)``, optional
        Extra seeds placed in the initial population (after the midpoint and
        the two corners).

    Returns
    -------
    GaResult
        ``x`` (P, d), ``value`` (P,), ``ok`` (P,), per-generation best-ever
        ``history`` (G + 1, P).
    """
    P = len(rngs)
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (P, np.shape(lower)[-1])).copy()
    upper = np.broadcast_to(np.asarray(upper, dtype=float), lower.shape).copy()
    d = lower.shape[1]
    S, E, T = cfg.population, cfg.elite, cfg.tournament
    n_child = S - E
    width = upper - lower
    U, N = _prepare_draws(rngs, cfg, d)
    ui = 0
    ni = 0

    pop = lower[:, None, :] + U[:, : S * d].reshape(P, S, d) * width[:, None, :]
    ui += S * d
    seeds = [0.5 * (lower + upper), lower, upper]
    if inject is not None:
        inj = np.asarray(inject, dtype=float).reshape(P, -1, d)
        seeds += [inj[:, k, :] for k in range(inj.shape[1])]
    for k, s in enumerate(seeds[:S]):
        pop[:, k, :] = np.clip(s, lower, upper)

    def fit_of(p):
        f = np.asarray(evaluate(p), dtype=float).reshape(P, S)
        return np.where(np.isfinite(f), f, -np.inf)

    rows = np.arange(P)[:, None]
    fit = fit_of(pop)
    n_eval = S
    best_i = np.argmax(fit, axis=1)
    best_x = pop[np.arange(P), best_i].copy()
    best_f = fit[np.arange(P), best_i].copy()
    ok = np.isfinite(best_f)
    history = [best_f.copy()]

    for _ in range(cfg.generations):
        order = np.argsort(-fit, axis=1, kind="stable")
        elites = pop[rows, order[:, :E]]

        t = U[:, ui: ui + n_child * 2 * T].reshape(P, n_child, 2, T)
        ui += n_child * 2 * T
        cand = np.minimum((t * S).astype(int), S - 1)
        cand_fit = fit[rows[:, :, None, None], cand]
        winner = cand[np.arange(P)[:, None, None], np.arange(n_child)[None, :, None],
                      np.arange(2)[None, None, :], np.argmax(cand_fit, axis=3)]
        p1 = pop[rows, winner[:, :, 0]]
        p2 = pop[rows, winner[:, :, 1]]

        alpha = U[:, ui: ui + n_child].reshape(P, n_child, 1)
        ui += n_child
        child = alpha * p1 + (1.0 - alpha) * p2

        mut = U[:, ui: ui + n_child * d].reshape(P, n_child, d) < cfg.mutation_rate
        ui += n_child * d
        noise = N[:, ni: ni + n_child * d].reshape(P, n_child, d) * (cfg.mutation_scale * width[:, None, :])
        ni += n_child * d
        child = np.where(mut, child + noise, child)
        child = np.clip(child, lower[:, None, :], upper[:, None, :])

        pop = np.concatenate([elites, child], axis=1)
        fit = fit_of(pop)
        n_eval += S
        gi = np.argmax(fit, axis=1)
        gf = fit[np.arange(P), gi]
        better = gf > best_f
        best_f = np.where(better, gf, best_f)
        best_x = np.where(better[:, None], pop[np.arange(P), gi], best_x)
        ok |= np.isfinite(gf)
        history.append(best_f.copy())

    if cfg.polish and d == 1 and cfg.polish_iters > 0:
        best_x, best_f, extra = _golden_polish(evaluate, best_x, best_f, lower, upper, cfg, S)
        n_eval += extra
    return GaResult(best_x, best_f, ok, np.array(history), n_eval)


def _golden_polish(evaluate, x, f, lower, upper, cfg, S):
    """Vectorised golden-section refinement of scalar maximizers."""
    P = x.shape[0]
    x, lo, hi = x[:, 0], lower[:, 0], upper[:, 0]
    half = cfg.polish_width * (hi - lo)
    a = np.maximum(x - half, lo)
    b = np.minimum(x + half, hi)

    def ev(v):
        # evaluate works on whole populations; pad by repetition
        pop = np.repeat(v[:, None, None], S, axis=1)
        out = np.asarray(evaluate(pop), dtype=float).reshape(P, S)[:, 0]
        return np.where(np.isfinite(out), out, -np.inf)

    c = b - _GOLDEN * (b - a)
    e = a + _GOLDEN * (b - a)
    fc, fe = ev(c), ev(e)
    n = 2
    for _ in range(cfg.polish_iters):
        left = fc >= fe
        a, b = np.where(left, a, c), np.where(left, e, b)
        probe = np.where(left, b - _GOLDEN * (b - a), a + _GOLDEN * (b - a))
        fp = ev(probe)
        n += 1
        c, e, fc, fe = (np.where(left, probe, e), np.where(left, c, probe),
                        np.where(left, fp, fe), np.where(left, fc, fp))
    mid = 0.5 * (a + b)
    fm = ev(mid)
    n += 1
    better = fm > f
    return np.where(better, mid, x)[:, None], np.where(better, fm, f), n * S


def ga_maximize(objective, bounds, cfg: GaConfig | None = None, workers: int = 1,
                vectorized: bool = False):
    """Maximize ``objective`` over a box.

    Parameters
    ----------
    objective : callable
        Maps a control vector of shape ``(d,)`` to a scalar.  With
        ``vectorized=True`` it receives ``(S, d)`` and returns ``(S,)``.
    bounds : sequence of (lo, hi)
    cfg : GaConfig
    workers : int
        Thread count for objective evaluations inside a generation.  Has no
        effect on the result.

    Returns
    -------
    (argmax, value)
        ``value`` is ``objective(argmax)`` evaluated once more at the end.

    Raises
    ------
    SearchError
        If every individual of some generation evaluates to non-finite.
    """
    cfg = cfg or GaConfig()
    b = np.asarray(bounds, dtype=float).reshape(-1, 2)
    lower, upper = b[:, 0], b[:, 1]
    if not (np.all(np.isfinite(b)) and np.all(lower < upper)):
        raise UsageError("bounds must be finite with lower < upper")

    def evaluate(pop):
        flat = pop.reshape(-1, pop.shape[-1])
        if vectorized:
            vals = np.asarray(objective(flat), dtype=float)
        elif workers > 1:
            with ThreadPoolExecutor(workers) as ex:
                vals = np.array(list(ex.map(lambda c: float(objective(c)), flat)))
        else:
            vals = np.array([float(objective(c)) for c in flat])
        vals = vals.reshape(pop.shape[:2])
        if not np.any(np.isfinite(vals)):
            raise SearchError("objective non-finite for the whole population")
        return vals

    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    res = ga_maximize_batch(evaluate, lower[None], upper[None], cfg, [rng])
    x = res.x[0]
    value = float(objective(x[None])[0]) if vectorized else float(objective(x))
    return x, value
