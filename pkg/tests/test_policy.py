from __future__ import annotations

import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from isocost.errors import DegenerateTableError, UnsupportedDimensionError, UsageError
from isocost.front import IsoCostFront
from isocost.idp import PolicySolution, SolverConfig, solve_idp
from isocost.models import get_model
from isocost.policy import PolicyTable, barycentric_weights, build_policy_table, policy_law, policy_query


def _ring_table(a=(0.7, -1.3), b=0.4, rings=(0.5, 1.0, 1.5, 2.0), n=40):
    th = np.linspace(0, 2 * np.pi, n, endpoint=False)
    X = np.concatenate([r * np.column_stack([np.cos(th + r), np.sin(th + r)]) for r in rings])
    u = X @ np.asarray(a) + b
    return PolicyTable(X, u, np.repeat(np.arange(len(rings)), n).astype(float))


def _solution(fronts, model="toy"):
    states = np.concatenate([f.states for f in fronts])
    return PolicySolution(fronts=fronts, states=states, controls=np.concatenate([f.controls for f in fronts]),
                          gammas=np.concatenate([np.full(len(f.states), f.gamma) for f in fronts]),
                          generations=np.concatenate([np.full(len(f.states), f.generation) for f in fronts]),
                          provenance={"model": model})


def _circle_front(n, r, gen, u):
    th = np.linspace(0, 2 * np.pi, n, endpoint=False)
    X = r * np.column_stack([np.cos(th), np.sin(th)])
    return IsoCostFront(float(gen + 1), X, np.full((n, 1), float(u)), np.ones(n, bool), np.arange(n),
                        generation=gen)


@pytest.fixture(scope="module")
def ring_table():
    return _ring_table()


def test_exact_sample_returns_its_control(ring_table):
    i = 57
    assert policy_query(ring_table, ring_table.states[i])[0] == ring_table.controls[i, 0]


def test_affine_field_reproduced(ring_table):
    rng = np.random.default_rng(0)
    r = rng.uniform(0.6, 1.9, 300)
    th = rng.uniform(0, 2 * np.pi, 300)
    Q = np.column_stack([r * np.cos(th), r * np.sin(th)])
    u, fb = policy_query(ring_table, Q, return_fallback=True)
    assert not fb.any()
    np.testing.assert_allclose(u[:, 0], Q @ np.array([0.7, -1.3]) + 0.4, atol=1e-10)


@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6), st.floats(0.01, 0.98), st.floats(0.01, 0.98))
def test_barycentric_weights_inside_are_convex(coords, s, t):
    tri = np.array(coords).reshape(3, 2)
    e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
    det = e1[0] * e2[1] - e1[1] * e2[0]
    if abs(det) < 1e-3:
        return
    if s + t > 1:
        s, t = 1 - s, 1 - t
    x = tri[0] + s * (tri[1] - tri[0]) + t * (tri[2] - tri[0])
    w, _ = barycentric_weights(tri, x)
    assert np.all(w >= -1e-9)
    assert w.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(w @ tri, x, atol=1e-9)


@given(st.floats(-1.9, 1.9), st.floats(-1.9, 1.9))
def test_query_within_sample_control_range(x, y):
    table = _ring_table()
    u = policy_query(table, np.array([x, y]))[0]
    lo, hi = table.controls.min(), table.controls.max()
    assert lo - 1e-9 <= u <= hi + 1e-9


def test_fallback_outside_band_is_counted():
    table = _ring_table()
    before = table.stats.fallbacks
    u, fb = policy_query(table, np.array([5.0, 5.0]), return_fallback=True)
    assert fb
    assert table.stats.fallbacks == before + 1
    d, nn = table.tree.query([5.0, 5.0], k=3)
    w = 1 / d ** 2
    assert u[0] == pytest.approx(w @ table.controls[nn, 0] / w.sum())


def test_query_deterministic_and_counter_thread_safe(ring_table):
    Q = np.random.default_rng(3).uniform(-3, 3, (50, 2))
    ref = policy_query(ring_table, Q)
    start = ring_table.stats.queries
    outs = [None] * 4

    def work(j):
        outs[j] = np.array([policy_query(ring_table, q) for q in Q])

    threads = [threading.Thread(target=work, args=(j,)) for j in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert ring_table.stats.queries == start + 200
    for o in outs:
        np.testing.assert_array_equal(o, ref)


def test_single_front_table_has_n_samples():
    table = build_policy_table(_solution([_circle_front(30, 1.0, 0, 2.0)]))
    assert len(table) == 30
    assert table.provenance["merged_duplicates"] == 0


def test_duplicates_keep_later_generation():
    f0 = _circle_front(20, 1.0, 0, 1.0)
    f1 = _circle_front(20, 1.0, 1, 7.0)
    f1.states[5:] *= 2.0
    table = build_policy_table(_solution([f0, f1]))
    assert table.provenance["merged_duplicates"] == 5
    i = table.tree.query(f0.states[2])[1]
    assert table.controls[i, 0] == 7.0


def test_collinear_samples_rejected():
    X = np.column_stack([np.linspace(0, 1, 10), np.linspace(0, 2, 10)])
    with pytest.raises(DegenerateTableError):
        PolicyTable(X, np.zeros(10), np.zeros(10))
    with pytest.raises(DegenerateTableError):
        PolicyTable(X[:2], np.zeros(2), np.zeros(2))


def test_non_planar_rejected():
    with pytest.raises(UnsupportedDimensionError):
        PolicyTable(np.random.default_rng(0).normal(size=(10, 3)), np.zeros(10), np.zeros(10))


def test_empty_solution_rejected():
    with pytest.raises(UsageError):
        build_policy_table(PolicySolution([], np.zeros((0, 2)), np.zeros(0), np.zeros((0, 1)), np.zeros(0), {}))


def test_bad_query_shape(ring_table):
    with pytest.raises(UsageError):
        policy_query(ring_table, np.zeros(3))


def test_save_load_reproduces_queries(tmp_path, ring_table):
    p = ring_table.save(tmp_path / "policy.csv")
    back = PolicyTable.load(p)
    Q = np.random.default_rng(1).uniform(-2.5, 2.5, (200, 2))
    np.testing.assert_array_equal(policy_query(back, Q), policy_query(ring_table, Q))
    np.testing.assert_array_equal(back.gammas, ring_table.gammas)


def test_load_requires_header(tmp_path):
    p = tmp_path / "plain.csv"
    p.write_text("x1,x2,gamma,u\n0,0,0,0\n")
    with pytest.raises(UsageError):
        PolicyTable.load(p)


def test_policy_law_shapes(ring_table):
    law = policy_law(ring_table)
    assert law(np.array([0.5, 0.5])).shape == (1,)
    assert law(np.zeros((4, 2)) + 0.7).shape == (4, 1)
    assert law.label == "idp:policy"


def test_mid_band_matches_dense_oracle():
    # a 400-agent run stands in for the dense oracle at this scale
    m = get_model("pendulum")
    coarse = solve_idp(m, SolverConfig(N=100, gamma_f=4.0, init="lqr", resample=True))
    dense = solve_idp(m, SolverConfig(N=400, gamma_f=4.0, init="lqr", resample=True))
    table = build_policy_table(coarse)
    g = np.array([f.gamma for f in dense.fronts])
    fr = dense.fronts[int(np.argmin(np.abs(g - 0.5 * g[-1])))]
    u = policy_query(table, fr.alive_states)[:, 0]
    span = np.ptp(SolverConfig().u_bounds[0])
    assert np.max(np.abs(u - fr.controls[fr.alive, 0])) <= 0.05 * span
