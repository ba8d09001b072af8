from __future__ import annotations

import filecmp

import numpy as np
import pytest

from conftest import make_double_integrator
from isocost.errors import PartialSolutionError, UsageError
from isocost.front import (
    front_hypervolume,
    front_radius,
    init_front_lqr,
    propagate_front_to,
)
from isocost.ga import GaConfig
from isocost.harness import perturbed_laws
from isocost.idp import DEVIATIONS, PolicySolution, SolverConfig, select_optimal_control, solve_idp
from isocost.integrate import backward_step_batch
from isocost.lqr import lqr_for_model
from isocost.models import SystemModel, get_model


def _single_integrator():
    return SystemModel(1, 1, lambda x, u: u + 0.0 * x, lambda x, u: x[..., 0] ** 2 + u[..., 0] ** 2,
                       label="single_integrator")


def _grid_argmax_norm(model, x, dgamma, lo=-50.0, hi=50.0, n=10_000):
    u = np.linspace(lo, hi, n)[:, None]
    X = np.broadcast_to(np.asarray(x, float), (n, len(x)))
    Xn, _, ok = backward_step_batch(model, X, u, dgamma)
    score = np.where(ok, np.linalg.norm(Xn, axis=1), -np.inf)
    return u[np.argmax(score), 0]


@pytest.fixture(scope="module")
def di_solution():
    cfg = SolverConfig(N=100, gamma_f=3.0, init="lqr", seed=4)
    return solve_idp(make_double_integrator(), cfg)


def test_select_control_single_integrator_matches_grid():
    m = _single_integrator()
    u, x = select_optimal_control(m, np.array([1.0]), 0.2, [(-50, 50)], seed=1)
    ref = _grid_argmax_norm(m, [1.0], 0.2)
    assert ref < 0
    assert u[0] == pytest.approx(ref, abs=0.05)
    assert abs(x[0]) > 1.0


def test_select_control_singleton_bounds():
    u, x = select_optimal_control(get_model("pendulum"), np.array([0.5, 0.1]), 0.2, [(2.5, 2.5)])
    assert u.tolist() == [2.5]


def test_select_control_system_a_matches_grid():
    m = get_model("system_a")
    u, _ = select_optimal_control(m, np.array([1.0, 0.0]), 0.2, [(-50, 50)], seed=3)
    assert u[0] == pytest.approx(_grid_argmax_norm(m, [1.0, 0.0], 0.2), abs=0.05)


def test_gamma_f_equal_gamma0_returns_initial_front():
    sol = solve_idp(get_model("pendulum"), SolverConfig(N=20, gamma0=0.3, gamma_f=0.3))
    assert sol.iterations == 0
    assert sol.provenance["search_calls"] == 0
    assert sol.n_samples == 20


def test_double_integrator_controls_match_lqr(di_solution):
    _, _, K = lqr_for_model(make_double_integrator())
    late = di_solution.generations >= 5
    X, U = di_solution.states[late], di_solution.controls[late, 0]
    ref = -(X @ K.T)[:, 0]
    rel = np.abs(U - ref) / np.maximum(np.abs(ref), 1e-9)
    assert np.median(rel) < 0.05


def test_double_integrator_fronts_track_quadratic_value(di_solution):
    _, P, _ = lqr_for_model(make_double_integrator())
    fr = di_solution.fronts[-1]
    v = np.einsum("ij,jk,ik->i", fr.alive_states, P, fr.alive_states)
    assert np.median(v / fr.gamma) == pytest.approx(1.0, abs=0.03)


def test_radius_strictly_increasing(di_solution):
    r = [front_radius(f) for f in di_solution.fronts]
    assert np.all(np.diff(r) > 0)


def test_controls_within_bounds():
    sol = solve_idp(get_model("system_a"), SolverConfig(N=40, gamma_f=0.6, init="lqr", u_bounds=((-3, 2),)))
    assert sol.controls.min() >= -3 and sol.controls.max() <= 2


def test_dominates_fixed_law_hypervolume(di_solution):
    # gain_1.5x is within a fraction of a percent of optimal on this plant, so
    # the margin covers the solver's own step error.
    m = make_double_integrator()
    for name, law in perturbed_laws(m).items():
        fr = di_solution.fronts[0]
        for ref in di_solution.fronts[5::10]:
            fr = propagate_front_to(m, law, fr, ref.gamma, max_backward_time=0.002)
            assert front_hypervolume(ref) >= front_hypervolume(fr) * (1 - 5e-3), name


def test_deterministic_serialization(tmp_path):
    cfg = SolverConfig(N=30, gamma_f=0.5, init="lqr", seed=11)
    m = get_model("pendulum")
    a = solve_idp(m, cfg)
    b = solve_idp(m, cfg)
    a.save(tmp_path / "a")
    b.save(tmp_path / "b")
    assert filecmp.cmp(tmp_path / "a" / "fronts.csv", tmp_path / "b" / "fronts.csv", shallow=False)


def test_save_load_round_trip(tmp_path, di_solution):
    di_solution.save(tmp_path)
    back = PolicySolution.load(tmp_path)
    assert back.n_samples == di_solution.n_samples
    np.testing.assert_array_equal(back.states, di_solution.states)
    assert back.provenance["config"] == di_solution.provenance["config"]


def test_provenance_records_deviations(di_solution):
    prov = di_solution.provenance
    assert prov["status"] == "complete"
    assert list(DEVIATIONS) == prov["deviations"][: len(DEVIATIONS)]
    assert any("increment" in d for d in prov["deviations"])
    assert len(prov["dgammas"]) == di_solution.iterations


def test_resampling_flagged():
    sol = solve_idp(get_model("pendulum"), SolverConfig(N=30, gamma_f=0.3, init="lqr", resample=True))
    assert any("resampling" in d for d in sol.provenance["deviations"])


def test_iteration_cap_returns_partial():
    with pytest.raises(PartialSolutionError) as ei:
        solve_idp(get_model("pendulum"), SolverConfig(N=20, gamma_f=5.0, init="lqr", max_iterations=3))
    sol = ei.value.solution
    assert sol.iterations == 3
    assert sol.provenance["status"] == "max_iterations"


def test_random_init_with_resampling_reaches_target():
    sol = solve_idp(make_double_integrator(), SolverConfig(N=60, R0=0.3, gamma0=0.2, gamma_f=1.0,
                                                           resample=True, seed=2))
    assert sol.fronts[-1].gamma >= 1.0


def test_norm_objective_and_geometric_schedule():
    cfg = SolverConfig(N=40, gamma_f=0.8, init="lqr", objective="norm", schedule="geometric")
    sol = solve_idp(get_model("system_a"), cfg)
    d = np.array(sol.provenance["dgammas"])
    assert sol.fronts[-1].gamma >= 0.8
    assert np.all(d > 0)


def test_rejects_non_equilibrium_model():
    m = SystemModel(2, 1, lambda x, u: x + 1.0, lambda x, u: x[..., 0] ** 2, label="bad")
    with pytest.raises(UsageError):
        solve_idp(m, SolverConfig(N=10, gamma_f=1.0))


@pytest.mark.parametrize("kw", [dict(gamma0=0.0), dict(gamma0=2.0, gamma_f=1.0), dict(dgamma=0.0),
                                dict(init="spiral"), dict(objective="area"), dict(N=2),
                                dict(u_bounds=((1.0, -1.0),)), dict(cost_drift=-1.0)])
def test_config_validation(kw):
    with pytest.raises(UsageError):
        SolverConfig(**kw)


def test_config_dict_round_trip():
    cfg = SolverConfig(N=50, ga=GaConfig(population=30))
    d = cfg.to_dict()
    assert SolverConfig.from_dict(d) == cfg
    flat = {"N": 50, "ga_population": 30}
    assert SolverConfig.from_dict(flat) == cfg
    with pytest.raises(UsageError):
        SolverConfig.from_dict({"N": 50, "colour": "red"})
