"""Isocost dynamic programming for planar optimal control problems.

The solver grows nested constant-cost fronts outward from the origin.  Each
agent picks, by bounded genetic search, the control whose backward step
gains the most ground, and the visited ``(state, control)`` pairs become a
closed-loop look-up table.  LQR, grid value iteration and a comparison
harness are included for reference.
"""

from __future__ import annotations

from .dp import GridSpec, ValueField, dp_policy, solve_dp
from .errors import *  # noqa: F401,F403
from .front import (
    IsoCostFront,
    front_hypervolume,
    front_inscribed_radius,
    front_polygon,
    front_radius,
    fronts_from_csv,
    fronts_to_csv,
    init_front_lqr,
    init_front_random,
    propagate_front,
    propagate_front_to,
    resample_front,
    surrounds,
)
from .ga import GaConfig, ga_maximize
from .harness import (
    HarnessConfig,
    RunReport,
    export_contours,
    measure_timing,
    perturbed_laws,
    run_comparison,
    surround_suite,
)
from .idp import PolicySolution, SolverConfig, solve_idp
from .integrate import backward_step, rk4_step, simulate_closed_loop
from .lqr import LinearQuadraticProblem, lqr_for_model, lqr_gain, solve_care
from .models import ControlLaw, SystemModel, get_model, make_pendulum, make_system_a
from .policy import PolicyTable, build_policy_table, policy_law, policy_query

__version__ = "0.1.0"
