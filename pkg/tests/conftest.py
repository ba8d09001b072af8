from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from isocost.models import SystemModel

settings.register_profile("ci", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


def _di_dynamics(x, u):
    return np.stack([x[..., 1], u[..., 0]], axis=-1)


def _quad_cost(x, u):
    return x[..., 0] ** 2 + x[..., 1] ** 2 + u[..., 0] ** 2


def make_double_integrator() -> SystemModel:
    return SystemModel(2, 1, _di_dynamics, _quad_cost, label="double_integrator",
                       quadratic_cost=(np.eye(2), np.eye(1)))


def make_decay() -> SystemModel:
    """xdot = -x, g = x^2 + u^2 (scalar)."""
    return SystemModel(1, 1, lambda x, u: -x, lambda x, u: x[..., 0] ** 2 + u[..., 0] ** 2, label="decay")


def make_linear_pendulum() -> SystemModel:
    A = np.array([[0.0, 1.0], [9.81, -0.5]])
    B = np.array([0.0, -1.0])

    def f(x, u):
        return x @ A.T + u[..., 0:1] * B

    return SystemModel(2, 1, f, _quad_cost, label="linear_pendulum", quadratic_cost=(np.eye(2), np.eye(1)))


@pytest.fixture
def double_integrator():
    return make_double_integrator()


@pytest.fixture
def decay_model():
    return make_decay()


@pytest.fixture
def linear_pendulum():
    return make_linear_pendulum()


# -- acceptance report ------------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> str:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
