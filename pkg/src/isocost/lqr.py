"""Continuous-time LQR: Riccati solve, gain and numerical linearization.

The Riccati equation is solved by Kleinman's Newton iteration.  The first
stabilizing gain comes from Bass's shifted-Lyapunov construction, and every
Lyapunov sub-problem is solved as a dense ``n^2`` linear system, which is all
the small problems here need.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoStabilizingSolutionError, UsageError
from .models import SystemModel

__all__ = [
    "LinearQuadraticProblem",
    "solve_care",
    "care_residual",
    "lqr_gain",
    "linearize",
    "lqr_for_model",
    "solve_lyapunov",
]


@dataclass(frozen=True)
class LinearQuadraticProblem:
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        n, m = A.shape[0], B.shape[1]
        if A.shape != (n, n) or B.shape[0] != n or Q.shape != (n, n) or R.shape != (m, m):
            raise UsageError(f"inconsistent shapes A{A.shape} B{B.shape} Q{Q.shape} R{R.shape}")
        for name, M in (("Q", Q), ("R", R)):
            if np.max(np.abs(M - M.T)) > 1e-12:
                raise UsageError(f"{name} is not symmetric")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    @property
    def n(self):
        return self.A.shape[0]


def solve_lyapunov(F, C):
    """Solve ``F' X + X F + C = 0`` for X via the Kronecker form."""
    F = np.asarray(F, dtype=float)
    n = F.shape[0]
    I = np.eye(n)
    M = np.kron(I, F.T) + np.kron(F.T, I)
    x = np.linalg.solve(M, -np.asarray(C, dtype=float).reshape(-1, order="F"))
    X = x.reshape(n, n, order="F")
    return 0.5 * (X + X.T)


def care_residual(problem: LinearQuadraticProblem, P) -> float:
    """Max-abs entry of ``A'P + PA - PBR^-1B'P + Q``."""
    A, B, Q, R = problem.A, problem.B, problem.Q, problem.R
    res = A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q
    return float(np.max(np.abs(res)))


def _is_hurwitz(M, margin=0.0):
    return bool(np.all(np.linalg.eigvals(M).real < -margin))


def _initial_gain(A, B):
    if _is_hurwitz(A):
        return np.zeros((B.shape[1], A.shape[0]))
    beta = np.linalg.norm(A, 2) + 1.0
    F = (A + beta * np.eye(A.shape[0])).T
    Z = solve_lyapunov(F, -2.0 * B @ B.T)
    try:
        K = B.T @ np.linalg.inv(Z)
    except np.linalg.LinAlgError:
        raise NoStabilizingSolutionError("(A, B) not controllable; no stabilizing seed") from None
    if not _is_hurwitz(A - B @ K):
        raise NoStabilizingSolutionError("shifted-Lyapunov seed failed to stabilize")
    return K


def solve_care(problem: LinearQuadraticProblem, max_iter: int = 100, tol: float = 1e-14):
    """Stabilizing solution P of the continuous algebraic Riccati equation.

    Raises
    ------
    NoStabilizingSolutionError
        If the Newton iteration does not converge within ``max_iter`` or the
        result does not stabilize ``A - BK``.
    """
    A, B, Q, R = problem.A, problem.B, problem.Q, problem.R
    K = _initial_gain(A, B)
    P_old = None
    for _ in range(max_iter):
        Acl = A - B @ K
        P = solve_lyapunov(Acl, Q + K.T @ R @ K)
        K = np.linalg.solve(R, B.T @ P)
        if P_old is not None and np.max(np.abs(P - P_old)) <= tol * max(1.0, np.max(np.abs(P))):
            break
        P_old = P
    else:
        raise NoStabilizingSolutionError(f"Kleinman iteration did not converge in {max_iter} steps")
    if not _is_hurwitz(A - B @ K):
        raise NoStabilizingSolutionError("Riccati solution is not stabilizing")
    res = care_residual(problem, P)
    if res > 1e-9 * max(1.0, np.max(np.abs(P))):
        raise NoStabilizingSolutionError(f"Riccati residual {res:.2e} too large")
    return P


def lqr_gain(P, B, R):
    """``K = R^-1 B' P`` so that ``u = -K x``."""
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if np.linalg.cond(R) > 1e12:
        raise UsageError("R is singular")
    return np.linalg.solve(R, B.T @ np.asarray(P, dtype=float))


def linearize(model: SystemModel, x_eq=None, u_eq=None, eps: float = 1e-5):
    """Central-difference Jacobians ``(A, B)`` of the dynamics at an equilibrium."""
    n, m = model.state_dim, model.control_dim
    x_eq = np.zeros(n) if x_eq is None else np.asarray(x_eq, dtype=float)
    u_eq = np.zeros(m) if u_eq is None else np.atleast_1d(np.asarray(u_eq, dtype=float))
    f0 = np.asarray(model.dynamics(x_eq, u_eq), dtype=float)
    if np.linalg.norm(f0) > 1e-8:
        raise UsageError(f"({x_eq}, {u_eq}) is not an equilibrium: |f| = {np.linalg.norm(f0):.3g}")
    A = np.empty((n, n))
    B = np.empty((n, m))
    for i in range(n):
        d = np.zeros(n)
        d[i] = eps
        A[:, i] = (model.dynamics(x_eq + d, u_eq) - model.dynamics(x_eq - d, u_eq)) / (2 * eps)
    for j in range(m):
        d = np.zeros(m)
        d[j] = eps
        B[:, j] = (model.dynamics(x_eq, u_eq + d) - model.dynamics(x_eq, u_eq - d)) / (2 * eps)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise UsageError("linearization produced non-finite Jacobians")
    return A, B


def lqr_for_model(model: SystemModel, eps: float = 1e-5):
    """Linearize at the origin, use the model's quadratic cost, solve.

    Returns ``(problem, P, K)``.
    """
    A, B = linearize(model, eps=eps)
    Q, R = model.cost_matrices()
    problem = LinearQuadraticProblem(A, B, Q, R)
    P = solve_care(problem)
    return problem, P, lqr_gain(P, problem.B, problem.R)
