"""Finite-horizon continuous-time LQR with a known state matrix.

Dynamics x' = A x + B u on [s, T], cost

    J_s[u] = 1/2 int_s^T (x'Qx + u'Ru) dt + 1/2 x(T)'Q_f x(T).

The Riccati matrix P(t) solves

    -P' = A'P + PA - P B R^-1 B' P + Q,   P(T) = Q_f,

and the optimal feedback is u = -R^-1 B' P(t) x.  Two independent routes
compute P: direct backward integration of the matrix ODE, and the linear
Hamiltonian system for (X, Y) with P = Y X^-1.

Value convention: ``value`` returns x0' P(s) x0, which is the quantity
reported in the convergence tables.  The optimal cost J_s equals
``COST_PER_VALUE * value``; the factor is pinned by a discrete-time QP
oracle in the test suite.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .core import (
    SampledPath,
    ShapeError,
    SingularMatrixError,
    TimeGrid,
    as_matrix,
    as_vector,
    integrate_ode,
    linear_solve,
    linear_solve_batch,
    matrix_2norm,
    simpson,
    symmetric_eigvals,
)

__all__ = [
    "COST_PER_VALUE",
    "LqrProblem",
    "RiccatiSolution",
    "Trajectory",
    "riccati_solve_direct",
    "riccati_solve_hamiltonian",
    "value",
    "feedback_control",
    "simulate_closed_loop",
    "cost_open_loop",
    "bolza_cost",
]

# optimal cost J_s(x0) = COST_PER_VALUE * x0' P(s) x0
COST_PER_VALUE = 0.5

SYM_TOL = 1e-12
PSD_TOL = -1e-10
# X(t) in the Hamiltonian route is rejected when its condition number exceeds this
HAMILTONIAN_MAX_COND = 1e12


def check_symmetric_psd(M: np.ndarray, name: str, definite: bool = False) -> float:
    """Validate symmetry and semi-definiteness; return the smallest eigenvalue."""
    if M.shape[0] != M.shape[1]:
        raise ShapeError(f"{name} must be square, got {M.shape}")
    norm = matrix_2norm(M)
    if matrix_2norm(M - M.T) > SYM_TOL * max(norm, 1.0):
        raise ValueError(f"{name} is not symmetric")
    lam = float(symmetric_eigvals(M)[0])
    if definite and lam <= 0.0:
        raise ValueError(f"{name} must be positive definite (min eigenvalue {lam:.3e})")
    if lam < PSD_TOL:
        raise ValueError(f"{name} must be positive semidefinite (min eigenvalue {lam:.3e})")
    return lam


@dataclass(frozen=True, eq=False)
class LqrProblem:
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Q_f: np.ndarray
    T: float
    r1: float = field(init=False, repr=False)

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        B = as_matrix(self.B, "B")
        Q = as_matrix(self.Q, "Q")
        R = as_matrix(self.R, "R")
        Q_f = as_matrix(self.Q_f, "Q_f")
        n = A.shape[0]
        if A.shape != (n, n):
            raise ShapeError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise ShapeError(f"B must have {n} rows, got {B.shape}")
        m = B.shape[1]
        if Q.shape != (n, n) or Q_f.shape != (n, n):
            raise ShapeError(f"Q and Q_f must be {n}x{n}")
        if R.shape != (m, m):
            raise ShapeError(f"R must be {m}x{m}, got {R.shape}")
        if not (np.isfinite(self.T) and self.T > 0):
            raise ValueError(f"horizon T must be positive, got {self.T}")
        check_symmetric_psd(Q, "Q")
        check_symmetric_psd(Q_f, "Q_f")
        r1 = check_symmetric_psd(R, "R", definite=True)
        for name, val in (("A", A), ("B", B), ("Q", Q), ("R", R), ("Q_f", Q_f)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "r1", r1)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def gain_factor(self) -> np.ndarray:
        """R^-1 B' (m x n)."""
        return linear_solve(self.R, self.B.T).x

    @property
    def control_weight(self) -> np.ndarray:
        """B R^-1 B' (n x n)."""
        return self.B @ self.gain_factor


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    grid: TimeGrid
    P: SampledPath
    provenance: Literal["direct", "hamiltonian"]
    gain_factor: np.ndarray

    @property
    def n(self) -> int:
        return self.P.shape[0]

    def check_invariants(self, sym_tol: float = 1e-9, psd_tol: float = -1e-8) -> None:
        vals = self.P.values
        asym = np.max(np.abs(vals - np.swapaxes(vals, 1, 2)))
        if asym > sym_tol:
            raise AssertionError(f"P(t) not symmetric (max asymmetry {asym:.3e})")
        lam = symmetric_eigvals(vals)[:, 0].min()
        if lam < psd_tol:
            raise AssertionError(f"P(t) not PSD (min eigenvalue {lam:.3e})")


@dataclass(frozen=True, eq=False)
class Trajectory:
    grid: TimeGrid
    x: SampledPath
    u: SampledPath


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def _grid(prob: LqrProblem, s: float, steps: int) -> TimeGrid:
    if not 0.0 <= s < prob.T:
        raise ValueError(f"need 0 <= s < T, got s={s}, T={prob.T}")
    return TimeGrid(float(s), prob.T, int(steps))


def riccati_solve_direct(prob: LqrProblem, s: float = 0.0, steps: int = 2000) -> RiccatiSolution:
    """Backward RK4 on the Riccati matrix ODE, symmetrized after each step."""
    grid = _grid(prob, s, steps)
    A, Q = prob.A, prob.Q
    S = prob.control_weight

    def rhs(t, P):
        return -(A.T @ P + P @ A - P @ S @ P + Q)

    path = integrate_ode(rhs, prob.Q_f, grid, direction="backward", project=_symmetrize)
    path.values[-1] = prob.Q_f
    return RiccatiSolution(grid, path, "direct", prob.gain_factor)


def hamiltonian_matrix(prob: LqrProblem) -> np.ndarray:
    """[[A, -B R^-1 B'], [-Q, -A']], the generator for (X, Y) with P = Y X^-1."""
    return np.block([[prob.A, -prob.control_weight], [-prob.Q, -prob.A.T]])


def _rk4_step_matrix(H: np.ndarray, h: float) -> np.ndarray:
    """One RK4 step of z' = H z is multiplication by this polynomial in hH."""
    hH = h * H
    I = np.eye(H.shape[0])
    return I + hH @ (I + hH @ (I / 2 + hH @ (I / 6 + hH / 24)))


def riccati_solve_hamiltonian(
    prob: LqrProblem, s: float = 0.0, steps: int = 2000, restart_every: int = 50
) -> RiccatiSolution:
    """Propagate (X, Y)' = H (X, Y) backward from (I, Q_f) and return P = Y X^-1.

    The linear flow is restarted from (I, P) every ``restart_every`` nodes;
    without restarts X(t) becomes ill-conditioned on long horizons and P
    loses digits.  Within a segment all nodes are solved as one batch.
    """
    if restart_every < 1:
        raise ValueError("restart_every must be >= 1")
    grid = _grid(prob, s, steps)
    n = prob.n
    H = hamiltonian_matrix(prob)
    # backward in t: z(t - h) = Phi z(t)
    Phi = _rk4_step_matrix(-H, grid.h)
    L = min(restart_every, grid.steps)
    powers = np.empty((L, 2 * n, 2 * n))
    powers[0] = Phi
    for j in range(1, L):
        powers[j] = Phi @ powers[j - 1]

    P = np.empty((grid.steps + 1, n, n))
    P[-1] = prob.Q_f
    end = grid.steps
    while end > 0:
        seg = min(L, end)
        Z = powers[:seg] @ np.vstack([np.eye(n), P[end]])
        if not np.all(np.isfinite(Z)):
            raise SingularMatrixError(f"Hamiltonian flow overflowed before node {end}", pivot=0.0, node=end)
        X, Y = Z[:, :n, :], Z[:, n:, :]
        # P X = Y  <=>  X' P' = Y'
        sol = linear_solve_batch(np.swapaxes(X, 1, 2), np.swapaxes(Y, 1, 2), check=False)
        bad = np.flatnonzero(sol.rcond < 1.0 / HAMILTONIAN_MAX_COND)
        if bad.size:
            # bad[0] is the offending node closest to T
            node = end - 1 - int(bad[0])
            raise SingularMatrixError(
                f"X(t) singular or ill-conditioned at grid node {node} (rcond {sol.rcond[bad[0]]:.3e})",
                pivot=float(sol.min_pivot[bad[0]]),
                node=node,
            )
        Pseg = np.swapaxes(sol.x, 1, 2)
        # powers[j] maps node ``end`` to node ``end - 1 - j``
        P[end - seg:end] = (0.5 * (Pseg + np.swapaxes(Pseg, 1, 2)))[::-1]
        end -= seg
    return RiccatiSolution(grid, SampledPath(grid, P), "hamiltonian", prob.gain_factor)


def value(sol: RiccatiSolution, s_index: int, x0) -> float:
    """x0' P(t_k) x0 at grid node ``s_index``."""
    x = as_vector(x0, "x0")
    if x.shape[0] != sol.n:
        raise ShapeError(f"x0 has dimension {x.shape[0]}, P is {sol.n}x{sol.n}")
    return float(x @ sol.P[s_index] @ x)


def feedback_control(sol: RiccatiSolution, s_index: int, x) -> np.ndarray:
    """-R^-1 B' P(t_k) x."""
    x = as_vector(x, "x")
    if x.shape[0] != sol.n:
        raise ShapeError(f"x has dimension {x.shape[0]}, P is {sol.n}x{sol.n}")
    return -(sol.gain_factor @ (sol.P[s_index] @ x))


def simulate_closed_loop(prob: LqrProblem, sol: RiccatiSolution, s: float, x0) -> Trajectory:
    """Forward RK4 of x' = (A - B R^-1 B' P(t)) x on the Riccati grid.

    Interior RK4 stages read P by linear interpolation between nodes.
    """
    x0 = as_vector(x0, "x0")
    if x0.shape[0] != prob.n or sol.n != prob.n:
        raise ShapeError("x0, problem and Riccati solution dimensions disagree")
    grid = sol.grid
    if s != grid.t_start or grid.t_end != prob.T:
        raise ValueError(
            f"simulation window [{s}, {prob.T}] does not match the Riccati grid "
            f"[{grid.t_start}, {grid.t_end}]"
        )
    A, B, K = prob.A, prob.B, sol.gain_factor

    def rhs(t, x):
        return A @ x - B @ (K @ (sol.P.at(t) @ x))

    xs = integrate_ode(rhs, x0, grid, "forward")
    us = -np.einsum("ij,kjl,kl->ki", K, sol.P.values, xs.values)
    return Trajectory(grid, xs, SampledPath(grid, us))


def bolza_cost(Q, R, Q_f, grid: TimeGrid, x: np.ndarray, u: np.ndarray) -> float:
    """1/2 int (x'Qx + u'Ru) by Simpson plus 1/2 x(T)'Q_f x(T), from node samples."""
    running = np.einsum("ki,ij,kj->k", x, Q, x) + np.einsum("ki,ij,kj->k", u, R, u)
    return 0.5 * simpson(running, grid.h) + 0.5 * float(x[-1] @ Q_f @ x[-1])


def cost_open_loop(prob: LqrProblem, traj: Trajectory) -> float:
    if traj.x.shape != (prob.n,) or traj.u.shape != (prob.m,):
        raise ShapeError("trajectory dimensions do not match the problem")
    if traj.grid.t_end != prob.T:
        raise ValueError("trajectory must end at the horizon T")
    return bolza_cost(prob.Q, prob.R, prob.Q_f, traj.grid, traj.x.values, traj.u.values)
