"""Averaged LQR over a finite-support measure of state matrices.

A single control u drives every candidate system x_i' = A_i x_i + B u from
the same x0, and the cost is the weighted mean of the per-system Bolza
costs.  For pi = sum_i alpha_i delta_{A_i} this is an ordinary LQR on the
stacked state X = (x_1, ..., x_M) with block-diagonal A and cost weights
alpha_i Q, alpha_i Q_f.

Costates use the maximum-principle convention

    -p_i' = A_i' p_i - Q x_i,   -p_i(T) = Q_f x_i(T),
    u = +R^-1 B' sum_i alpha_i p_i,

so along the optimum alpha_i p_i = COSTATE_SIGN * (P~ X)_i.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np

from .core import (
    SampledPath,
    ShapeError,
    TimeGrid,
    as_matrix,
    as_vector,
    integrate_ode,
    matrix_2norm,
    simpson,
    spectral_norm,
)
from .lqr import (
    COST_PER_VALUE,
    LqrProblem,
    RiccatiSolution,
    bolza_cost,
    riccati_solve_direct,
    simulate_closed_loop,
)

__all__ = [
    "COSTATE_SIGN",
    "SweepDidNotConverge",
    "DiscreteMatrixMeasure",
    "AveragedLqrProblem",
    "AugmentedLqr",
    "ProblemBSolution",
    "BoundConstants",
    "assemble_augmented",
    "solve_problem_b",
    "forward_backward_sweep",
    "averaged_cost",
    "costate_solve",
    "pmp_residual",
    "bound_constants",
    "control_l2_norm",
]

# alpha_i p_i(t) = COSTATE_SIGN * (P~(t) X(t))_i on the optimal process
COSTATE_SIGN = -1.0

WEIGHT_SUM_TOL = 1e-12


class SweepDidNotConverge(ArithmeticError):
    def __init__(self, message: str, iterations: int, last_change: float):
        super().__init__(message)
        self.iterations = iterations
        self.last_change = last_change


@dataclass(frozen=True, eq=False)
class DiscreteMatrixMeasure:
    """pi = sum_i weights[i] * delta_{supports[i]}."""

    supports: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        S = np.array(self.supports, dtype=float)
        w = np.array(self.weights, dtype=float).reshape(-1)
        if S.ndim == 2:
            S = S[None]
        if S.ndim != 3 or S.shape[1] != S.shape[2] or S.shape[0] < 1:
            raise ShapeError(f"supports must be a list of square matrices, got shape {S.shape}")
        if w.shape[0] != S.shape[0]:
            raise ShapeError(f"{S.shape[0]} supports but {w.shape[0]} weights")
        if not (np.all(np.isfinite(S)) and np.all(np.isfinite(w))):
            raise ValueError("measure has non-finite entries")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights must sum to 1, got {w.sum():.15g}")
        S.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "supports", S)
        object.__setattr__(self, "weights", w)

    @classmethod
    def dirac(cls, A) -> "DiscreteMatrixMeasure":
        return cls(as_matrix(A, "A")[None], [1.0])

    @property
    def M(self) -> int:
        return self.supports.shape[0]

    @property
    def n(self) -> int:
        return self.supports.shape[1]

    @cached_property
    def C_A(self) -> float:
        """max_i ||A_i||_2."""
        return float(np.max(matrix_2norm(self.supports)))


@dataclass(frozen=True, eq=False)
class AveragedLqrProblem:
    measure: DiscreteMatrixMeasure
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Q_f: np.ndarray
    T: float

    def __post_init__(self):
        # validates B, Q, R, Q_f, T against the first support
        base = LqrProblem(self.measure.supports[0], self.B, self.Q, self.R, self.Q_f, self.T)
        for name in ("B", "Q", "R", "Q_f", "T"):
            object.__setattr__(self, name, getattr(base, name))
        object.__setattr__(self, "_base", base)

    @classmethod
    def from_lqr(cls, prob: LqrProblem, measure: DiscreteMatrixMeasure) -> "AveragedLqrProblem":
        return cls(measure, prob.B, prob.Q, prob.R, prob.Q_f, prob.T)

    @property
    def n(self) -> int:
        return self.measure.n

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def r1(self) -> float:
        return self._base.r1

    @property
    def gain_factor(self) -> np.ndarray:
        return self._base.gain_factor

    def support_problem(self, i: int) -> LqrProblem:
        return LqrProblem(self.measure.supports[i], self.B, self.Q, self.R, self.Q_f, self.T)


@dataclass(frozen=True, eq=False)
class AugmentedLqr:
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    Q_f: np.ndarray
    R: np.ndarray
    T: float
    n: int
    M: int

    def as_lqr(self) -> LqrProblem:
        return LqrProblem(self.A, self.B, self.Q, self.R, self.Q_f, self.T)

    def stack(self, x0) -> np.ndarray:
        """X0 = (x0, ..., x0)."""
        return np.tile(as_vector(x0, "x0"), self.M)


def assemble_augmented(prob: AveragedLqrProblem, prune_zero_weights: bool = False) -> AugmentedLqr:
    """Block-diagonal A~, stacked B~, and weighted block-diagonal Q~, Q~_f.

    Zero-weight supports are kept unless ``prune_zero_weights`` is set.
    """
    mu = prob.measure
    keep = np.flatnonzero(mu.weights > 0) if prune_zero_weights else np.arange(mu.M)
    supports, weights = mu.supports[keep], mu.weights[keep]
    M, n = len(keep), mu.n
    A = np.zeros((n * M, n * M))
    for i, Ai in enumerate(supports):
        A[i * n:(i + 1) * n, i * n:(i + 1) * n] = Ai
    B = np.tile(prob.B, (M, 1))
    Q = np.kron(np.diag(weights), prob.Q)
    Q_f = np.kron(np.diag(weights), prob.Q_f)
    return AugmentedLqr(A, B, Q, Q_f, prob.R, prob.T, n, M)


@dataclass(frozen=True, eq=False)
class ProblemBSolution:
    """Optimal process of the averaged problem from a common initial state.

    ``x.values`` and ``p.values`` have shape (nodes, M, n); ``u.values`` has
    shape (nodes, m).  ``riccati`` is None for the sweep route.
    """

    riccati: RiccatiSolution | None
    u: SampledPath
    x: SampledPath
    p: SampledPath
    value: float
    x0: np.ndarray
    method: Literal["riccati", "sweep"] = "riccati"
    iterations: int = 0

    @property
    def grid(self) -> TimeGrid:
        return self.u.grid

    def trajectory(self, i: int) -> SampledPath:
        return SampledPath(self.grid, self.x.values[:, i, :])

    def costate(self, i: int) -> SampledPath:
        return SampledPath(self.grid, self.p.values[:, i, :])


def _open_loop_states(prob: AveragedLqrProblem, u: SampledPath, x0: np.ndarray) -> SampledPath:
    """Every support driven by the same control, u linear between nodes."""
    supports, B = prob.measure.supports, prob.B
    X0 = np.tile(x0, (prob.measure.M, 1))

    def rhs(t, X):
        return np.einsum("ijk,ik->ij", supports, X) + B @ u.at(t)

    return integrate_ode(rhs, X0, u.grid, "forward")


def costate_solve(prob: AveragedLqrProblem, trajectories: SampledPath) -> SampledPath:
    """Backward RK4 of -p_i' = A_i' p_i - Q x_i from -p_i(T) = Q_f x_i(T).

    ``trajectories.values`` has shape (nodes, M, n); interior stages read
    x_i by linear interpolation.
    """
    mu = prob.measure
    if trajectories.shape != (mu.M, mu.n):
        raise ShapeError(f"expected trajectories of shape (M, n) = {(mu.M, mu.n)}, got {trajectories.shape}")
    AT = np.swapaxes(mu.supports, 1, 2)
    Q = prob.Q
    pT = -(trajectories.values[-1] @ prob.Q_f.T)

    def rhs(t, p):
        return -np.einsum("ijk,ik->ij", AT, p) + trajectories.at(t) @ Q.T

    return integrate_ode(rhs, pT, trajectories.grid, "backward")


def _stationary_control(prob: AveragedLqrProblem, p: np.ndarray) -> np.ndarray:
    """R^-1 B' sum_i alpha_i p_i at every node; p has shape (nodes, M, n)."""
    mean_p = np.einsum("i,kij->kj", prob.measure.weights, p)
    return mean_p @ prob.gain_factor.T


def solve_problem_b(
    prob: AveragedLqrProblem,
    s: float,
    x0,
    steps: int = 2000,
    method: Literal["riccati", "sweep"] = "riccati",
    riccati: RiccatiSolution | None = None,
    **sweep_options,
) -> ProblemBSolution:
    """Optimal control of the averaged problem from x0 at time s.

    The default route solves the augmented Riccati equation and records the
    control realized along its closed loop from X0 = (x0, ..., x0).
    ``method="sweep"`` runs :func:`forward_backward_sweep` instead.  A
    previously computed augmented Riccati solution on the same grid can be
    passed as ``riccati`` to skip re-solving it for another x0.
    """
    x0 = as_vector(x0, "x0")
    if x0.shape[0] != prob.n:
        raise ShapeError(f"x0 has dimension {x0.shape[0]}, problem has n = {prob.n}")
    if method == "sweep":
        return forward_backward_sweep(prob, s, x0, steps, **sweep_options)
    if method != "riccati":
        raise ValueError(f"unknown method {method!r}")

    aug = assemble_augmented(prob)
    aug_prob = aug.as_lqr()
    if riccati is None:
        ric = riccati_solve_direct(aug_prob, s, steps)
    elif riccati.grid != TimeGrid(float(s), prob.T, int(steps)) or riccati.n != aug.n * aug.M:
        raise ValueError("supplied Riccati solution does not match this problem and grid")
    else:
        ric = riccati
    X0 = aug.stack(x0)
    traj = simulate_closed_loop(aug_prob, ric, s, X0)
    grid = ric.grid
    xs = SampledPath(grid, traj.x.values.reshape(grid.steps + 1, aug.M, aug.n))
    ps = costate_solve(prob, xs)
    val = float(X0 @ ric.P[0] @ X0)
    return ProblemBSolution(ric, traj.u, xs, ps, val, x0)


def forward_backward_sweep(
    prob: AveragedLqrProblem,
    s: float,
    x0,
    steps: int = 2000,
    relaxation: float = 0.5,
    tol: float = 1e-8,
    max_iter: int = 500,
    u_init: np.ndarray | None = None,
) -> ProblemBSolution:
    """Fixed-point iteration on the maximum principle.

    Forward states under the current u, backward costates, then
    u <- (1 - relaxation) u + relaxation R^-1 B' sum_i alpha_i p_i.  Stops
    when the sup-norm change of u is at most ``tol``.
    """
    x0 = as_vector(x0, "x0")
    grid = TimeGrid(float(s), prob.T, int(steps))
    u = np.zeros((grid.steps + 1, prob.m)) if u_init is None else np.array(u_init, dtype=float)
    change = np.inf
    for it in range(1, max_iter + 1):
        xs = _open_loop_states(prob, SampledPath(grid, u), x0)
        ps = costate_solve(prob, xs)
        target = _stationary_control(prob, ps.values)
        u_new = (1.0 - relaxation) * u + relaxation * target
        change = float(np.max(np.abs(u_new - u)))
        u = u_new
        if not np.isfinite(change):
            break
        if change <= tol:
            up = SampledPath(grid, u)
            xs = _open_loop_states(prob, up, x0)
            ps = costate_solve(prob, xs)
            J = averaged_cost(prob, up, s, x0)
            return ProblemBSolution(None, up, xs, ps, J / COST_PER_VALUE, x0, "sweep", it)
    raise SweepDidNotConverge(
        f"forward-backward sweep did not converge in {max_iter} iterations "
        f"(last change {change:.3e})",
        iterations=max_iter,
        last_change=change,
    )


def averaged_cost(prob: AveragedLqrProblem, u: SampledPath, s: float, x0) -> float:
    """sum_i alpha_i J_i[u], each support simulated under the same control."""
    x0 = as_vector(x0, "x0")
    if u.grid.t_start != s or u.grid.t_end != prob.T:
        raise ValueError("control must be sampled on [s, T]")
    if u.shape != (prob.m,):
        raise ShapeError(f"control has shape {u.shape}, expected ({prob.m},)")
    xs = _open_loop_states(prob, u, x0)
    total = 0.0
    for i, alpha in enumerate(prob.measure.weights):
        total += alpha * bolza_cost(prob.Q, prob.R, prob.Q_f, u.grid, xs.values[:, i, :], u.values)
    return total


def pmp_residual(prob: AveragedLqrProblem, sol: ProblemBSolution) -> float:
    """sup_t |u(t) - R^-1 B' sum_i alpha_i p_i(t)| over the grid."""
    if sol.p.shape != (prob.measure.M, prob.n) or sol.u.shape != (prob.m,):
        raise ShapeError("solution does not match the problem dimensions")
    defect = sol.u.values - _stationary_control(prob, sol.p.values)
    return float(np.max(np.linalg.norm(defect, axis=1)))


def control_l2_norm(u: SampledPath) -> float:
    """(int |u|^2 dt)^(1/2) by Simpson."""
    return float(np.sqrt(max(simpson(np.sum(u.values ** 2, axis=1), u.grid.h), 0.0)))


@dataclass(frozen=True)
class BoundConstants:
    C_A: float
    C_u: float
    C_x: float
    C_p: float
    C_K: float
    r1: float
    K_radius: float = field(default=0.0)


def _control_bound(prob: AveragedLqrProblem, C_A: float, radius: float) -> float:
    q = matrix_2norm(prob.Q)
    qf = matrix_2norm(prob.Q_f)
    return float(np.sqrt((prob.T * q + qf) * radius ** 2 * np.exp(2.0 * C_A * prob.T) / prob.r1))


def _state_bound(prob: AveragedLqrProblem, C_A: float, radius: float, C_u: float) -> float:
    return float((radius + np.sqrt(prob.T) * spectral_norm(prob.B) * C_u) * np.exp(C_A * prob.T))


def bound_constants(prob: AveragedLqrProblem, x0, K_radius: float) -> BoundConstants:
    """Explicit a-priori constants for controls, states, costates and values.

    C_u bounds the L2 norm of the optimal control, C_x the optimal states,
    C_p the costates (backward Gronwall), all at ``x0``.  C_K is the value
    function's Lipschitz constant with respect to W1, uniform over
    |x0| <= K_radius.
    """
    x0 = as_vector(x0, "x0")
    T = prob.T
    C_A = prob.measure.C_A
    q = matrix_2norm(prob.Q)
    qf = matrix_2norm(prob.Q_f)
    growth = np.exp(C_A * T)

    r = float(np.linalg.norm(x0))
    C_u = _control_bound(prob, C_A, r)
    C_x = _state_bound(prob, C_A, r, C_u)
    C_p = (qf + T * q) * C_x * growth

    Cx_K = _state_bound(prob, C_A, K_radius, _control_bound(prob, C_A, K_radius))
    C_K = (T * q * Cx_K + qf * Cx_K) * Cx_K * T * growth
    return BoundConstants(C_A, C_u, C_x, float(C_p), float(C_K), prob.r1, float(K_radius))
