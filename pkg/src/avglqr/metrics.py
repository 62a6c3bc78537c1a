"""Distances and convergence diagnostics between averaged and true LQR."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .averaged import DiscreteMatrixMeasure
from .core import SampledPath, ShapeError, as_matrix, matrix_2norm, max_matrix_2norm
from .lqr import RiccatiSolution

__all__ = [
    "ConvergenceRow",
    "w1_to_dirac",
    "box_lattice",
    "reduced_riccati",
    "value_error_profile",
    "sup_norm_value_error",
    "sup_norm_control_error",
    "convergence_order",
    "riccati_block_deviation",
]


@dataclass(frozen=True)
class ConvergenceRow:
    N: int
    alpha1: float
    value_error: float
    value_order: float | None
    control_error: float
    control_order: float | None
    w1: float


def w1_to_dirac(measure: DiscreteMatrixMeasure, A_hat) -> float:
    """W1(pi, delta_A_hat) = sum_i alpha_i ||A_i - A_hat||_2.

    Exact: the only coupling with a Dirac marginal is the product coupling.
    """
    A_hat = as_matrix(A_hat, "A_hat")
    if A_hat.shape != measure.supports.shape[1:]:
        raise ShapeError(f"A_hat is {A_hat.shape}, supports are {measure.supports.shape[1:]}")
    dists = matrix_2norm(measure.supports - A_hat)
    return float(np.dot(measure.weights, np.atleast_1d(dists)))


def box_lattice(K_box: Sequence[tuple[float, float]], points_per_axis: int) -> np.ndarray:
    """Tensor lattice of an axis-aligned box, shape (points_per_axis**d, d)."""
    if points_per_axis < 1:
        raise ValueError("points_per_axis must be >= 1")
    axes = [np.linspace(lo, hi, points_per_axis) for lo, hi in K_box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def reduced_riccati(P_aug: RiccatiSolution, n: int) -> np.ndarray:
    """sum_ij of the n x n blocks of P~(t), so X0'P~X0 = x0'(.)x0 for X0 = (x0,...,x0)."""
    vals = P_aug.P.values
    nM = vals.shape[1]
    if nM % n:
        raise ShapeError(f"augmented dimension {nM} is not a multiple of n = {n}")
    M = nM // n
    return vals.reshape(-1, M, n, M, n).sum(axis=(1, 3))


def _check_pair(P_aug: RiccatiSolution, P_base: RiccatiSolution) -> None:
    if P_aug.grid != P_base.grid:
        raise ValueError(f"Riccati grids differ: {P_aug.grid} vs {P_base.grid}")
    if P_aug.n % P_base.n:
        raise ShapeError(f"augmented dimension {P_aug.n} is not a multiple of {P_base.n}")


def value_error_profile(
    P_aug: RiccatiSolution,
    P_base: RiccatiSolution,
    K_box: Sequence[tuple[float, float]],
    space_grid_per_axis: int = 41,
) -> np.ndarray:
    """max over the lattice of |X0'P~(t)X0 - x0'P(t)x0| at every time node."""
    _check_pair(P_aug, P_base)
    n = P_base.n
    if len(K_box) != n:
        raise ShapeError(f"K_box has {len(K_box)} axes, state dimension is {n}")
    D = reduced_riccati(P_aug, n) - P_base.P.values
    pts = box_lattice(K_box, space_grid_per_axis)
    q = np.einsum("pi,tij,pj->tp", pts, D, pts)
    return np.max(np.abs(q), axis=1)


def sup_norm_value_error(
    P_aug: RiccatiSolution,
    P_base: RiccatiSolution,
    K_box: Sequence[tuple[float, float]],
    space_grid_per_axis: int = 41,
    times: Literal["all", "initial"] = "all",
) -> float:
    """Sup of the value-function gap over time nodes x lattice points of K_box.

    ``times="initial"`` restricts to the first node (t = s).
    """
    prof = value_error_profile(P_aug, P_base, K_box, space_grid_per_axis)
    if times == "all":
        return float(prof.max())
    if times == "initial":
        return float(prof[0])
    raise ValueError(f"unknown times selector {times!r}")


def sup_norm_control_error(uN: SampledPath, uA: SampledPath) -> float:
    """max over nodes of |uN(t) - uA(t)|."""
    if uN.grid != uA.grid:
        raise ValueError("controls are sampled on different grids")
    if uN.shape != uA.shape:
        raise ShapeError(f"control shapes differ: {uN.shape} vs {uA.shape}")
    return float(np.max(np.linalg.norm(uN.values - uA.values, axis=1)))


def convergence_order(errors: Sequence[float]) -> list[float]:
    """log2(e_{k-1} / e_k) for k >= 1."""
    e = [float(x) for x in errors]
    for k, x in enumerate(e):
        if not x > 0:
            raise ValueError(f"order undefined: error[{k}] = {x} is not positive")
    return [math.log2(e[k - 1] / e[k]) for k in range(1, len(e))]


def riccati_block_deviation(P_aug: RiccatiSolution, P_base: RiccatiSolution) -> float:
    """sup_t ||P~(t) - diag(P(t), 0, ..., 0)||_2."""
    _check_pair(P_aug, P_base)
    n = P_base.n
    diff = np.array(P_aug.P.values, copy=True)
    diff[:, :n, :n] -= P_base.P.values
    return max_matrix_2norm(diff)
