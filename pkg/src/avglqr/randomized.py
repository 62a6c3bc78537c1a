"""Seeded random problem generators shared by the test suite and ``--check``."""
from __future__ import annotations

import numpy as np

from .averaged import AveragedLqrProblem, DiscreteMatrixMeasure, assemble_augmented, bound_constants
from .lqr import LqrProblem, riccati_solve_direct
from .metrics import sup_norm_value_error, w1_to_dirac


def random_psd(rng: np.random.Generator, n: int, scale: float = 1.0, shift: float = 0.0) -> np.ndarray:
    G = rng.uniform(-1.0, 1.0, size=(n, n))
    return scale * (G @ G.T) / n + shift * np.eye(n)


def random_lqr_problem(
    rng: np.random.Generator,
    n: int | None = None,
    m: int | None = None,
    max_n: int = 4,
    entry_bound: float = 2.0,
    T_range: tuple[float, float] = (0.5, 5.0),
) -> LqrProblem:
    """A and B entries uniform in [-entry_bound, entry_bound]; Q, Q_f PSD; R PD."""
    n = int(rng.integers(1, max_n + 1)) if n is None else n
    m = int(rng.integers(1, min(n, 2) + 1)) if m is None else m
    A = rng.uniform(-entry_bound, entry_bound, size=(n, n))
    B = rng.uniform(-entry_bound, entry_bound, size=(n, m))
    Q = random_psd(rng, n)
    Q_f = random_psd(rng, n, scale=0.5)
    R = random_psd(rng, m, scale=0.5, shift=0.2)
    T = float(rng.uniform(*T_range))
    return LqrProblem(A, B, Q, R, Q_f, T)


def random_measure(
    rng: np.random.Generator,
    A_hat: np.ndarray,
    M: int,
    radius: float = 0.5,
    anchor_weight: float | None = None,
) -> DiscreteMatrixMeasure:
    """A_hat plus M - 1 random perturbations of 2-norm-scale ``radius``."""
    n = A_hat.shape[0]
    supports = [A_hat] + [A_hat + radius * rng.uniform(-1, 1, size=(n, n)) for _ in range(M - 1)]
    w = rng.uniform(0.1, 1.0, size=M)
    if anchor_weight is not None and M > 1:
        w[1:] *= (1.0 - anchor_weight) / w[1:].sum()
        w[0] = anchor_weight
    w = w / w.sum()
    return DiscreteMatrixMeasure(np.array(supports), w)


def random_averaged_problem(
    rng: np.random.Generator, n: int | None = 2, max_M: int = 4, max_n: int = 4
) -> tuple[LqrProblem, AveragedLqrProblem]:
    """Moderate averaged problem: A entries in [-1, 1], T in [0.5, 2], 2..max_M supports.

    ``n=None`` draws the state dimension from 1..max_n.
    """
    if n is None:
        n = int(rng.integers(1, max_n + 1))
    probA = random_lqr_problem(rng, n=n, entry_bound=1.0, T_range=(0.5, 2.0))
    M = int(rng.integers(2, max_M + 1))
    mu = random_measure(rng, probA.A, M)
    return probA, AveragedLqrProblem.from_lqr(probA, mu)


def lipschitz_check(
    probA: LqrProblem,
    probB: AveragedLqrProblem,
    K_half_width: float = 1.0,
    steps: int = 400,
    space_grid_per_axis: int = 11,
) -> tuple[float, float]:
    """(sup value-function gap on [-w, w]^n, C_K * W1)."""
    n = probA.n
    K_box = [(-K_half_width, K_half_width)] * n
    solA = riccati_solve_direct(probA, 0.0, steps)
    solB = riccati_solve_direct(assemble_augmented(probB).as_lqr(), 0.0, steps)
    err = sup_norm_value_error(solB, solA, K_box, space_grid_per_axis)
    radius = K_half_width * np.sqrt(n)
    bc = bound_constants(probB, np.zeros(n), radius)
    return err, bc.C_K * w1_to_dirac(probB.measure, probA.A)
