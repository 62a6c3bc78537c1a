"""Small dense linear algebra and a fixed-step RK4 integrator.

Everything here works on plain numpy arrays.  Matrices in this package are
tiny (n <= ~20, augmented nM <= ~64), so the routines favour robustness and
bitwise determinism over speed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

__all__ = [
    "ShapeError",
    "DivergenceError",
    "SingularMatrixError",
    "TimeGrid",
    "SampledPath",
    "as_matrix",
    "as_vector",
    "symmetric_eigvals",
    "spectral_norm",
    "matrix_2norm",
    "max_matrix_2norm",
    "matrix_distance",
    "LinearSolve",
    "linear_solve",
    "linear_solve_batch",
    "integrate_ode",
    "simpson",
]


class ShapeError(ValueError):
    """Array shapes are incompatible with the requested operation."""


class DivergenceError(ArithmeticError):
    """An integration produced a non-finite state."""

    def __init__(self, message: str, node: int | None = None):
        super().__init__(message)
        self.node = node


class SingularMatrixError(np.linalg.LinAlgError):
    """A linear system is singular or too ill-conditioned to trust."""

    def __init__(self, message: str, pivot: float | None = None, node: int | None = None):
        super().__init__(message)
        self.pivot = pivot
        self.node = node


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float array; scalars become 1x1."""
    m = np.array(a, dtype=float)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def as_vector(v, name: str = "vector") -> np.ndarray:
    x = np.array(v, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} has non-finite entries")
    return x


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [t_start, t_end] with ``steps`` subintervals."""

    t_start: float
    t_end: float
    steps: int

    def __post_init__(self):
        if not (np.isfinite(self.t_start) and np.isfinite(self.t_end)):
            raise ValueError("grid endpoints must be finite")
        if not self.t_start < self.t_end:
            raise ValueError(f"need t_start < t_end, got {self.t_start} >= {self.t_end}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")

    @property
    def h(self) -> float:
        return (self.t_end - self.t_start) / self.steps

    @property
    def nodes(self) -> np.ndarray:
        k = np.arange(self.steps + 1)
        return self.t_start + k * (self.t_end - self.t_start) / self.steps

    def node(self, k: int) -> float:
        return self.t_start + k * (self.t_end - self.t_start) / self.steps

    def locate(self, t: float) -> tuple[int, float]:
        """Interval index k and local weight w so that t = (1-w) t_k + w t_{k+1}."""
        s = (t - self.t_start) / self.h
        k = min(max(int(np.floor(s)), 0), self.steps - 1)
        return k, s - k


@dataclass(frozen=True, eq=False)
class SampledPath:
    """Values of a vector or matrix function at every node of a grid.

    ``values[k]`` is the sample at ``grid.node(k)``.
    """

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape[0] != self.grid.steps + 1:
            raise ShapeError(
                f"expected {self.grid.steps + 1} samples, got {self.values.shape[0]}"
            )

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, k):
        return self.values[k]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape[1:]

    def at(self, t: float) -> np.ndarray:
        """Linear interpolation between the two bracketing nodes."""
        k, w = self.grid.locate(t)
        if w == 0.0:
            return self.values[k]
        if w == 1.0:
            return self.values[k + 1]
        return (1.0 - w) * self.values[k] + w * self.values[k + 1]


# ---------------------------------------------------------------------------
# eigenvalues / norms


def symmetric_eigvals(S, tol: float = 1e-15, max_sweeps: int = 60) -> np.ndarray:
    """Eigenvalues of a symmetric matrix (or a stack of them) by cyclic Jacobi.

    Accepts shape ``(n, n)`` or ``(..., n, n)``; the rotations for a fixed
    (p, q) pivot are applied to the whole stack at once.  Returns ascending
    eigenvalues with shape ``(n,)`` or ``(..., n)``.
    """
    a = np.array(S, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ShapeError(f"expected square matrices, got shape {a.shape}")
    batch_shape = a.shape[:-2]
    n = a.shape[-1]
    a = a.reshape((-1, n, n))
    a = 0.5 * (a + np.swapaxes(a, -1, -2))
    if n == 1:
        return a[:, 0, 0].reshape(batch_shape + (1,))

    scale = np.maximum(np.sqrt(np.sum(a * a, axis=(-1, -2))), np.finfo(float).tiny)
    offmask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.where(offmask, a * a, 0.0), axis=(-1, -2)))
        if np.all(off <= tol * scale):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[:, p, q]
                active = np.abs(apq) > tol * scale * 1e-3
                if not np.any(active):
                    continue
                app = a[:, p, p]
                aqq = a[:, q, q]
                with np.errstate(divide="ignore", invalid="ignore"):
                    theta = np.where(active, (aqq - app) / (2.0 * apq), 0.0)
                t = np.where(
                    active,
                    np.sign(theta + (theta == 0)) / (np.abs(theta) + np.sqrt(theta * theta + 1.0)),
                    0.0,
                )
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J with J the (p, q) Givens rotation
                ap = a[:, :, p].copy()
                aq = a[:, :, q].copy()
                a[:, :, p] = c[:, None] * ap - s[:, None] * aq
                a[:, :, q] = s[:, None] * ap + c[:, None] * aq
                ap = a[:, p, :].copy()
                aq = a[:, q, :].copy()
                a[:, p, :] = c[:, None] * ap - s[:, None] * aq
                a[:, q, :] = s[:, None] * ap + c[:, None] * aq
    else:
        raise ArithmeticError("Jacobi eigenvalue iteration did not converge")
    ev = np.sort(np.diagonal(a, axis1=-2, axis2=-1), axis=-1)
    return ev.reshape(batch_shape + (n,))


def spectral_norm(A) -> float | np.ndarray:
    """Largest singular value of any (stack of) real matrices.

    Exactly symmetric input uses max |eigenvalue| directly; otherwise the
    smaller of A^T A and A A^T goes through the Jacobi solver.
    """
    a = np.asarray(A, dtype=float)
    if a.ndim < 2:
        raise ShapeError(f"expected a matrix, got shape {a.shape}")
    if a.shape[-1] == a.shape[-2] and np.array_equal(a, np.swapaxes(a, -1, -2)):
        ev = symmetric_eigvals(a)
        out = np.maximum(np.abs(ev[..., 0]), np.abs(ev[..., -1]))
    else:
        at = np.swapaxes(a, -1, -2)
        gram = at @ a if a.shape[-1] <= a.shape[-2] else a @ at
        out = np.sqrt(np.maximum(symmetric_eigvals(gram)[..., -1], 0.0))
    return float(out) if out.ndim == 0 else out


def matrix_2norm(A) -> float | np.ndarray:
    """Spectral norm of a square matrix (or stack): sup x'Ay over unit x, y."""
    a = np.asarray(A, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ShapeError(f"matrix_2norm needs square input, got shape {a.shape}")
    return spectral_norm(a)


def max_matrix_2norm(stack) -> float:
    """max_k ||stack[k]||_2, exact, evaluating the spectral norm only where needed.

    The largest column norm bounds ||M||_2 from below and the Frobenius norm
    from above, so nodes whose upper bound falls short of the best lower bound
    are skipped.
    """
    a = np.asarray(stack, dtype=float)
    if a.ndim != 3:
        raise ShapeError(f"expected a stack of matrices, got shape {a.shape}")
    upper = np.sqrt(np.sum(a * a, axis=(1, 2)))
    lower = np.sqrt(np.max(np.sum(a * a, axis=1), axis=1))
    candidates = np.flatnonzero(upper >= lower.max())
    return float(np.max(matrix_2norm(a[candidates])))


def matrix_distance(A, A2) -> float:
    """d_2(A, A') = ||A - A'||_2 for square matrices of equal shape."""
    a = np.asarray(A, dtype=float)
    b = np.asarray(A2, dtype=float)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return matrix_2norm(a - b)


# ---------------------------------------------------------------------------
# linear systems


@dataclass(frozen=True, eq=False)
class LinearSolve:
    x: np.ndarray
    rcond: float | np.ndarray
    min_pivot: float | np.ndarray


def _lu_factor(a: np.ndarray):
    """Partial-pivoting LU of a stack (b, n, n); returns (lu, perm, min |pivot|)."""
    b, n, _ = a.shape
    lu = a.copy()
    perm = np.tile(np.arange(n), (b, 1))
    idx = np.arange(b)
    min_pivot = np.full(b, np.inf)
    for k in range(n):
        i = k + np.argmax(np.abs(lu[:, k:, k]), axis=1)
        piv = np.abs(lu[idx, i, k])
        min_pivot = np.minimum(min_pivot, piv)
        row_k = lu[idx, k].copy()
        lu[idx, k] = lu[idx, i]
        lu[idx, i] = row_k
        pk = perm[idx, k].copy()
        perm[idx, k] = perm[idx, i]
        perm[idx, i] = pk
        with np.errstate(divide="ignore", invalid="ignore"):
            lu[:, k + 1:, k] /= lu[:, k, k][:, None]
        lu[:, k + 1:, k + 1:] -= lu[:, k + 1:, k, None] * lu[:, k, None, k + 1:]
    return lu, perm, min_pivot


def _lu_solve(lu: np.ndarray, perm: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    n = lu.shape[1]
    y = np.take_along_axis(rhs, perm[:, :, None], axis=1)
    for k in range(n):
        y[:, k + 1:] -= lu[:, k + 1:, k, None] * y[:, k, None, :]
    for k in range(n - 1, -1, -1):
        y[:, k] /= lu[:, k, k][:, None]
        y[:, :k] -= lu[:, :k, k, None] * y[:, k, None, :]
    return y


def linear_solve_batch(A, B, pivot_tol: float = 1e-14, check: bool = True) -> LinearSolve:
    """Solve A[k] X[k] = B[k] for a stack of square systems.

    Pivoted elimination; ``rcond[k]`` is the exact 1-norm reciprocal
    condition number 1 / (||A||_1 ||A^-1||_1).  Raises SingularMatrixError
    naming the first system whose pivot falls below ``pivot_tol * max|A|``.
    With ``check=False`` nothing is raised; singular systems get rcond 0.
    """
    a = np.array(A, dtype=float)
    rhs = np.array(B, dtype=float)
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise ShapeError(f"expected a stack of square matrices, got {a.shape}")
    if rhs.ndim != 3 or rhs.shape[:2] != a.shape[:2]:
        raise ShapeError(f"right-hand sides {rhs.shape} do not match {a.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(rhs))):
        raise ValueError("non-finite entries in linear system")
    n = a.shape[1]
    lu, perm, min_pivot = _lu_factor(a)
    scale = np.maximum(np.max(np.abs(a), axis=(1, 2)), np.finfo(float).tiny)
    singular = ~(min_pivot > pivot_tol * scale)
    bad = np.flatnonzero(singular)
    if check and bad.size:
        k = int(bad[0])
        raise SingularMatrixError(
            f"matrix {k} is singular to working precision (pivot {min_pivot[k]:.3e})",
            pivot=float(min_pivot[k]),
            node=k,
        )
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        x = _lu_solve(lu, perm, rhs)
        inv = _lu_solve(lu, perm, np.broadcast_to(np.eye(n), a.shape).copy())
        rcond = 1.0 / (np.abs(a).sum(axis=1).max(axis=1) * np.abs(inv).sum(axis=1).max(axis=1))
    rcond = np.where(singular | ~np.isfinite(rcond), 0.0, rcond)
    return LinearSolve(x, rcond, min_pivot)


def linear_solve(A, B, pivot_tol: float = 1e-14) -> LinearSolve:
    """Solve A X = B (B a vector or matrix) by LU with partial pivoting."""
    a = as_matrix(A, "A")
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"A must be square, got {a.shape}")
    b = np.array(B, dtype=float)
    vector_rhs = b.ndim == 1
    if vector_rhs:
        b = b[:, None]
    if b.ndim != 2 or b.shape[0] != a.shape[0]:
        raise ShapeError(f"B has shape {b.shape}, A is {a.shape}")
    try:
        res = linear_solve_batch(a[None], b[None], pivot_tol)
    except SingularMatrixError as exc:
        raise SingularMatrixError(
            f"matrix is singular to working precision (pivot {exc.pivot:.3e})", pivot=exc.pivot
        ) from None
    x = res.x[0]
    return LinearSolve(x[:, 0] if vector_rhs else x, float(res.rcond[0]), float(res.min_pivot[0]))


# ---------------------------------------------------------------------------
# ODE integration

Direction = Literal["forward", "backward"]


def integrate_ode(
    f: Callable[[float, np.ndarray], np.ndarray],
    state0,
    grid: TimeGrid,
    direction: Direction = "forward",
    project: Callable[[np.ndarray], np.ndarray] | None = None,
) -> SampledPath:
    """Classical RK4 with fixed step on ``grid``.

    ``direction="backward"`` treats ``state0`` as the value at ``grid.t_end``
    and integrates the time-reversed system tau = t_end - t forward.  The
    returned samples are always ordered by grid node.  ``project`` (if given)
    is applied to the state after every step, e.g. to re-symmetrize a matrix.
    State can have any shape; ``f`` must return the same shape.
    """
    y = np.array(state0, dtype=float)
    if direction == "forward":
        t0, sign = grid.t_start, 1.0
    elif direction == "backward":
        t0, sign = grid.t_end, -1.0
    else:
        raise ValueError(f"unknown direction {direction!r}")

    def g(tau, z):
        return sign * np.asarray(f(t0 + sign * tau, z), dtype=float)

    h = grid.h
    n = grid.steps
    out = np.empty((n + 1,) + y.shape)
    out[0] = y
    for k in range(n):
        tau = k * h
        # overflow is detected below and reported with its node
        with np.errstate(over="ignore", invalid="ignore"):
            k1 = g(tau, y)
            k2 = g(tau + 0.5 * h, y + 0.5 * h * k1)
            k3 = g(tau + 0.5 * h, y + 0.5 * h * k2)
            k4 = g(tau + h, y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if project is not None:
                y = project(y)
        if not np.all(np.isfinite(y)):
            node = k + 1 if sign > 0 else n - (k + 1)
            raise DivergenceError(f"non-finite state at grid node {node}", node=node)
        out[k + 1] = y
    if sign < 0:
        out = out[::-1].copy()
    return SampledPath(grid, out)


def simpson(values: np.ndarray, h: float) -> float | np.ndarray:
    """Composite Simpson rule on uniform samples along axis 0.

    With an odd number of intervals the last one is done by the trapezoid rule.
    """
    v = np.asarray(values, dtype=float)
    n = v.shape[0] - 1
    if n < 1:
        return np.zeros(v.shape[1:]) if v.ndim > 1 else 0.0
    m = n if n % 2 == 0 else n - 1
    total = np.zeros(v.shape[1:])
    if m > 0:
        total = (h / 3.0) * (v[0] + 4.0 * v[1:m:2].sum(axis=0) + 2.0 * v[2:m - 1:2].sum(axis=0) + v[m])
    if m != n:
        total = total + 0.5 * h * (v[n - 1] + v[n])
    return float(total) if np.ndim(total) == 0 else total
