"""Finite-horizon LQR and averaged LQR over finite-support measures of state matrices."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    DivergenceError,
    SampledPath,
    ShapeError,
    SingularMatrixError,
    TimeGrid,
    integrate_ode,
    linear_solve,
    matrix_2norm,
    matrix_distance,
)
from .lqr import (  # noqa: E402
    COST_PER_VALUE,
    LqrProblem,
    RiccatiSolution,
    Trajectory,
    cost_open_loop,
    feedback_control,
    riccati_solve_direct,
    riccati_solve_hamiltonian,
    simulate_closed_loop,
    value,
)
from .averaged import (  # noqa: E402
    COSTATE_SIGN,
    AugmentedLqr,
    AveragedLqrProblem,
    BoundConstants,
    DiscreteMatrixMeasure,
    ProblemBSolution,
    assemble_augmented,
    averaged_cost,
    bound_constants,
    costate_solve,
    forward_backward_sweep,
    pmp_residual,
    solve_problem_b,
)
from .metrics import (  # noqa: E402
    ConvergenceRow,
    convergence_order,
    riccati_block_deviation,
    sup_norm_control_error,
    sup_norm_value_error,
    w1_to_dirac,
)
