from __future__ import annotations

import numpy as np
import pytest

from avglqr.averaged import (
    COSTATE_SIGN,
    AveragedLqrProblem,
    DiscreteMatrixMeasure,
    SweepDidNotConverge,
    assemble_augmented,
    averaged_cost,
    bound_constants,
    control_l2_norm,
    costate_solve,
    forward_backward_sweep,
    pmp_residual,
    solve_problem_b,
)
from avglqr.core import SampledPath, ShapeError, TimeGrid, integrate_ode
from avglqr.lqr import (
    COST_PER_VALUE,
    LqrProblem,
    Trajectory,
    cost_open_loop,
    riccati_solve_direct,
    simulate_closed_loop,
    value,
)
from avglqr.randomized import random_averaged_problem
from oracles import dyadic_weights, perturbation_supports

ROT = np.array([[0.0, 1.0], [-1.0, 0.0]])
X0 = np.array([1.0, 0.0])


def harmonic_b(N: int) -> AveragedLqrProblem:
    mu = DiscreteMatrixMeasure(np.array(perturbation_supports(ROT)), dyadic_weights(N))
    return AveragedLqrProblem(mu, [[0.0], [1.0]], np.eye(2), [[0.1]], np.zeros((2, 2)), 5.0)


def two_support(alpha=(0.5, 0.5), Q=None, Q_f=None, T=1.0) -> AveragedLqrProblem:
    A2 = ROT + np.array([[0.0, 0.0], [0.3, -0.2]])
    mu = DiscreteMatrixMeasure(np.array([ROT, A2]), np.array(alpha))
    Q = np.eye(2) if Q is None else Q
    Q_f = 0.5 * np.eye(2) if Q_f is None else Q_f
    return AveragedLqrProblem(mu, [[0.0], [1.0]], Q, [[1.0]], Q_f, T)


# -- measures and augmentation -------------------------------------------------

@pytest.mark.parametrize(
    "supports, weights",
    [
        ([ROT, ROT], [0.5, 0.6]),
        ([ROT, ROT], [1.5, -0.5]),
        ([ROT], [1.0, 0.0]),
        ([np.ones((2, 3))], [1.0]),
        ([], []),
    ],
)
def test_measure_validation(supports, weights):
    with pytest.raises(ValueError):
        DiscreteMatrixMeasure(np.array(supports), np.array(weights))


def test_measure_C_A():
    mu = DiscreteMatrixMeasure(np.array([np.eye(2), 3 * np.eye(2)]), np.array([0.9, 0.1]))
    assert mu.C_A == pytest.approx(3.0)
    assert DiscreteMatrixMeasure.dirac(ROT).M == 1


def test_problem_dimension_mismatch():
    mu = DiscreteMatrixMeasure.dirac(np.eye(3))
    with pytest.raises(ValueError):
        AveragedLqrProblem(mu, [[0.0], [1.0]], np.eye(2), [[1.0]], np.zeros((2, 2)), 1.0)


def test_augment_single_support_is_identity():
    prob = two_support(alpha=(1.0, 0.0))
    mu1 = DiscreteMatrixMeasure.dirac(ROT)
    aug = assemble_augmented(AveragedLqrProblem(mu1, prob.B, prob.Q, prob.R, prob.Q_f, prob.T))
    np.testing.assert_array_equal(aug.A, ROT)
    np.testing.assert_array_equal(aug.B, prob.B)
    np.testing.assert_array_equal(aug.Q, prob.Q)
    np.testing.assert_array_equal(aug.Q_f, prob.Q_f)


def test_augment_harmonic_dimensions():
    aug = assemble_augmented(harmonic_b(0))
    assert aug.A.shape == (18, 18) and aug.B.shape == (18, 1)
    assert (aug.n, aug.M) == (2, 9)
    for i, Ai in enumerate(perturbation_supports(ROT)):
        np.testing.assert_array_equal(aug.A[2 * i:2 * i + 2, 2 * i:2 * i + 2], Ai)
    off = aug.A.copy()
    for i in range(9):
        off[2 * i:2 * i + 2, 2 * i:2 * i + 2] = 0
    assert np.all(off == 0)


def test_augment_half_weights():
    prob = two_support()
    aug = assemble_augmented(prob)
    np.testing.assert_array_equal(aug.Q[:2, :2], prob.Q / 2)
    np.testing.assert_array_equal(aug.Q[2:, 2:], prob.Q / 2)
    np.testing.assert_array_equal(aug.Q_f[2:, 2:], prob.Q_f / 2)


def test_zero_weights_kept_unless_pruned():
    prob = harmonic_b(0)
    assert assemble_augmented(prob).M == 9
    assert assemble_augmented(prob, prune_zero_weights=True).M == 8


# -- the averaged optimum --------------------------------------------------------

def test_dirac_reduces_to_problem_a(harmonic):
    probB = AveragedLqrProblem.from_lqr(harmonic, DiscreteMatrixMeasure.dirac(harmonic.A))
    sol = solve_problem_b(probB, 0.0, X0, 2000)
    ricA = riccati_solve_direct(harmonic, 0.0, 2000)
    trA = simulate_closed_loop(harmonic, ricA, 0.0, X0)
    assert sol.value == pytest.approx(value(ricA, 0, X0), abs=1e-10)
    np.testing.assert_allclose(sol.u.values, trA.u.values, atol=1e-10)
    np.testing.assert_allclose(sol.trajectory(0).values, trA.x.values, atol=1e-10)


def test_duplicated_support_matches_dirac():
    single = two_support(alpha=(1.0, 0.0))
    mu = DiscreteMatrixMeasure(np.array([ROT, ROT]), np.array([0.5, 0.5]))
    dup = AveragedLqrProblem(mu, single.B, single.Q, single.R, single.Q_f, single.T)
    a = solve_problem_b(AveragedLqrProblem(DiscreteMatrixMeasure.dirac(ROT), single.B, single.Q,
                                           single.R, single.Q_f, single.T), 0.0, X0, 400)
    b = solve_problem_b(dup, 0.0, X0, 400)
    assert b.value == pytest.approx(a.value, abs=1e-12)
    np.testing.assert_allclose(b.u.values, a.u.values, atol=1e-12)


def test_all_trajectories_share_initial_state():
    sol = solve_problem_b(harmonic_b(2), 0.0, X0, 400)
    assert sol.x.values.shape == (401, 9, 2)
    assert np.all(sol.x.values[0] == X0)


def test_riccati_reuse_checks_grid():
    prob = two_support()
    sol = solve_problem_b(prob, 0.0, X0, 200)
    again = solve_problem_b(prob, 0.0, [0.0, 1.0], 200, riccati=sol.riccati)
    fresh = solve_problem_b(prob, 0.0, [0.0, 1.0], 200)
    np.testing.assert_array_equal(again.u.values, fresh.u.values)
    with pytest.raises(ValueError):
        solve_problem_b(prob, 0.0, X0, 400, riccati=sol.riccati)


def test_x0_dimension_checked():
    with pytest.raises(ShapeError):
        solve_problem_b(two_support(), 0.0, [1.0, 0.0, 0.0], 100)


def test_costate_relates_to_riccati_feedback():
    prob = two_support()
    sol = solve_problem_b(prob, 0.0, X0, 2000)
    PX = np.einsum("kij,kj->ki", sol.riccati.P.values, sol.x.values.reshape(2001, -1)).reshape(2001, 2, 2)
    alpha_p = prob.measure.weights[None, :, None] * sol.p.values
    np.testing.assert_allclose(alpha_p, COSTATE_SIGN * PX, atol=1e-6)


# -- averaged cost ---------------------------------------------------------------

def test_averaged_cost_dirac_matches_open_loop(harmonic):
    probB = AveragedLqrProblem.from_lqr(harmonic, DiscreteMatrixMeasure.dirac(harmonic.A))
    ric = riccati_solve_direct(harmonic, 0.0, 1000)
    closed = simulate_closed_loop(harmonic, ric, 0.0, X0)
    u = closed.u
    x = integrate_ode(lambda t, x: harmonic.A @ x + harmonic.B @ u.at(t), X0, u.grid)
    open_loop = Trajectory(u.grid, x, u)
    J = averaged_cost(probB, u, 0.0, X0)
    assert J == pytest.approx(cost_open_loop(harmonic, open_loop), rel=1e-12)
    # replaying the feedback control open loop only adds interpolation error
    assert J == pytest.approx(cost_open_loop(harmonic, closed), rel=1e-5)


def test_averaged_cost_linear_in_weights():
    grid = TimeGrid(0.0, 1.0, 200)
    u = SampledPath(grid, np.sin(3 * grid.nodes)[:, None])
    mix = two_support(alpha=(0.5, 0.5))
    only = [two_support(alpha=(1.0, 0.0)), two_support(alpha=(0.0, 1.0))]
    parts = [averaged_cost(p, u, 0.0, X0) for p in only]
    assert averaged_cost(mix, u, 0.0, X0) == pytest.approx(0.5 * parts[0] + 0.5 * parts[1], rel=1e-13)


def test_cost_at_optimum_equals_value():
    prob = harmonic_b(1)
    sol = solve_problem_b(prob, 0.0, X0, 2000)
    J = averaged_cost(prob, sol.u, 0.0, X0)
    assert J == pytest.approx(COST_PER_VALUE * sol.value, rel=1e-5)


def test_optimum_beats_perturbed_controls(rng):
    prob = two_support(T=2.0)
    sol = solve_problem_b(prob, 0.0, X0, 1000)
    t = sol.grid.nodes
    J0 = averaged_cost(prob, sol.u, 0.0, X0)
    for _ in range(20):
        c, w, a = rng.uniform(0, 2), rng.uniform(0.1, 0.5), rng.uniform(-0.3, 0.3)
        bump = a * np.exp(-((t - c) / w) ** 2)
        J = averaged_cost(prob, SampledPath(sol.grid, sol.u.values + bump[:, None]), 0.0, X0)
        assert J0 <= J


def test_averaged_cost_grid_checks():
    u = SampledPath(TimeGrid(0.0, 2.0, 10), np.zeros((11, 1)))
    with pytest.raises(ValueError):
        averaged_cost(two_support(), u, 0.0, X0)


# -- costates and the maximum principle ------------------------------------------

def test_costate_zero_without_cost():
    prob = two_support(Q=np.zeros((2, 2)), Q_f=np.zeros((2, 2)))
    sol = solve_problem_b(prob, 0.0, X0, 200)
    assert np.all(sol.p.values == 0)
    assert np.all(sol.u.values == 0)
    assert pmp_residual(prob, sol) == 0.0


def test_costate_scalar_adjoint_flow():
    a, qf, T = -0.7, 2.0, 1.5
    mu = DiscreteMatrixMeasure(np.array([[[a]], [[0.4]]]), np.array([0.3, 0.7]))
    prob = AveragedLqrProblem(mu, [[1.0]], [[0.0]], [[1.0]], [[qf]], T)
    grid = TimeGrid(0.0, T, 300)
    xs = SampledPath(grid, np.stack([np.cos(grid.nodes), 1 + grid.nodes], axis=1)[:, :, None])
    p = costate_solve(prob, xs).values
    tau = T - grid.nodes
    np.testing.assert_allclose(p[:, 0, 0], -np.exp(a * tau) * qf * np.cos(T), atol=1e-12)
    np.testing.assert_allclose(p[:, 1, 0], -np.exp(0.4 * tau) * qf * (1 + T), atol=1e-12)


def test_costate_shape_checked():
    prob = two_support()
    with pytest.raises(ShapeError):
        costate_solve(prob, SampledPath(TimeGrid(0, 1, 4), np.zeros((5, 3, 2))))


def test_pmp_at_optimum_and_off_optimum():
    prob = harmonic_b(3)
    sol = solve_problem_b(prob, 0.0, X0, 2000)
    assert pmp_residual(prob, sol) <= 1e-4
    shifted = SampledPath(sol.grid, sol.u.values + 0.1)
    bad = type(sol)(sol.riccati, shifted, sol.x, sol.p, sol.value, sol.x0)
    assert pmp_residual(prob, bad) >= 0.05


def test_sweep_matches_riccati():
    prob = two_support()
    ric = solve_problem_b(prob, 0.0, X0, 400)
    sw = solve_problem_b(prob, 0.0, X0, 400, method="sweep")
    assert sw.method == "sweep" and sw.iterations > 1
    assert np.max(np.abs(sw.u.values - ric.u.values)) <= 1e-4
    assert sw.value == pytest.approx(ric.value, rel=1e-4)


def test_sweep_non_convergence_is_an_error():
    with pytest.raises(SweepDidNotConverge) as info:
        forward_backward_sweep(two_support(), 0.0, X0, 100, max_iter=3)
    assert info.value.iterations == 3


# -- bound constants -------------------------------------------------------------

def test_bounds_without_cost():
    prob = two_support(Q=np.zeros((2, 2)), Q_f=np.zeros((2, 2)), T=2.0)
    x0 = np.array([3.0, 4.0])
    bc = bound_constants(prob, x0, 1.0)
    assert bc.C_u == 0.0
    assert bc.C_x == pytest.approx(5.0 * np.exp(prob.measure.C_A * 2.0))


def test_bounds_scale_with_x0():
    prob = two_support()
    a = bound_constants(prob, X0, 1.0)
    b = bound_constants(prob, 2 * X0, 1.0)
    assert b.C_u == pytest.approx(2 * a.C_u) and b.C_x == pytest.approx(2 * a.C_x)
    assert b.C_K == a.C_K
    assert a.r1 == 1.0 and min(a.C_A, a.C_u, a.C_x, a.C_p, a.C_K) >= 0


def test_bounds_hold_on_harmonic_family():
    for N in (0, 4, 9):
        prob = harmonic_b(N)
        sol = solve_problem_b(prob, 0.0, X0, 1000)
        bc = bound_constants(prob, X0, 2 * np.sqrt(2))
        assert control_l2_norm(sol.u) <= bc.C_u
        assert np.max(np.linalg.norm(sol.x.values, axis=2)) <= bc.C_x
        assert np.max(np.linalg.norm(sol.p.values, axis=2)) <= bc.C_p


def test_bounds_hold_on_random_problems(rng):
    for _ in range(8):
        probA, probB = random_averaged_problem(rng, n=None)
        x0 = rng.normal(size=probA.n)
        sol = solve_problem_b(probB, 0.0, x0, 400)
        bc = bound_constants(probB, x0, 1.0)
        assert control_l2_norm(sol.u) <= bc.C_u
        assert np.max(np.linalg.norm(sol.x.values, axis=2)) <= bc.C_x
        assert np.max(np.linalg.norm(sol.p.values, axis=2)) <= bc.C_p


def test_dirac_embedding_via_from_lqr():
    probA = LqrProblem(ROT, [[0.0], [1.0]], np.eye(2), [[0.1]], np.zeros((2, 2)), 5.0)
    probB = AveragedLqrProblem.from_lqr(probA, DiscreteMatrixMeasure.dirac(ROT))
    sub = probB.support_problem(0)
    for name in ("A", "B", "Q", "R", "Q_f"):
        np.testing.assert_array_equal(getattr(sub, name), getattr(probA, name))
    assert sub.T == probA.T
