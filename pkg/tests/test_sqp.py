import numpy as np
import pytest

from mgopt.optimizer import NlpProblem, SqpConfig, sqp_solve


def _box(n, lo=-10.0, hi=10.0):
    return np.full(n, lo), np.full(n, hi)


def test_quadratic_converges_in_two_iterations():
    """On f = 1/2 x'x - b'x the first QP step is exact; one more confirms it."""
    b = np.array([0.3, -1.7, 2.5])
    lo, hi = _box(3)
    problem = NlpProblem(lambda x: 0.5 * float(x @ x) - float(b @ x), lo, hi)
    result = sqp_solve(problem, np.zeros(3))
    assert result.converged
    assert result.iterations == 2
    assert np.abs(result.x - b).max() == 0.0


def test_linear_objective_on_circle():
    """min x1 + x2 on the unit circle has its optimum at (-r2/2, -r2/2)."""
    lo, hi = _box(2)
    problem = NlpProblem(
        lambda x: float(x[0] + x[1]),
        lo,
        hi,
        eq=lambda x: np.array([x[0] ** 2 + x[1] ** 2 - 1.0]),
    )
    result = sqp_solve(problem, np.array([1.0, 0.0]), SqpConfig(tol_kkt=1e-8))
    root_half = np.sqrt(2.0) / 2.0
    assert result.converged
    assert result.iterations <= 30
    assert np.abs(result.x - [-root_half, -root_half]).max() < 1e-6
    assert result.constraint_violation < 1e-8


def test_rosenbrock_unconstrained():
    lo, hi = _box(2)
    problem = NlpProblem(
        lambda x: (1.0 - x[0]) ** 2 + 100.0 * (x[1] - x[0] ** 2) ** 2, lo, hi
    )
    result = sqp_solve(problem, np.array([-1.2, 1.0]), SqpConfig(tol_kkt=1e-6))
    assert result.converged
    assert np.abs(result.x - 1.0).max() < 1e-4


def test_inequality_activates():
    # Unconstrained optimum (2, 2) sits outside x1 + x2 <= 2.
    lo, hi = _box(2)
    problem = NlpProblem(
        lambda x: float((x[0] - 2.0) ** 2 + (x[1] - 2.0) ** 2),
        lo,
        hi,
        ineq=lambda x: np.array([x[0] + x[1] - 2.0]),
    )
    result = sqp_solve(problem, np.zeros(2), SqpConfig(tol_kkt=1e-8))
    assert result.converged
    assert np.abs(result.x - 1.0).max() < 1e-6
    assert result.ineq_multipliers[0] > 1e-3


def test_bounds_clip_iterates_and_solution():
    lo = np.array([0.5, -1.0])
    hi = np.array([2.0, 1.0])
    problem = NlpProblem(lambda x: float(x @ x), lo, hi)
    result = sqp_solve(problem, np.array([5.0, 5.0]))
    assert result.converged
    assert result.x == pytest.approx([0.5, 0.0], abs=1e-8)
    assert (result.x >= lo).all() and (result.x <= hi).all()


def test_start_outside_bounds_is_clipped():
    lo, hi = np.zeros(2), np.ones(2)
    problem = NlpProblem(lambda x: float((x - 0.5) @ (x - 0.5)), lo, hi)
    result = sqp_solve(problem, np.array([100.0, -100.0]))
    assert result.converged
    assert result.x == pytest.approx([0.5, 0.5], abs=1e-8)


def test_infeasible_start_recovers():
    # Start violating the equality by a wide margin; the merit function must
    # pull the iterates back onto the constraint set.
    lo, hi = _box(2)
    problem = NlpProblem(
        lambda x: float(x @ x),
        lo,
        hi,
        eq=lambda x: np.array([x[0] + x[1] - 2.0]),
    )
    result = sqp_solve(problem, np.array([8.0, -9.0]), SqpConfig(tol_kkt=1e-8))
    assert result.converged
    assert result.x == pytest.approx([1.0, 1.0], abs=1e-7)
    assert result.constraint_violation < 1e-8


def test_contradictory_constraints_flag_elastic():
    # x <= -1 together with x >= 1 admits no point at all.
    lo, hi = _box(1)
    problem = NlpProblem(
        lambda x: float(x[0] ** 2),
        lo,
        hi,
        ineq=lambda x: np.array([x[0] + 1.0, 1.0 - x[0]]),
    )
    result = sqp_solve(problem, np.array([0.0]))
    assert not result.converged
    assert result.elastic_used
    assert result.constraint_violation > 0.5


def test_trace_records_iterations():
    lo, hi = _box(2)
    problem = NlpProblem(lambda x: float(x @ x), lo, hi)
    result = sqp_solve(problem, np.array([3.0, -4.0]))
    assert result.trace
    assert [row["iteration"] for row in result.trace] == list(range(1, len(result.trace) + 1))
    for key in ("merit", "kkt", "step", "alpha", "penalty", "elastic"):
        assert key in result.trace[0]
    assert result.objective_evaluations > 0


def test_exact_derivative_override_matches_fd():
    lo, hi = _box(2)

    class Exact(NlpProblem):
        def derivatives(self, x):
            grad = np.array([2.0 * x[0] - 1.0, 2.0 * x[1] + 3.0])
            return grad, np.zeros((0, 2)), np.zeros((0, 2))

    objective = lambda x: float(x[0] ** 2 - x[0] + x[1] ** 2 + 3.0 * x[1])
    fd = sqp_solve(NlpProblem(objective, lo, hi), np.zeros(2))
    exact = sqp_solve(Exact(objective, lo, hi), np.zeros(2))
    assert np.abs(fd.x - exact.x).max() < 1e-6
    assert exact.x == pytest.approx([0.5, -1.5], abs=1e-8)
