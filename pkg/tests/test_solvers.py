import numpy as np
import pytest

from app.services.assembly import QuadCounter
from app.services.benchmarks import get_problem
from app.services.discretization import BasisSet
from app.services.solvers import (
    SolverConfig,
    SolverMethod,
    default_initial_guess,
    newton_solve,
    picard_solve,
    quadratic_rate,
    solve,
)
from app.services.system_forms import (
    HadamardSystem,
    PicardFreeze,
    assemble_hadamard_system,
    assemble_kronecker_system,
    assemble_reintegrated_system,
)
from app.utils.errors import ParameterError

ROOT = np.array([2.0, 3.0])


@pytest.fixture
def squares():
    """x ∘ x = [4, 9]"""
    return HadamardSystem(np.eye(2), np.eye(2), np.zeros((2, 2)), np.array([4.0, 9.0]))


def _burgers(n_elements=16):
    problem = get_problem("burgers")
    return problem.spec, BasisSet.fe_hat(problem.spec.domain, n_elements)


def _newton_errors(system, x0, steps):
    errors = [np.max(np.abs(np.asarray(x0) - ROOT))]
    for k in range(1, steps + 1):
        report = newton_solve(system, x0, SolverConfig(tol=1e-300, max_iter=k))
        errors.append(np.max(np.abs(report.solution - ROOT)))
    return errors


def test_newton_decoupled_squares(squares):
    report = newton_solve(squares, [1.0, 1.0], SolverConfig(tol=1e-12))
    assert report.converged
    assert report.iterates <= 8
    np.testing.assert_allclose(report.solution, ROOT, atol=1e-12)
    assert len(report.residual_history) == report.iterates + 1
    assert report.residual_history[-1] <= 1e-12
    assert report.failure_reason is None


def test_newton_quadratic_convergence(squares):
    errors = _newton_errors(squares, [1.0, 1.0], 6)
    significant = [e for e in errors if e > 1e-12]
    quadratic_steps = 0
    best = 0
    for e0, e1 in zip(significant[:-1], significant[1:]):
        if e0 < 0.5 and e1 <= 1.0 * e0 ** 2:
            quadratic_steps += 1
            best = max(best, quadratic_steps)
        else:
            quadratic_steps = 0
    assert best >= 3
    rate = quadratic_rate([e for e in significant if e < 0.5])
    assert rate is not None and rate <= 1.0


def test_newton_linear_problem_one_iteration():
    problem = get_problem("poisson")
    basis = BasisSet.fe_hat(problem.spec.domain, 16)
    for system in (assemble_hadamard_system(problem.spec, basis),
                   assemble_reintegrated_system(problem.spec, basis)):
        report = newton_solve(system, np.zeros(system.n), SolverConfig())
        assert report.converged and report.iterates == 1


def test_linear_limit_paths_agree():
    problem = get_problem("poisson")
    basis = BasisSet.fe_hat(problem.spec.domain, 16)
    hadamard = newton_solve(assemble_hadamard_system(problem.spec, basis))
    classical = newton_solve(assemble_reintegrated_system(problem.spec, basis))
    kronecker = newton_solve(assemble_kronecker_system(problem.spec, basis))
    assert hadamard.iterates == classical.iterates == kronecker.iterates == 1
    assert np.max(np.abs(hadamard.solution - classical.solution)) <= 1e-12
    assert np.max(np.abs(hadamard.solution - kronecker.solution)) <= 1e-12


def test_newton_sjt_matches_newton_fd_on_burgers():
    spec, basis = _burgers(16)
    system = assemble_hadamard_system(spec, basis)
    sjt = newton_solve(system, None, SolverConfig(method=SolverMethod.NEWTON_SJT))
    fd = newton_solve(system, None, SolverConfig(method=SolverMethod.NEWTON_FD))
    assert sjt.converged and fd.converged
    assert np.max(np.abs(sjt.solution - fd.solution)) <= 1e-8


def test_picard_scalar_quadratic():
    system = HadamardSystem([[1.0]], [[1.0]], [[1.0]], [2.0])
    report = picard_solve(system, [0.5], SolverConfig(method=SolverMethod.PICARD))
    assert report.converged
    assert report.solution[0] == pytest.approx(1.0, abs=1e-9)


def test_picard_zero_rhs_one_step():
    system = HadamardSystem(np.eye(2), np.eye(2), np.eye(2), np.zeros(2))
    report = picard_solve(system, np.zeros(2), SolverConfig(method="picard"))
    assert report.converged and report.iterates == 1
    assert not report.solution.any()


@pytest.mark.parametrize("freeze", list(PicardFreeze))
def test_picard_matches_newton_on_burgers(freeze):
    spec, basis = _burgers(16)
    system = assemble_hadamard_system(spec, basis)
    newton = newton_solve(system)
    picard = picard_solve(system, None, SolverConfig(method=SolverMethod.PICARD, picard_freeze=freeze))
    assert newton.converged and picard.converged
    assert picard.iterates <= 200
    assert np.max(np.abs(picard.solution - newton.solution)) <= 1e-6


def test_picard_on_classical_burgers():
    spec, basis = _burgers(16)
    newton = newton_solve(assemble_reintegrated_system(spec, basis))
    picard = picard_solve(assemble_kronecker_system(spec, basis), None,
                          SolverConfig(method=SolverMethod.PICARD, damping=0.5))
    assert newton.converged and picard.converged
    assert np.max(np.abs(picard.solution - newton.solution)) <= 1e-6


def test_singular_jacobian_is_reported(squares):
    report = newton_solve(squares, None, SolverConfig())
    assert not report.converged
    assert "singular" in report.failure_reason
    assert len(report.residual_history) == report.iterates + 1


def test_overflow_is_reported(squares):
    with np.errstate(over="ignore", invalid="ignore"):
        report = newton_solve(squares, [1e200, 1e200], SolverConfig())
    assert not report.converged
    assert "non-finite" in report.failure_reason


def test_max_iter_reached(squares):
    report = newton_solve(squares, [1.0, 1.0], SolverConfig(tol=1e-300, max_iter=3))
    assert not report.converged
    assert report.iterates == 3
    assert len(report.residual_history) == 4
    assert "max_iter" in report.failure_reason


def test_default_initial_guess():
    system = HadamardSystem(np.eye(2), np.eye(2), 2.0 * np.eye(2), np.array([2.0, 4.0]))
    np.testing.assert_allclose(default_initial_guess(system), [1.0, 2.0])
    singular = HadamardSystem(np.eye(2), np.eye(2), np.zeros((2, 2)), np.ones(2))
    assert not default_initial_guess(singular).any()


@pytest.mark.parametrize("kwargs", [
    {"tol": 0.0},
    {"max_iter": 0},
    {"damping": 0.0},
    {"damping": 1.5},
    {"fd_step": -1e-6},
    {"method": "bisection"},
])
def test_config_validation(kwargs):
    with pytest.raises(ParameterError):
        SolverConfig(**kwargs)


def test_method_names():
    assert SolverConfig().method is SolverMethod.NEWTON_SJT
    assert SolverConfig(method=SolverMethod.PICARD).method is SolverMethod.PICARD
    assert SolverMethod.parse(SolverMethod.NEWTON_FD) is SolverMethod.NEWTON_FD
    assert SolverMethod.parse("newton-fd") == SolverMethod.NEWTON_FD
    assert SolverConfig(method="picard").method == SolverMethod.PICARD
    with pytest.raises(ParameterError):
        newton_solve(HadamardSystem([[1.0]], [[1.0]], [[1.0]], [1.0]), None, SolverConfig(method="picard"))


def test_counters_for_both_formulations():
    n_el = 32
    spec, basis = _burgers(n_el)

    counter = QuadCounter()
    hadamard = solve(assemble_hadamard_system(spec, basis, counter=counter), None, SolverConfig(), counter)
    assert hadamard.converged
    assert hadamard.quad_evals_assembly == 24 * n_el
    assert hadamard.quad_evals_iteration == 0

    counter = QuadCounter()
    classical = solve(assemble_reintegrated_system(spec, basis, counter=counter), None, SolverConfig(), counter)
    assert classical.converged
    assert classical.quad_evals_assembly == 12 * n_el
    # 每步一次 Jacobian, 外加 iterates + 1 次残差, 每次 18 个积分点求值 / 单元
    assert classical.quad_evals_iteration == 18 * n_el * (2 * classical.iterates + 1)
    assert classical.quad_evals_iteration >= classical.iterates * hadamard.quad_evals_assembly


def test_iteration_count_grows_linearly():
    spec, basis = _burgers(8)
    system = assemble_reintegrated_system(spec, basis)
    per_run = []
    for k in (1, 2, 3):
        report = newton_solve(system, None, SolverConfig(tol=1e-300, max_iter=k))
        per_run.append(report.quad_evals_iteration)
    assert per_run[1] - per_run[0] == per_run[2] - per_run[1] > 0


def test_solves_are_deterministic():
    spec, basis = _burgers(16)
    system = assemble_hadamard_system(spec, basis)
    first = newton_solve(system)
    second = newton_solve(system)
    assert first.residual_history == second.residual_history
    np.testing.assert_array_equal(first.solution, second.solution)
