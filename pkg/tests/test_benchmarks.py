import math

import numpy as np
import pytest

from app.services.assembly import (
    BoundaryCondition,
    BoundaryMode,
    BoundarySpec,
    LinearOperatorSpec,
    ProblemSpec,
    trial_space,
)
from app.services.benchmarks import (
    BenchmarkProblem,
    ManufacturedSolution,
    builtin_problems,
    compare,
    error_norms,
    get_problem,
    jacobian_check,
    run_single,
    run_study,
)
from app.services.discretization import BasisKind, BasisSet, Domain1D
from app.services.solvers import SolverConfig, SolverMethod
from app.services.system_forms import Formulation
from app.utils.errors import ParameterError


def test_builtin_problem_set():
    names = [p.name for p in builtin_problems()]
    assert {"burgers", "reaction", "poisson"} <= set(names)
    x = np.linspace(0.0, 1.0, 50)
    for problem in builtin_problems():
        assert problem.exact is not None
        assert np.max(np.abs(problem.operator_residual(x))) <= 1e-10


def test_manufactured_sources():
    poisson = get_problem("poisson")
    np.testing.assert_allclose(poisson.spec.source(np.array([0.1, 0.7])), [2.0, 2.0])
    reaction = get_problem("reaction")
    assert float(reaction.spec.source(np.array([0.5]))[0]) == pytest.approx(2.3125)
    assert get_problem("poisson").spec.is_linear
    assert not get_problem("burgers").spec.is_linear


def test_wrong_manufactured_solution_is_rejected():
    spec = get_problem("poisson").spec
    wrong = ManufacturedSolution(u=lambda x: x, du=lambda x: np.ones_like(x), d2u=lambda x: np.zeros_like(x))
    with pytest.raises(ParameterError):
        BenchmarkProblem("broken", spec, wrong)


def test_unknown_problem():
    with pytest.raises(ParameterError):
        get_problem("nosuch")


def test_error_norms_of_exact_interpolant():
    basis = BasisSet.fe_hat(Domain1D(0.0, 1.0), 8)
    space = trial_space(basis, BoundarySpec(BoundaryCondition.neumann(), BoundaryCondition.neumann()))
    linear = ManufacturedSolution(u=lambda x: 2.0 * x + 1.0, du=lambda x: np.full(np.shape(x), 2.0),
                                  d2u=lambda x: np.zeros(np.shape(x)))
    l2, mx = error_norms(basis, space, 2.0 * basis.mesh_nodes + 1.0, linear)
    assert l2 < 1e-13 and mx < 1e-13

    l2, mx = error_norms(basis, space, np.zeros(basis.n), linear)
    # ∫ (2x + 1)² dx = 13/3
    assert l2 == pytest.approx(math.sqrt(13 / 3), rel=1e-12)
    assert mx == pytest.approx(3.0)


def test_poisson_convergence_order():
    records = run_study(get_problem("poisson"), BasisKind.FE_HAT, [8, 16, 32, 64],
                        Formulation.CLASSICAL, SolverConfig())
    assert [r.n for r in records] == [8, 16, 32, 64]
    assert all(r.converged and r.report.iterates == 1 for r in records)
    assert records[0].observed_order is None
    for r in records[1:]:
        assert 1.8 <= r.observed_order <= 2.2


def test_hadamard_study_never_reintegrates():
    records = run_study(get_problem("reaction"), "fe_hat", [4, 8, 16], "hadamard", SolverConfig())
    assert all(r.report.quad_evals_iteration == 0 for r in records)
    assert all(r.report.quad_evals_assembly > 0 for r in records)


def test_study_requires_ascending_sizes():
    with pytest.raises(ParameterError):
        run_study(get_problem("poisson"), "fe_hat", [16, 8], "classical", SolverConfig())


def test_study_records_failures_and_continues():
    # modal_poly 的 2 个模态在两端 Dirichlet 下没有自由度
    records = run_study(get_problem("poisson"), "modal_poly", [2, 4], "classical", SolverConfig())
    assert not records[0].converged
    assert "no free unknowns" in records[0].report.failure_reason
    assert records[1].converged


def test_burgers_formulations_are_distinct():
    problem = get_problem("burgers")
    classical = run_single(problem, "fe_hat", 16, "classical", SolverConfig())
    hadamard = run_single(problem, "fe_hat", 16, "hadamard", SolverConfig())
    assert classical.converged and hadamard.converged
    assert math.isfinite(classical.error_l2) and math.isfinite(hadamard.error_l2)
    assert np.max(np.abs(classical.coefficients - hadamard.coefficients)) > 1e-6
    assert classical.report.quad_evals_iteration > 0
    assert hadamard.report.quad_evals_iteration == 0


def test_compare_burgers():
    records, gap = compare(get_problem("burgers"), "fe_hat", 32, SolverConfig())
    assert [r.formulation for r in records] == [Formulation.CLASSICAL, Formulation.HADAMARD]
    assert gap > 1e-6
    assert records[1].report.quad_evals_iteration == 0
    assert records[0].report.quad_evals_iteration > 0
    assert all(r.error_l2 is not None and r.error_max is not None for r in records)


def test_picard_study_on_burgers():
    cfg = SolverConfig(method=SolverMethod.PICARD)
    newton = run_single(get_problem("burgers"), "fe_hat", 16, "hadamard", SolverConfig())
    picard = run_single(get_problem("burgers"), "fe_hat", 16, "hadamard", cfg)
    assert picard.converged and picard.report.iterates <= 200
    assert np.max(np.abs(newton.coefficients - picard.coefficients)) <= 1e-6


@pytest.mark.parametrize("name, n", [("poisson", 5), ("reaction", 5), ("reaction_mixed", 4)])
def test_modal_basis_recovers_polynomial_solutions(name, n):
    record = run_single(get_problem(name), BasisKind.MODAL_POLY, n, Formulation.CLASSICAL, SolverConfig())
    assert record.converged
    assert record.error_max < 1e-9


def test_mixed_boundary_problem_on_hats():
    record = run_single(get_problem("reaction_mixed"), "fe_hat", 16, "classical", SolverConfig())
    assert record.converged
    assert record.coefficients[0] == pytest.approx(1.0)
    assert record.error_l2 < 2e-3


def test_weak_boundary_mode_converges_under_refinement():
    problem = get_problem("poisson")
    coarse = run_single(problem, "fe_hat", 8, "classical", SolverConfig(), BoundaryMode.WEAK)
    fine = run_single(problem, "fe_hat", 32, "classical", SolverConfig(), BoundaryMode.WEAK)
    assert coarse.converged and fine.converged
    assert fine.error_l2 < coarse.error_l2
    assert any("weak boundary" in note for note in fine.notes)


def test_problem_without_exact_solution_has_no_errors():
    spec = ProblemSpec(LinearOperatorSpec.zero(), LinearOperatorSpec.identity(),
                       LinearOperatorSpec.derivative(2, -1.0), lambda x: np.ones_like(x))
    record = run_single(BenchmarkProblem("plain", spec), "fe_hat", 8, "hadamard", SolverConfig())
    assert record.converged
    assert record.error_l2 is None and record.error_max is None


def test_jacobian_check_passes():
    checks = jacobian_check(get_problem("reaction_mixed"), "fe_hat", 6, samples=3)
    assert {c.system for c in checks} == {"hadamard", "kronecker", "classical"}
    assert len(checks) == 9
    assert max(c.rel_error for c in checks) <= 1e-6


def test_jacobian_check_size_cap():
    with pytest.raises(ParameterError):
        jacobian_check(get_problem("burgers"), "fe_hat", 100)


def test_builtin_problems_construct_and_verify():
    problems = builtin_problems()
    assert [p.name for p in problems] == ["burgers", "reaction", "poisson", "reaction_mixed"]
    for problem in problems:
        problem.check_manufactured()
    reaction = get_problem("reaction")
    assert [t.deriv_order for t in reaction.spec.L.terms] == [0, 2]


def test_picard_fallback_keeps_cost_of_both_attempts():
    problem = get_problem("burgers")
    damped = SolverConfig(method=SolverMethod.PICARD, tol=1e-30, max_iter=1, damping=0.5)
    single = run_single(problem, "fe_hat", 8, "classical", damped)
    assert single.report.iterates == 1
    assert single.report.quad_evals_iteration > 0

    undamped = SolverConfig(method=SolverMethod.PICARD, tol=1e-30, max_iter=1)
    record = run_single(problem, "fe_hat", 8, "classical", undamped)
    report = record.report
    assert not report.converged
    assert report.iterates == 2
    assert len(report.residual_history) == 3
    assert report.quad_evals_iteration == 2 * single.report.quad_evals_iteration
    assert report.quad_evals_assembly == single.report.quad_evals_assembly
    assert any("picard fallback damping" in note for note in record.notes)
