import numpy as np
import pytest

from app.utils.errors import NonFiniteError, ShapeError, SingularMatrixError
from app.utils.hadamard_algebra import (
    as_matrix,
    frozen,
    hadamard,
    kron,
    lu_factor,
    lu_solve,
    matvec_kron,
    sjt_scale,
)


def test_hadamard_examples():
    np.testing.assert_array_equal(hadamard([[1, 2], [3, 4]], [[5, 6], [7, 8]]), [[5, 12], [21, 32]])
    np.testing.assert_array_equal(hadamard([2, 3], [4, 9]), [8, 27])
    a = np.array([[1.5, -2.0], [0.25, 4.0]])
    np.testing.assert_array_equal(hadamard(a, np.ones_like(a)), a)


def test_hadamard_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError) as exc:
        hadamard(np.ones((2, 2)), np.ones((2, 3)))
    assert "(2, 2)" in str(exc.value) and "(2, 3)" in str(exc.value)


def test_hadamard_algebraic_identities():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(1, 33))
        a, b, c = (rng.standard_normal((n, n)) for _ in range(3))
        np.testing.assert_array_equal(hadamard(a, b), hadamard(b, a))
        np.testing.assert_allclose(hadamard(hadamard(a, b), c), hadamard(a, hadamard(b, c)), rtol=1e-14)
        np.testing.assert_allclose(hadamard(a, b + c), hadamard(a, b) + hadamard(a, c), rtol=1e-12, atol=1e-14)


def test_kron_ordering():
    np.testing.assert_array_equal(kron([1, 2], [3, 4]), [3, 4, 6, 8])
    np.testing.assert_array_equal(kron([1, 0], [0, 1]), [0, 1, 0, 0])
    np.testing.assert_array_equal(kron([3.0], [5.0]), [15.0])
    with pytest.raises(ShapeError):
        kron([1, 2], [1, 2, 3])


def test_kron_bilinearity():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n = int(rng.integers(1, 33))
        x, y = rng.standard_normal(n), rng.standard_normal(n)
        alpha = float(rng.standard_normal())
        np.testing.assert_allclose(kron(alpha * x, y), alpha * kron(x, y), rtol=1e-15, atol=1e-300)


def test_sjt_scale_examples():
    np.testing.assert_array_equal(sjt_scale([[1, 2], [3, 4]], [2, 3]), [[2, 4], [9, 12]])
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(sjt_scale(a, np.ones(2)), a)
    np.testing.assert_array_equal(sjt_scale(np.eye(2), [5, 7]), np.diag([5.0, 7.0]))
    with pytest.raises(ShapeError):
        sjt_scale(np.eye(3), [1.0, 2.0])


def test_sjt_scale_matches_diagonal_product():
    rng = np.random.default_rng(3)
    for _ in range(100):
        n = int(rng.integers(1, 33))
        a, v = rng.standard_normal((n, n)), rng.standard_normal(n)
        np.testing.assert_array_equal(sjt_scale(a, v), np.diag(v) @ a)


def test_matvec_kron_equals_explicit_product():
    rng = np.random.default_rng(4)
    n = 5
    g = rng.standard_normal((n, n * n))
    x = rng.standard_normal(n)
    np.testing.assert_allclose(matvec_kron(g, x), g @ kron(x, x), rtol=1e-12, atol=1e-12)
    with pytest.raises(ShapeError):
        matvec_kron(g, np.ones(4))


def test_lu_solve_examples():
    np.testing.assert_allclose(lu_solve(np.eye(2), [3, 4]), [3, 4])
    np.testing.assert_allclose(lu_solve([[2, 0], [0, 4]], [2, 8]), [1, 2])


def test_lu_solve_random_well_conditioned():
    rng = np.random.default_rng(5)
    for _ in range(100):
        n = int(rng.integers(1, 33))
        m = rng.standard_normal((n, n)) + n * np.eye(n)
        y = rng.standard_normal(n)
        rhs = m @ y
        sol = lu_solve(m, rhs)
        assert np.max(np.abs(m @ sol - rhs)) <= 1e-10 * max(1.0, np.max(np.abs(rhs)))
        np.testing.assert_allclose(sol, y, atol=1e-10)


def test_lu_needs_row_pivoting():
    np.testing.assert_allclose(lu_solve([[0.0, 1.0], [1.0, 0.0]], [2.0, 3.0]), [3.0, 2.0])


def test_singular_matrix_reports_pivot_index():
    with pytest.raises(SingularMatrixError) as exc:
        lu_solve([[1.0, 2.0], [2.0, 4.0]], [1.0, 1.0])
    assert exc.value.pivot_index == 1
    assert exc.value.code == -41002

    with pytest.raises(SingularMatrixError) as exc:
        lu_factor(np.zeros((3, 3)))
    assert exc.value.pivot_index == 0


def test_lu_factorization_reusable():
    m = np.array([[4.0, 1.0], [1.0, 3.0]])
    factorization = lu_factor(m)
    assert np.all(factorization.pivots > 0)
    for rhs in ([1.0, 0.0], [0.0, 1.0]):
        np.testing.assert_allclose(m @ factorization.solve(rhs), rhs)


def test_validation_rejects_non_finite_and_wrong_rank():
    with pytest.raises(NonFiniteError):
        lu_solve([[1.0, np.nan], [0.0, 1.0]], [1.0, 1.0])
    with pytest.raises(ShapeError):
        as_matrix([1.0, 2.0])
    with pytest.raises(ShapeError):
        lu_solve(np.ones((2, 3)), [1.0, 1.0])


def test_frozen_is_read_only():
    arr = frozen([1.0, 2.0])
    with pytest.raises(ValueError):
        arr[0] = 5.0
