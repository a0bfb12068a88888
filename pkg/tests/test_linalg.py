import numpy as np
import pytest

from newtonbench import linalg
from newtonbench.errors import NonFiniteResult, ShapeMismatch, SingularMatrix

from oracles import gauss_jordan_inverse, rel_err


def random_spd(rng, m, scale=1.0):
    B = rng.standard_normal((m, m))
    return B @ B.T * scale / m + 0.1 * np.eye(m)


class TestSolveTikhonov:
    def test_zero_matrix_unit_lambda_is_identity(self):
        x = linalg.solve_tikhonov(np.zeros((2, 2)), 1.0, np.array([3.0, 4.0]))
        np.testing.assert_allclose(x, [3.0, 4.0], rtol=0, atol=0)

    def test_identity_plus_lambda_halves(self):
        x = linalg.solve_tikhonov(np.eye(2), 1.0, np.array([2.0, 4.0]))
        np.testing.assert_allclose(x, [1.0, 2.0])

    def test_matches_gauss_jordan_oracle(self):
        rng = np.random.default_rng(7)
        M = random_spd(rng, 3)
        g = rng.standard_normal(3)
        x = linalg.solve_tikhonov(M, 0.1, g)
        expected = gauss_jordan_inverse(M + 0.1 * np.eye(3)) @ g
        np.testing.assert_allclose(x, expected, atol=1e-10)

    def test_residual_bound_random_inputs(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            m = int(rng.integers(1, 12))
            M = rng.standard_normal((m, m))
            M = 0.5 * (M + M.T)
            lam = float(rng.uniform(0.01, 2.0))
            g = rng.standard_normal(m)
            x = linalg.solve_tikhonov(M, lam, g)
            A = 0.5 * (M + M.T) + lam * np.eye(m)
            resid = np.max(np.abs(A @ x - g))
            assert resid <= 1e-8 * (1 + np.max(np.abs(g)))

    def test_asymmetric_input_is_symmetrized(self):
        M = np.array([[2.0, 2.0], [0.0, 2.0]])
        x = linalg.solve_tikhonov(M, 0.0, np.array([1.0, 1.0]))
        sym = 0.5 * (M + M.T)
        np.testing.assert_allclose(sym @ x, [1.0, 1.0], atol=1e-12)

    def test_norm_nonincreasing_in_lambda_for_psd(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            m = int(rng.integers(2, 8))
            M = random_spd(rng, m)
            g = rng.standard_normal(m)
            lams = [0.0, 0.01, 0.1, 1.0, 10.0, 100.0]
            norms = [np.linalg.norm(linalg.solve_tikhonov(M, lam, g)) for lam in lams]
            for lo, hi in zip(norms[:-1], norms[1:]):
                assert hi <= lo * (1 + 1e-12)

    def test_singular_zero_matrix_zero_lambda(self):
        with pytest.raises(SingularMatrix):
            linalg.solve_tikhonov(np.zeros((3, 3)), 0.0, np.ones(3))

    def test_singular_rank_deficient(self):
        M = np.outer([1.0, 2.0], [1.0, 2.0])
        with pytest.raises(SingularMatrix):
            linalg.solve_tikhonov(M, 0.0, np.array([1.0, 0.0]))

    def test_rejects_negative_lambda(self):
        with pytest.raises(ValueError):
            linalg.solve_tikhonov(np.eye(2), -0.5, np.ones(2))

    def test_rejects_nonfinite(self):
        with pytest.raises(NonFiniteResult):
            linalg.solve_tikhonov(np.array([[np.nan, 0.0], [0.0, 1.0]]), 1.0, np.ones(2))

    def test_rejects_bad_shapes(self):
        with pytest.raises(ShapeMismatch):
            linalg.solve_tikhonov(np.eye(2), 1.0, np.ones(3))
        with pytest.raises(ShapeMismatch):
            linalg.solve_tikhonov(np.ones((2, 3)), 1.0, np.ones(2))


class TestWoodburySolve:
    def test_single_row(self):
        x = linalg.woodbury_solve(np.array([[1.0, 0.0]]), 1.0, np.array([1.0, 0.0]))
        np.testing.assert_allclose(x, [0.5, 0.0], atol=1e-12)

    def test_large_lambda_dominates(self):
        rng = np.random.default_rng(5)
        G = rng.uniform(-1.0, 1.0, (4, 6))
        g = rng.standard_normal(6)
        x = linalg.woodbury_solve(G, 1e6, g)
        assert rel_err(x, g / 1e6) <= 1e-6

    def test_matches_direct_solve(self):
        rng = np.random.default_rng(17)
        G = rng.standard_normal((8, 20))
        g = rng.standard_normal(20)
        lam = 0.3
        x = linalg.woodbury_solve(G, lam, g)
        direct = linalg.solve_tikhonov(G.T @ G / 8, lam, g)
        np.testing.assert_allclose(x, direct, rtol=1e-8, atol=1e-10)

    def test_equivalence_sweep(self):
        rng = np.random.default_rng(23)
        for _ in range(40):
            n = int(rng.integers(1, 17))
            m = int(rng.integers(1, 33))
            G = rng.standard_normal((n, m))
            g = rng.standard_normal(m)
            lam = float(rng.uniform(0.05, 5.0))
            x = linalg.woodbury_solve(G, lam, g)
            direct = linalg.solve_tikhonov(G.T @ G / n, lam, g)
            denom = max(np.max(np.abs(direct)), 1e-12)
            assert np.max(np.abs(x - direct)) / denom <= 1e-8

    def test_rejects_nonpositive_lambda(self):
        with pytest.raises(ValueError):
            linalg.woodbury_solve(np.ones((1, 2)), 0.0, np.ones(2))


class TestFiniteDiffHessian:
    def test_quadratic_gives_identity(self):
        H = linalg.finite_diff_hessian(lambda y: y, np.array([0.3, -0.7]))
        np.testing.assert_allclose(H, np.eye(2), atol=1e-7)

    def test_bilinear(self):
        grad = lambda y: np.array([y[1], y[0]])
        H = linalg.finite_diff_hessian(grad, np.array([1.0, 2.0]))
        np.testing.assert_allclose(H, [[0.0, 1.0], [1.0, 0.0]], atol=1e-7)

    def test_quartic_diagonal(self):
        grad = lambda y: 4.0 * y ** 3
        H = linalg.finite_diff_hessian(grad, np.array([1.0, 2.0]))
        np.testing.assert_allclose(H, np.diag([12.0, 48.0]), atol=1e-4)

    def test_output_exactly_symmetric(self):
        rng = np.random.default_rng(2)
        A = rng.standard_normal((4, 4))
        grad = lambda y: A @ y  # Hessian A is asymmetric on purpose
        y = rng.standard_normal(4)
        H = linalg.finite_diff_hessian(grad, y)
        assert np.array_equal(H, H.T)

    def test_nonfinite_probe_raises(self):
        def grad(y):
            return np.array([np.inf, 0.0])
        with pytest.raises(NonFiniteResult):
            linalg.finite_diff_hessian(grad, np.zeros(2))
