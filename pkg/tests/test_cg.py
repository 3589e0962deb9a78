import numpy as np
import pytest

from rlsdeconv.cg import CgConfig, cg_solve, cg_solve_batch
from rlsdeconv.errors import NumericalBreakdownError, ParameterError
from rlsdeconv.linops import BlurOperator, FilterBank, SystemOperator, normalize_kernel
from rlsdeconv.tensors import Rng

from oracles import dense_bank_matrix, dense_blur_matrix, dense_system_matrix


class DenseOp:
    def __init__(self, mat, shape=None):
        self.mat = mat
        self.shape_out = shape

    def apply(self, x):
        out = self.mat @ np.asarray(x).reshape(-1)
        return out.reshape(np.asarray(x).shape)


class TestCgConfig:
    def test_invariants(self):
        with pytest.raises(ParameterError):
            CgConfig(max_iters=0)
        with pytest.raises(ParameterError):
            CgConfig(rel_tol=1.5)
        with pytest.raises(ParameterError):
            CgConfig(rel_tol=0.0)


class TestCgSolve:
    def test_identity_one_iteration(self):
        rng = Rng(0)
        b = rng.normal((16,))
        x, report = cg_solve(DenseOp(np.eye(16)), b,
                             cfg=CgConfig(max_iters=10, rel_tol=1e-12))
        np.testing.assert_allclose(x, b, rtol=1e-12)
        assert report.iterations_used == 1
        assert report.converged

    def test_diagonal_matches_dense_solve(self):
        rng = Rng(1)
        diag = np.arange(1.0, 65.0)
        b = rng.normal((64,))
        x, report = cg_solve(DenseOp(np.diag(diag)), b,
                             cfg=CgConfig(max_iters=500, rel_tol=1e-10))
        expected = b / diag
        assert report.converged
        assert np.linalg.norm(x - expected) <= 1e-8 * np.linalg.norm(expected)

    def test_warm_start_at_solution(self):
        rng = Rng(2)
        diag = np.linspace(1.0, 3.0, 32)
        b = rng.normal((32,))
        x, report = cg_solve(DenseOp(np.diag(diag)), b, x0=b / diag,
                             cfg=CgConfig(max_iters=10, rel_tol=1e-8))
        assert report.iterations_used == 0
        assert report.converged

    def test_zero_rhs(self):
        x, report = cg_solve(DenseOp(np.eye(8)), np.zeros(8))
        np.testing.assert_array_equal(x, np.zeros(8))
        assert report.converged and report.iterations_used == 0

    def test_history_final_below_initial(self):
        rng = Rng(3)
        mat = rng.normal((40, 40))
        spd = mat @ mat.T + 40 * np.eye(40)
        b = rng.normal((40,))
        _, report = cg_solve(DenseOp(spd), b,
                             cfg=CgConfig(max_iters=200, rel_tol=1e-10,
                                          record_history=True))
        hist = report.residual_history
        assert hist is not None and hist[-1] <= hist[0]

    def test_indefinite_raises(self):
        with pytest.raises(NumericalBreakdownError):
            cg_solve(DenseOp(-np.eye(4)), np.ones(4))

    def test_nonfinite_raises(self):
        mat = np.eye(4)
        mat[0, 0] = np.nan
        with pytest.raises(NumericalBreakdownError):
            cg_solve(DenseOp(mat), np.ones(4))

    def test_cap_returns_best_iterate(self):
        rng = Rng(4)
        diag = np.linspace(1.0, 1e4, 128)
        b = rng.normal((128,))
        x, report = cg_solve(DenseOp(np.diag(diag)), b,
                             cfg=CgConfig(max_iters=5, rel_tol=1e-12))
        assert not report.converged
        assert report.iterations_used == 5
        res = np.linalg.norm(b - diag * x) / np.linalg.norm(b)
        assert res == pytest.approx(report.final_rel_residual, rel=1e-9)


def random_pipeline_system(rng, H=12, W=12, sigma2=0.02 ** 2, alpha=0.4):
    k = normalize_kernel(np.abs(rng.normal((3, 3))) + 0.05)
    blur = BlurOperator(k, (1, H, W))
    filters = rng.normal((2, 1, 3, 3))
    reg = FilterBank(filters, (1, H, W))
    weights = np.abs(rng.normal(reg.output_shape))
    system = SystemOperator(blur, reg, weights, sigma2, alpha)
    dense = dense_system_matrix(
        dense_blur_matrix(1, H, W, k.taps),
        dense_bank_matrix(filters, H, W),
        weights.reshape(-1), sigma2, alpha)
    return system, dense, blur


class TestCgOnSystemOperator:
    def test_matches_dense_direct_solve(self):
        rng = Rng(5)
        for trial in range(3):
            system, dense, blur = random_pipeline_system(rng.child(trial))
            b = rng.normal(system.input_shape)
            x, report = cg_solve(system, b,
                                 cfg=CgConfig(max_iters=5000, rel_tol=1e-10))
            expected = np.linalg.solve(dense, b.reshape(-1)).reshape(b.shape)
            assert report.converged
            rel = np.linalg.norm(x - expected) / np.linalg.norm(expected)
            assert rel <= 1e-7

    def test_warm_start_beats_cold(self):
        """Warm starts from the previous step's output should rarely lose."""
        rng = Rng(6)
        wins = 0
        trials = 50
        for t in range(trials):
            system, dense, blur = random_pipeline_system(rng.child(t))
            x_prev = 0.5 + 0.1 * rng.normal(system.input_shape)
            y = blur.apply(x_prev)
            b = blur.adjoint_apply(y) / system.sigma2 + system.alpha * x_prev
            cfg = CgConfig(max_iters=2000, rel_tol=1e-6)
            _, warm = cg_solve(system, b, x0=x_prev, cfg=cfg)
            _, cold = cg_solve(system, b, x0=None, cfg=cfg)
            if warm.iterations_used <= cold.iterations_used:
                wins += 1
        assert wins >= int(0.9 * trials)


class TestCgBatch:
    def test_batch_matches_individual(self):
        rng = Rng(7)
        systems = []
        expected = []
        for t in range(3):
            _, dense, _ = random_pipeline_system(rng.child(t))
            b = rng.normal(esize := dense.shape[0])
            systems.append((DenseOp(dense), b, None))
            expected.append(np.linalg.solve(dense, b))
        xs, reports = cg_solve_batch(systems,
                                     CgConfig(max_iters=5000, rel_tol=1e-9))
        for x, ref, rep in zip(xs, expected, reports):
            assert rep.converged
            assert np.linalg.norm(x - ref) <= 1e-6 * np.linalg.norm(ref)

    def test_batch_exit_is_global(self):
        """An easy element keeps iterating until the hard one converges."""
        easy = DenseOp(np.eye(8))
        hard = DenseOp(np.diag(np.linspace(1.0, 400.0, 8)))
        b = np.ones(8)
        xs, reports = cg_solve_batch(
            [(easy, b, None), (hard, b, None)],
            CgConfig(max_iters=100, rel_tol=1e-10))
        assert all(r.converged for r in reports)
        assert reports[1].iterations_used >= reports[0].iterations_used
