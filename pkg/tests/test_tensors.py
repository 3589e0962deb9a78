import numpy as np
import pytest

from rlsdeconv.errors import DimensionError
from rlsdeconv.tensors import (
    Rng,
    conv2d_valid,
    conv2d_valid_adjoint,
    laplacian_response,
    sample_gaussian,
)

from oracles import dense_valid_correlation_matrix


class TestConv2dValid:
    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        img = rng.normal(size=(5, 5))
        out = conv2d_valid(img, np.array([[1.0]]))
        np.testing.assert_array_equal(out, img)

    def test_constant_averaging(self):
        img = np.ones((3, 3))
        kernel = np.full((2, 2), 0.25)
        out = conv2d_valid(img, kernel)
        np.testing.assert_allclose(out, np.ones((2, 2)), rtol=1e-15)

    def test_matches_dense_toeplitz(self):
        rng = np.random.default_rng(1)
        img = rng.normal(size=(8, 8))
        kernel = rng.normal(size=(3, 3))
        dense = dense_valid_correlation_matrix(8, 8, kernel)
        expected = (dense @ img.reshape(-1)).reshape(6, 6)
        out = conv2d_valid(img, kernel)
        np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-14)

    def test_linearity(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(10, 10))
        y = rng.normal(size=(10, 10))
        k = rng.normal(size=(3, 4))
        lhs = conv2d_valid(2.5 * x - 1.25 * y, k)
        rhs = 2.5 * conv2d_valid(x, k) - 1.25 * conv2d_valid(y, k)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-13)

    def test_kernel_too_large(self):
        with pytest.raises(DimensionError):
            conv2d_valid(np.ones((3, 3)), np.ones((4, 4)))

    def test_input_not_modified(self):
        rng = np.random.default_rng(3)
        img = rng.normal(size=(6, 6))
        before = img.copy()
        conv2d_valid(img, rng.normal(size=(3, 3)))
        np.testing.assert_array_equal(img, before)


class TestConv2dValidAdjoint:
    def test_identity_kernel(self):
        rng = np.random.default_rng(4)
        g = rng.normal(size=(5, 5))
        out = conv2d_valid_adjoint(g, np.array([[1.0]]), (5, 5))
        np.testing.assert_array_equal(out, g)

    def test_adjoint_identity_random(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            H = int(rng.integers(4, 12))
            W = int(rng.integers(4, 12))
            kh = int(rng.integers(1, min(H, 5) + 1))
            kw = int(rng.integers(1, min(W, 5) + 1))
            x = rng.normal(size=(H, W))
            k = rng.normal(size=(kh, kw))
            y = rng.normal(size=(H - kh + 1, W - kw + 1))
            lhs = np.vdot(conv2d_valid(x, k), y)
            rhs = np.vdot(x, conv2d_valid_adjoint(y, k, (H, W)))
            assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), abs(rhs), 1e-12)

    def test_matches_dense_transpose(self):
        rng = np.random.default_rng(6)
        k = rng.normal(size=(3, 3))
        g = rng.normal(size=(6, 6))
        dense = dense_valid_correlation_matrix(8, 8, k)
        expected = (dense.T @ g.reshape(-1)).reshape(8, 8)
        out = conv2d_valid_adjoint(g, k, (8, 8))
        np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            conv2d_valid_adjoint(np.ones((5, 5)), np.ones((3, 3)), (6, 6))


class TestLaplacianResponse:
    def test_constant_is_zero(self):
        assert laplacian_response(np.full((8, 8), 0.7)) == 0.0

    def test_ramp_is_zero(self):
        ramp = np.outer(np.arange(8.0), np.ones(8)) + 0.25 * np.arange(8.0)
        assert laplacian_response(ramp) == pytest.approx(0.0, abs=1e-12)

    def test_checkerboard(self):
        ii, jj = np.mgrid[0:8, 0:8]
        board = np.where((ii + jj) % 2 == 0, 1.0, -1.0)
        assert laplacian_response(board) == pytest.approx(8.0)


class TestRng:
    def test_reproducible(self):
        a = sample_gaussian(Rng(123), (16,))
        b = sample_gaussian(Rng(123), (16,))
        np.testing.assert_array_equal(a, b)

    def test_distinct_seeds_differ(self):
        a = sample_gaussian(Rng(1), (16,))
        b = sample_gaussian(Rng(2), (16,))
        assert np.any(a != b)

    def test_moments(self):
        x = sample_gaussian(Rng(7), (1_000_000,))
        assert abs(float(x.mean())) < 0.01
        assert abs(float(x.var()) - 1.0) < 0.01

    def test_children_independent_of_draw_order(self):
        r1 = Rng(9)
        c_a = r1.child(0).normal(4)
        r2 = Rng(9)
        r2.normal(1000)
        c_b = r2.child(0).normal(4)
        np.testing.assert_array_equal(c_a, c_b)
