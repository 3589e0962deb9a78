import numpy as np
import pytest

from rlsdeconv.errors import DimensionError, ParameterError
from rlsdeconv.linops import (
    BlurKernel,
    BlurOperator,
    DiagonalWeights,
    FilterBank,
    SystemOperator,
    WienerOperator,
    adjoint_mismatch,
    build_rhs,
    load_kernel,
    normalize_kernel,
    save_kernel,
)
from rlsdeconv.tensors import Rng

from oracles import (
    dense_bank_matrix,
    dense_blur_matrix,
    dense_system_matrix,
    dense_valid_correlation_matrix,
)


def delta_kernel(k=1):
    taps = np.zeros((k, k))
    taps[k // 2, k // 2] = 1.0
    return BlurKernel(taps=taps)


class TestBlurKernel:
    def test_rejects_negative(self):
        with pytest.raises(ParameterError):
            BlurKernel(taps=np.array([[1.5, -0.5]]))

    def test_rejects_bad_sum(self):
        with pytest.raises(ParameterError):
            BlurKernel(taps=np.array([[0.5, 0.4]]))

    def test_normalize(self):
        k = normalize_kernel(np.array([[2.0, 2.0], [0.0, 4.0]]))
        assert k.taps.sum() == pytest.approx(1.0, abs=1e-12)
        assert k.scale == pytest.approx(8.0)


class TestKernelFileFormat:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "k.txt"
        raw = np.array([[0.1, 0.2, 0.0], [0.3, 0.25, 0.15]])
        with open(path, "w") as fh:
            fh.write("2 3\n")
            for row in raw:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        k = load_kernel(path)
        assert k.taps.sum() == pytest.approx(1.0, abs=1e-12)
        # taps are the flipped, normalized file values
        np.testing.assert_allclose(k.taps, raw[::-1, ::-1] / raw.sum(), rtol=1e-15)
        out = tmp_path / "k2.txt"
        save_kernel(k, out)
        k2 = load_kernel(out)
        np.testing.assert_array_equal(k.taps, k2.taps)
        assert k.scale == k2.scale

    def test_malformed(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("2 2\n1 2\n")
        with pytest.raises(ParameterError):
            load_kernel(path)


class TestBlurOperator:
    def test_delta_is_crop(self):
        rng = Rng(0)
        x = rng.normal((1, 8, 8))
        op = BlurOperator(delta_kernel(3), x.shape)
        np.testing.assert_allclose(op.apply(x), x[:, 1:-1, 1:-1], rtol=1e-13)

    def test_constant_preserved(self):
        k = normalize_kernel(np.abs(Rng(1).normal((5, 5))) + 0.1)
        x = np.full((1, 12, 12), 0.37)
        op = BlurOperator(k, x.shape)
        np.testing.assert_allclose(op.apply(x), np.full((1, 8, 8), 0.37),
                                   rtol=1e-12)

    def test_matches_dense_oracle(self):
        rng = Rng(2)
        x = rng.normal((1, 16, 16))
        k = normalize_kernel(np.abs(rng.normal((5, 5))) + 0.05)
        op = BlurOperator(k, x.shape)
        dense = dense_blur_matrix(1, 16, 16, k.taps)
        expected = (dense @ x.reshape(-1)).reshape(op.output_shape)
        np.testing.assert_allclose(op.apply(x), expected, rtol=1e-12, atol=1e-14)
        g = rng.normal(op.output_shape)
        expected_adj = (dense.T @ g.reshape(-1)).reshape(op.input_shape)
        np.testing.assert_allclose(op.adjoint_apply(g), expected_adj,
                                   rtol=1e-12, atol=1e-14)

    def test_multichannel_per_channel(self):
        rng = Rng(3)
        x = rng.normal((3, 9, 9))
        k = normalize_kernel(np.abs(rng.normal((3, 3))) + 0.1)
        op = BlurOperator(k, x.shape)
        single = BlurOperator(k, (1, 9, 9))
        for c in range(3):
            np.testing.assert_array_equal(op.apply(x)[c],
                                          single.apply(x[c:c + 1])[0])


class TestFilterBank:
    def test_adjoint_identity_100(self):
        rng = Rng(4)
        for i in range(100):
            C = int(rng.integers(1, 3))
            F = int(rng.integers(1, 4))
            k = int(rng.integers(1, 4))
            H = int(rng.integers(k + 2, k + 8))
            W = int(rng.integers(k + 2, k + 8))
            bank = FilterBank(rng.normal((F, C, k, k)), (C, H, W))
            assert adjoint_mismatch(bank, rng) <= 1e-12

    def test_matches_dense_oracle(self):
        rng = Rng(5)
        filters = rng.normal((3, 2, 3, 3))
        bank = FilterBank(filters, (2, 8, 8))
        dense = dense_bank_matrix(filters, 8, 8)
        x = rng.normal((2, 8, 8))
        expected = (dense @ x.reshape(-1)).reshape(bank.output_shape)
        np.testing.assert_allclose(bank.apply(x), expected, rtol=1e-12,
                                   atol=1e-14)
        z = rng.normal(bank.output_shape)
        expected_adj = (dense.T @ z.reshape(-1)).reshape(bank.input_shape)
        np.testing.assert_allclose(bank.adjoint_apply(z), expected_adj,
                                   rtol=1e-12, atol=1e-14)

    def test_empty_bank(self):
        bank = FilterBank(np.zeros((0, 1, 3, 3)), (1, 8, 8))
        assert bank.apply(np.ones((1, 8, 8))).shape == (0, 6, 6)
        np.testing.assert_array_equal(bank.adjoint_apply(np.zeros((0, 6, 6))),
                                      np.zeros((1, 8, 8)))


class TestDiagonalWeights:
    def test_nonnegative_enforced(self):
        with pytest.raises(ParameterError):
            DiagonalWeights(np.array([-1.0]))

    def test_apply(self):
        w = DiagonalWeights(np.array([0.0, 2.0]))
        np.testing.assert_array_equal(w.apply(np.array([3.0, 3.0])),
                                      np.array([0.0, 6.0]))


class TestSystemOperator:
    def _random_system(self, rng, H=8, W=8, F=2, sigma2=0.25, alpha=0.5):
        k = normalize_kernel(np.abs(rng.normal((3, 3))) + 0.05)
        blur = BlurOperator(k, (1, H, W))
        filters = rng.normal((F, 1, 3, 3))
        reg = FilterBank(filters, (1, H, W))
        weights = np.abs(rng.normal(reg.output_shape))
        system = SystemOperator(blur, reg, weights, sigma2, alpha)
        dense = dense_system_matrix(
            dense_blur_matrix(1, H, W, k.taps),
            dense_bank_matrix(filters, H, W),
            weights.reshape(-1), sigma2, alpha)
        return system, dense

    def test_matches_dense_oracle(self):
        rng = Rng(6)
        system, dense = self._random_system(rng)
        x = rng.normal(system.input_shape)
        expected = (dense @ x.reshape(-1)).reshape(system.input_shape)
        np.testing.assert_allclose(system.apply(x), expected, rtol=1e-12,
                                   atol=1e-13)

    def test_zero_weights_delta_blur(self):
        rng = Rng(7)
        blur = BlurOperator(delta_kernel(1), (1, 8, 8))
        reg = FilterBank(rng.normal((2, 1, 3, 3)), (1, 8, 8))
        system = SystemOperator(blur, reg, np.zeros(reg.output_shape), 1.0, 0.75)
        x = rng.normal((1, 8, 8))
        np.testing.assert_allclose(system.apply(x), 1.75 * x, rtol=1e-12)

    def test_symmetry_probes(self):
        rng = Rng(8)
        system, _ = self._random_system(rng)
        for _ in range(20):
            x = rng.normal(system.input_shape)
            y = rng.normal(system.input_shape)
            lhs = np.vdot(system.apply(x), y)
            rhs = np.vdot(x, system.apply(y))
            assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), abs(rhs))

    def test_rayleigh_floor(self):
        rng = Rng(9)
        system, _ = self._random_system(rng, alpha=0.3)
        for _ in range(100):
            x = rng.normal(system.input_shape)
            x /= np.linalg.norm(x)
            quot = float(np.vdot(system.apply(x), x))
            assert quot >= system.alpha - 1e-10

    def test_invalid_parameters(self):
        rng = Rng(10)
        blur = BlurOperator(delta_kernel(1), (1, 4, 4))
        with pytest.raises(ParameterError):
            SystemOperator(blur, None, None, sigma2=0.0, alpha=1.0)
        with pytest.raises(ParameterError):
            SystemOperator(blur, None, None, sigma2=1.0, alpha=0.0)


class TestBuildRhs:
    def test_alpha_zero_branch(self):
        rng = Rng(11)
        k = normalize_kernel(np.abs(rng.normal((3, 3))) + 0.1)
        blur = BlurOperator(k, (1, 8, 8))
        y = rng.normal(blur.output_shape)
        out = build_rhs(blur, y, np.zeros(blur.input_shape), 0.25, 0.0)
        np.testing.assert_allclose(out, blur.adjoint_apply(y) / 0.25, rtol=1e-13)

    def test_zero_observation(self):
        rng = Rng(12)
        blur = BlurOperator(delta_kernel(1), (1, 5, 5))
        x_prev = rng.normal((1, 5, 5))
        out = build_rhs(blur, np.zeros(blur.output_shape), x_prev, 1.0, 1.0)
        np.testing.assert_array_equal(out, x_prev)

    def test_matches_dense_formula(self):
        rng = Rng(13)
        k = normalize_kernel(np.abs(rng.normal((3, 3))) + 0.1)
        blur = BlurOperator(k, (1, 8, 8))
        dense = dense_blur_matrix(1, 8, 8, k.taps)
        y = rng.normal(blur.output_shape)
        x_prev = rng.normal(blur.input_shape)
        sigma2, alpha = 0.04, 0.6
        expected = (dense.T @ y.reshape(-1) / sigma2
                    + alpha * x_prev.reshape(-1)).reshape(blur.input_shape)
        np.testing.assert_allclose(build_rhs(blur, y, x_prev, sigma2, alpha),
                                   expected, rtol=1e-12, atol=1e-13)


class TestWienerOperator:
    def test_matches_dense(self):
        rng = Rng(14)
        from oracles import dense_wiener_matrix

        k = normalize_kernel(np.abs(rng.normal((3, 3))) + 0.1)
        blur = BlurOperator(k, (1, 8, 8))
        filters = rng.normal((2, 1, 3, 3))
        reg = FilterBank(filters, (1, 8, 8))
        op = WienerOperator(blur, reg, 0.04)
        dense = dense_wiener_matrix(dense_blur_matrix(1, 8, 8, k.taps),
                                    dense_bank_matrix(filters, 8, 8), 0.04)
        x = rng.normal((1, 8, 8))
        np.testing.assert_allclose(
            op.apply(x), (dense @ x.reshape(-1)).reshape(1, 8, 8),
            rtol=1e-12, atol=1e-13)
