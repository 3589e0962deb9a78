"""Finite-difference validation of the implicit backward pass.

Central differences through forward solves at tight tolerance are compared
against the adjoint-system gradients, per parameter tensor and end to end.
The CLI grad-check command runs the whole suite; tests reuse the pieces.
"""

import numpy as np

from .cg import CgConfig
from .diffops import finite_diff_grad, rel_error
from .implicit import NnlsLayer, nnls_backward, nnls_forward
from .linops import BlurOperator, FilterBank, normalize_kernel
from .model import Deconvolver, ModelConfig
from .predictors import ConvPredictor
from .synth import synth_kernel
from .tensors import Rng
from .training import loss_sum_mse

TIGHT = 1e-12
CAP = 20000


def _toy_blur(rng: Rng, latent_hw=(12, 12), ksize: int = 3) -> BlurOperator:
    taps = np.abs(rng.normal((ksize, ksize))) + 0.1
    kernel = normalize_kernel(taps)
    return BlurOperator(kernel, (1, *latent_hw))


def single_layer_check(seed: int = 0):
    """Gradient of an MSE loss through one adaptive solve.

    Parameters: the regularization bank, the step scalar, and the weight
    predictor's convolution stack. Returns (rel_err, per_name dict).
    """
    rng = Rng(seed)
    blur = _toy_blur(rng)
    x_prev = 0.5 + 0.1 * rng.normal(blur.input_shape)
    y = blur.apply(x_prev) + 0.02 * rng.normal(blur.output_shape)
    target = 0.5 + 0.1 * rng.normal(blur.input_shape)
    sigma2 = 0.05 ** 2

    filters = 0.5 * rng.normal((2, 1, 3, 3))
    beta = np.asarray(-0.7)
    pred = ConvPredictor(2, ksize=3, depth=2, rng=rng.child(1), final_bias=0.8)
    tight = CgConfig(max_iters=CAP, rel_tol=TIGHT)
    layer = NnlsLayer(filters=filters, beta=beta, cg_forward=tight,
                      cg_backward=tight)

    def forward_loss() -> float:
        reg = FilterBank(filters, blur.input_shape)
        z = reg.apply(x_prev)
        w = pred.weights(z)
        x, _, _ = nnls_forward(layer, blur, y, x_prev, w, sigma2)
        d = x - target
        return float(np.vdot(d, d)) / d.size

    # adjoint-system gradient
    reg = FilterBank(filters, blur.input_shape)
    z = reg.apply(x_prev)
    w = pred.weights(z)
    x, saved, _ = nnls_forward(layer, blur, y, x_prev, w, sigma2)
    saved.features = z
    rho = 2.0 * (x - target) / x.size
    grads, _, d_w, _, _ = nnls_backward(saved, rho)
    d_pred, d_z = pred.vjp(z, d_w)
    from .diffops import bank_filter_vjp

    impl = {
        "filters": grads["filters"] + bank_filter_vjp(x_prev, d_z),
        "beta": grads["beta"].reshape(()),
    }
    for name, val in d_pred.items():
        impl[f"pred.{name}"] = val

    arrays = {"filters": filters, "beta": beta}
    arrays.update({f"pred.w{i}": pred.weights_list[i] for i in range(pred.depth)})
    arrays.update({f"pred.b{i}": pred.biases[i] for i in range(pred.depth)})
    fd = finite_diff_grad(forward_loss, arrays)
    per_name = {k: rel_error(impl[k], fd[k]) for k in impl}
    overall = rel_error(impl, {k: fd[k] for k in impl})
    return overall, per_name


def pipeline_check(seed: int = 0, steps: int = 2):
    """End-to-end gradient of the summed per-step MSE loss.

    Initialization solve plus `steps` adaptive steps with a trainable
    convolutional predictor, every solve at tight tolerance.
    """
    rng = Rng(seed)
    config = ModelConfig(
        channels=1, reg_filters=2, reg_ksize=3, wiener_filters=2,
        wiener_ksize=3, steps=steps, share_weights=True, predictor="conv",
        conv_depth=2, conv_ksize=3, beta_init=-0.7, wiener_gain=1.0,
        cg_fwd_iters=CAP, cg_bwd_iters=CAP, cg_tol=TIGHT, seed=seed,
    )
    model = Deconvolver(config)
    kernel = synth_kernel(rng.child(0), (3, 3))
    x_gt = 0.5 + 0.12 * rng.normal((1, 12, 12))
    y = np.stack([np.asarray(
        _valid(x_gt[0], kernel.taps))]) + 0.02 * rng.normal((1, 10, 10))
    sigma = 0.05

    def forward_loss() -> float:
        _, trace = model.restore(y, kernel, sigma)
        return loss_sum_mse(trace.outputs, x_gt)[0]

    model.params.zero_grads()
    _, trace, saved = model.restore(y, kernel, sigma, keep_saved=True)
    _, cots = loss_sum_mse(trace.outputs, x_gt)
    model.backprop(saved, cots)
    impl = {k: np.array(v) for k, v in model.params.grads.items()}
    fd = finite_diff_grad(forward_loss, model.params.params)
    per_name = {k: rel_error(impl[k], fd[k]) for k in impl}
    overall = rel_error(impl, fd)
    return overall, per_name


def _valid(image, taps):
    from .tensors import conv2d_valid

    return conv2d_valid(image, taps)


def closed_form_scalar_check() -> float:
    """1x1 system A = exp(beta), b = 1, L = x^2: dL/dbeta = -2 x*^2 exactly."""
    from .cg import cg_solve
    from .diffops import alpha_vjp

    beta = 0.3

    class ScalarOp:
        def apply(self, v):
            return np.exp(beta) * v

    b = np.ones((1, 1, 1))
    x, _ = cg_solve(ScalarOp(), b, cfg=CgConfig(max_iters=50, rel_tol=1e-15))
    rho = 2.0 * x
    g, _ = cg_solve(ScalarOp(), rho, cfg=CgConfig(max_iters=50, rel_tol=1e-15))
    # residual r = b - exp(beta) x*, so the beta term carries -x*
    d_beta = alpha_vjp(beta, -x, g)
    expected = -2.0 * float(x.reshape(())) ** 2
    return abs(d_beta - expected) / abs(expected)


def run_suite(seed: int = 0) -> dict:
    """Name -> relative error for every configured check."""
    results = {}
    overall, per_name = single_layer_check(seed)
    results["nnls_layer"] = overall
    for k, v in per_name.items():
        results[f"nnls_layer.{k}"] = v
    overall, per_name = pipeline_check(seed)
    results["pipeline"] = overall
    for k, v in per_name.items():
        results[f"pipeline.{k}"] = v
    results["scalar_closed_form"] = closed_form_scalar_check()
    return results
