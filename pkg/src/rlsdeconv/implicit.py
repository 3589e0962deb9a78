"""Implicit layers whose output solves a linear system.

Forward: x* = A(w)^{-1} b(w) by conjugate gradient. Backward, given the loss
cotangent rho at x*: solve the adjoint system A^T g = rho (A is symmetric here,
so the forward operator is reused), form the residual r(w) = b(w) - A(w) x*
with x* held fixed, and push g through the hand-written VJPs of r. Only the
solution and references to the layer inputs are retained, so the stored state
is independent of how many solver iterations ran.
"""

from dataclasses import dataclass, field

import numpy as np

from .cg import CgConfig, CgReport, cg_solve
from .diffops import alpha_vjp, bank_filter_vjp
from .errors import ParameterError
from .linops import (
    BlurOperator,
    FilterBank,
    SystemOperator,
    WienerOperator,
    build_rhs,
)


@dataclass
class NnlsLayer:
    """One adaptive reweighted least-squares step.

    `filters` (F, C, kh, kw) and the scalar `beta` (alpha = exp(beta)) alias
    the model's parameter arrays, so optimizer updates are visible here.
    """

    filters: np.ndarray
    beta: np.ndarray
    cg_forward: CgConfig = field(default_factory=lambda: CgConfig(max_iters=250, rel_tol=1e-3))
    cg_backward: CgConfig = field(default_factory=lambda: CgConfig(max_iters=500, rel_tol=1e-3))
    backward_warm_start: bool = False


@dataclass
class WienerLayer:
    """Learned initialization: x1 solves (H^T H + sigma2 Gw^T Gw) x = H^T y."""

    filters: np.ndarray
    cg: CgConfig = field(default_factory=lambda: CgConfig(max_iters=250, rel_tol=1e-3))
    cg_backward: CgConfig | None = None
    backward_warm_start: bool = False


@dataclass
class SavedForward:
    """Per-invocation state kept for the backward pass.

    One image-sized solution plus references to the inputs that built the
    system; nothing here grows with the solver iteration count.
    """

    kind: str
    layer: object
    blur: BlurOperator
    x_star: np.ndarray
    sigma2: float
    x_prev: np.ndarray | None = None
    weights: np.ndarray | None = None
    features: np.ndarray | None = None

    def retained_floats(self) -> int:
        """Total float64 count held by this record (memory-contract probe)."""
        total = 0
        for arr in (self.x_star, self.x_prev, self.weights, self.features):
            if arr is not None:
                total += arr.size
        layer = self.layer
        total += layer.filters.size
        if self.kind == "nnls":
            total += np.asarray(layer.beta).size
        return total


def _as_scalar(beta) -> float:
    return float(np.asarray(beta).reshape(()))


def nnls_forward(layer: NnlsLayer, blur: BlurOperator, y: np.ndarray,
                 x_prev: np.ndarray, weights: np.ndarray, sigma2: float):
    """Solve S x = (1/sigma2) H^T y + alpha x_prev, warm-started at x_prev.

    Returns (x, SavedForward, CgReport). Hitting the iteration cap is not an
    error; the best iterate is returned with converged=False.
    """
    if sigma2 <= 0:
        raise ParameterError(f"sigma2 must be positive, got {sigma2}")
    alpha = float(np.exp(_as_scalar(layer.beta)))
    reg = FilterBank(layer.filters, blur.input_shape)
    system = SystemOperator(blur, reg, weights, sigma2, alpha)
    rhs = build_rhs(blur, y, x_prev, sigma2, alpha)
    x, report = cg_solve(system, rhs, x0=x_prev, cfg=layer.cg_forward)
    saved = SavedForward(
        kind="nnls", layer=layer, blur=blur, x_star=x, sigma2=sigma2,
        x_prev=x_prev, weights=weights,
    )
    return x, saved, report


def nnls_backward(saved: SavedForward, rho: np.ndarray, g0: np.ndarray | None = None):
    """Adjoint solve plus residual VJPs for one adaptive step.

    Returns (grads, d_x_prev, d_weights, g, CgReport) with grads holding
    "filters" and "beta" entries. d_weights is the cotangent the weight
    predictor receives; d_x_prev chains into the previous step. The adjoint
    solve starts from zero unless the layer opts into warm starts, in which
    case g0 (the following step's adjoint solution) seeds it.
    """
    layer: NnlsLayer = saved.layer
    beta = _as_scalar(layer.beta)
    alpha = float(np.exp(beta))
    reg = FilterBank(layer.filters, saved.blur.input_shape)
    system = SystemOperator(saved.blur, reg, saved.weights, saved.sigma2, alpha)
    x0 = g0 if layer.backward_warm_start else None
    g, report = cg_solve(system, rho, x0=x0, cfg=layer.cg_backward)

    if layer.filters.shape[0] > 0:
        Gx = reg.apply(saved.x_star)
        Gg = reg.apply(g)
        d_filters = -(bank_filter_vjp(saved.x_star, saved.weights * Gg)
                      + bank_filter_vjp(g, saved.weights * Gx))
        d_weights = -Gx * Gg
    else:
        d_filters = np.zeros_like(layer.filters)
        d_weights = np.zeros(0)
    d_beta = alpha_vjp(beta, saved.x_prev - saved.x_star, g)
    d_x_prev = alpha * g
    grads = {"filters": d_filters, "beta": np.asarray(d_beta)}
    return grads, d_x_prev, d_weights, g, report


def wiener_forward(layer: WienerLayer, blur: BlurOperator, y: np.ndarray,
                   sigma2: float):
    """Solve (H^T H + sigma2 Gw^T Gw) x = H^T y from a scaled-backprojection start."""
    if sigma2 <= 0:
        raise ParameterError(f"sigma2 must be positive, got {sigma2}")
    reg = FilterBank(layer.filters, blur.input_shape)
    system = WienerOperator(blur, reg, sigma2)
    b = blur.adjoint_apply(y)
    l1 = float(np.abs(blur.kernel.taps).sum())
    x0 = b / (l1 * l1)
    x, report = cg_solve(system, b, x0=x0, cfg=layer.cg)
    saved = SavedForward(kind="wiener", layer=layer, blur=blur, x_star=x,
                         sigma2=sigma2)
    return x, saved, report


def wiener_backward(saved: SavedForward, rho: np.ndarray,
                    g0: np.ndarray | None = None):
    """Adjoint solve plus residual VJP for the initialization layer.

    The residual r = H^T y - (H^T H + sigma2 Gw^T Gw) x* depends on the bank
    only through the quadratic term, so d_Gw vanishes when x* = 0.
    """
    layer: WienerLayer = saved.layer
    reg = FilterBank(layer.filters, saved.blur.input_shape)
    system = WienerOperator(saved.blur, reg, saved.sigma2)
    cfg = layer.cg_backward or layer.cg
    x0 = g0 if layer.backward_warm_start else None
    g, report = cg_solve(system, rho, x0=x0, cfg=cfg)
    if layer.filters.shape[0] > 0:
        Gx = reg.apply(saved.x_star)
        Gg = reg.apply(g)
        d_filters = -saved.sigma2 * (bank_filter_vjp(saved.x_star, Gg)
                                     + bank_filter_vjp(g, Gx))
    else:
        d_filters = np.zeros_like(layer.filters)
    return {"filters": d_filters}, report
