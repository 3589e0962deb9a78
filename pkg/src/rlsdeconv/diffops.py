"""Hand-written vector-Jacobian products for every parameterized operator.

The backward pass of an implicit layer only ever needs the VJP of the short
residual composition b(w) - A(w) x*, so instead of a reverse-mode tape each
operator ships its own closed-form VJP. Finite-difference checking utilities
live here as well because the grad-check CLI command reuses them.
"""

import numpy as np

from .errors import DimensionError
from .linops import bank_adjoint, bank_apply
from .tensors import sliding_windows


class ParamSet:
    """Named parameter arrays plus matching gradient buffers.

    Arrays are owned here and aliased by layers and predictors; the optimizer
    updates them in place so every view stays current.
    """

    def __init__(self, params: dict):
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def names(self):
        return list(self.params)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def add_grad(self, name: str, value) -> None:
        if name not in self.grads:
            raise KeyError(f"unknown parameter {name!r}")
        if np.shape(value) != self.grads[name].shape:
            raise DimensionError(
                f"gradient for {name!r} has shape {np.shape(value)}, "
                f"expected {self.grads[name].shape}"
            )
        self.grads[name] += value

    def grads_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.grads.values())

    def scale_grads(self, factor: float) -> None:
        for g in self.grads.values():
            g *= factor

    def flat_grad_norm(self) -> float:
        sq = sum(float(np.vdot(g, g)) for g in self.grads.values())
        return float(np.sqrt(sq))


def bank_filter_vjp(x: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
    """Gradient of <bank_apply(filters, x), cotangent> with respect to filters.

    d[f, c, u, v] = sum_{i, j} cotangent[f, i, j] * x[c, i + u, j + v],
    a cross correlation of the input with the cotangent.
    """
    C, H, W = x.shape
    F, Ho, Wo = cotangent.shape
    if Ho > H or Wo > W:
        raise DimensionError("cotangent larger than input")
    win = sliding_windows(x, Ho, Wo)                       # (C, kh, kw, Ho, Wo)
    return np.einsum("fij,cuvij->fcuv", cotangent, win, optimize=True)


def conv_bank_vjp(filters: np.ndarray, x: np.ndarray, cotangent: np.ndarray):
    """VJP of z = bank_apply(filters, x): returns (d_filters, d_x)."""
    if cotangent.shape[0] != filters.shape[0]:
        raise DimensionError("cotangent feature count does not match bank")
    d_x = bank_adjoint(filters, cotangent, x.shape[1:])
    d_filters = bank_filter_vjp(x, cotangent)
    return d_filters, d_x


def diag_weight_vjp(w: np.ndarray, x: np.ndarray, cotangent: np.ndarray):
    """VJP of y = w * x: returns (d_w, d_x)."""
    if w.shape != x.shape or x.shape != cotangent.shape:
        raise DimensionError("diag_weight_vjp expects equal shapes")
    return x * cotangent, w * cotangent


def alpha_vjp(beta: float, x: np.ndarray, cotangent: np.ndarray) -> float:
    """Contribution of an exp(beta) * x term: d_beta = exp(beta) <x, cotangent>."""
    return float(np.exp(beta) * np.vdot(x, cotangent))


def finite_diff_grad(f, arrays: dict, step: float = 1e-5) -> dict:
    """Central finite differences of a scalar function of named arrays.

    The step for each coordinate scales with the parameter magnitude. Arrays
    are perturbed in place and restored, so `f` must read them live.
    """
    grads = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            h = step * max(1.0, abs(orig))
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads[name] = g
    return grads


def rel_error(a, b) -> float:
    """Relative difference of two gradient pytrees (dicts or arrays)."""
    if isinstance(a, dict):
        num = np.sqrt(sum(float(np.sum((np.asarray(a[k]) - np.asarray(b[k])) ** 2)) for k in a))
        den = np.sqrt(sum(float(np.sum(np.asarray(b[k]) ** 2)) for k in a))
    else:
        num = float(np.linalg.norm(np.asarray(a) - np.asarray(b)))
        den = float(np.linalg.norm(np.asarray(b)))
    return num / max(den, 1e-300)


def check_vjp(forward, vjp, x: np.ndarray, rng, probes: int = 20,
              step: float = 1e-5) -> float:
    """Worst relative error of <J d, c> vs <d, vjp(c)> over random probes.

    `forward` maps x to an output array; `vjp` maps a cotangent to the input
    cotangent. Directional derivatives come from central differences.
    """
    worst = 0.0
    for _ in range(probes):
        d = rng.normal(x.shape)
        c = rng.normal(forward(x).shape)
        h = step * max(1.0, float(np.max(np.abs(x))))
        lhs = float(np.vdot((forward(x + h * d) - forward(x - h * d)) / (2 * h), c))
        rhs = float(np.vdot(d, vjp(x, c)))
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
    return worst
