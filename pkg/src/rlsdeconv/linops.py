"""Matrix-free linear operators: blur, filter banks, diagonal weights, and the
regularized normal-equation system they compose into.

All operators act on (C, H, W) float64 arrays and expose apply / adjoint_apply
satisfying <A x, y> == <x, A^T y> up to round-off.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .tensors import conv2d_valid, conv2d_valid_adjoint, sliding_windows


class LinearMap:
    """Base contract for matrix-free operators."""

    input_shape: tuple
    output_shape: tuple

    def apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def adjoint_apply(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def adjoint_mismatch(op: LinearMap, rng) -> float:
    """Relative error of one randomized adjoint-identity probe."""
    x = rng.normal(op.input_shape)
    y = rng.normal(op.output_shape)
    lhs = float(np.vdot(op.apply(x), y))
    rhs = float(np.vdot(x, op.adjoint_apply(y)))
    scale = max(abs(lhs), abs(rhs), 1e-300)
    return abs(lhs - rhs) / scale


@dataclass
class BlurKernel:
    """Normalized blur taps in correlation orientation.

    `taps` are what the hot path correlates with; `raw` keeps the file values
    (true-convolution orientation, unnormalized) so saving round-trips exactly.
    """

    taps: np.ndarray
    scale: float = 1.0
    raw: np.ndarray | None = None

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=np.float64)
        if self.taps.ndim != 2:
            raise DimensionError("blur kernel must be 2-D")
        if np.any(self.taps < -1e-12):
            raise ParameterError("blur kernel entries must be nonnegative")
        s = float(self.taps.sum())
        if abs(s - 1.0) > 1e-9:
            raise ParameterError(f"blur kernel must sum to 1, got {s!r}")

    @property
    def shape(self):
        return self.taps.shape


def normalize_kernel(array) -> BlurKernel:
    """Clip tiny negatives, normalize to unit sum, keep correlation orientation."""
    arr = np.asarray(array, dtype=np.float64)
    arr = np.clip(arr, 0.0, None)
    s = float(arr.sum())
    if s <= 0.0:
        raise ParameterError("kernel has no mass")
    return BlurKernel(taps=arr / s, scale=s)


def load_kernel(path) -> BlurKernel:
    """Read the text format: first line 'kh kw', then kh rows of kw floats.

    File values are in true-convolution (PSF) orientation; they are flipped
    into correlation taps and normalized to unit sum here, once.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ParameterError(f"empty kernel file: {path}")
    try:
        kh, kw = (int(t) for t in lines[0].split())
        rows = [[float(t) for t in ln.split()] for ln in lines[1:1 + kh]]
    except ValueError as exc:
        raise ParameterError(f"malformed kernel file {path}: {exc}") from exc
    if len(rows) != kh or any(len(r) != kw for r in rows):
        raise ParameterError(f"kernel file {path} does not match header {kh}x{kw}")
    raw = np.array(rows, dtype=np.float64)
    s = float(raw.sum())
    if s <= 0.0:
        raise ParameterError(f"kernel file {path} has nonpositive mass")
    taps = raw[::-1, ::-1] / s
    return BlurKernel(taps=taps, scale=s, raw=raw)


def save_kernel(kernel: BlurKernel, path) -> None:
    """Write the text format; exact inverse of load_kernel."""
    raw = kernel.raw
    if raw is None:
        raw = kernel.taps[::-1, ::-1] * kernel.scale
    kh, kw = raw.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{kh} {kw}\n")
        for row in raw:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


class BlurOperator(LinearMap):
    """Channel-wise valid correlation with a shared normalized kernel."""

    def __init__(self, kernel: BlurKernel, input_shape):
        if len(input_shape) != 3:
            raise DimensionError("BlurOperator input shape must be (C, H, W)")
        C, H, W = input_shape
        kh, kw = kernel.shape
        if kh > H or kw > W:
            raise DimensionError(
                f"kernel {kernel.shape} larger than image plane ({H}, {W})"
            )
        self.kernel = kernel
        self.input_shape = (C, H, W)
        self.output_shape = (C, H - kh + 1, W - kw + 1)

    def apply(self, x: np.ndarray) -> np.ndarray:
        if x.shape != self.input_shape:
            raise DimensionError(f"expected {self.input_shape}, got {x.shape}")
        return np.stack([conv2d_valid(ch, self.kernel.taps) for ch in x])

    def adjoint_apply(self, y: np.ndarray) -> np.ndarray:
        if y.shape != self.output_shape:
            raise DimensionError(f"expected {self.output_shape}, got {y.shape}")
        hw = self.input_shape[1:]
        return np.stack(
            [conv2d_valid_adjoint(ch, self.kernel.taps, hw) for ch in y]
        )


def bank_apply(filters: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply a (F, C, kh, kw) bank of valid correlations to a (C, H, W) image."""
    F, C, kh, kw = filters.shape
    if x.ndim != 3 or x.shape[0] != C:
        raise DimensionError(f"bank expects ({C}, H, W) input, got {x.shape}")
    if kh > x.shape[1] or kw > x.shape[2]:
        raise DimensionError(f"filters {filters.shape[2:]} larger than image {x.shape[1:]}")
    win = sliding_windows(x, kh, kw)                      # (C, Ho, Wo, kh, kw)
    Ho, Wo = win.shape[1], win.shape[2]
    mat = win.transpose(1, 2, 0, 3, 4).reshape(Ho * Wo, C * kh * kw)
    out = mat @ filters.reshape(F, C * kh * kw).T          # (Ho*Wo, F)
    return np.ascontiguousarray(out.T.reshape(F, Ho, Wo))


def bank_adjoint(filters: np.ndarray, z: np.ndarray, out_hw) -> np.ndarray:
    """Adjoint of bank_apply: sum of zero-padded full convolutions."""
    F, C, kh, kw = filters.shape
    if z.ndim != 3 or z.shape[0] != F:
        raise DimensionError(f"bank adjoint expects ({F}, h, w) input, got {z.shape}")
    H, W = out_hw
    if z.shape[1] != H - kh + 1 or z.shape[2] != W - kw + 1:
        raise DimensionError(
            f"feature shape {z.shape} inconsistent with output plane {out_hw}"
        )
    zp = np.zeros((F, H + kh - 1, W + kw - 1))
    zp[:, kh - 1:kh - 1 + z.shape[1], kw - 1:kw - 1 + z.shape[2]] = z
    win = sliding_windows(zp, kh, kw)                      # (F, H, W, kh, kw)
    mat = win.transpose(1, 2, 0, 3, 4).reshape(H * W, F * kh * kw)
    flipped = filters[:, :, ::-1, ::-1].transpose(0, 2, 3, 1).reshape(F * kh * kw, C)
    out = mat @ flipped                                    # (H*W, C)
    return np.ascontiguousarray(out.reshape(H, W, C).transpose(2, 0, 1))


class FilterBank(LinearMap):
    """Learnable regularization operator: F valid correlations mixing C channels."""

    def __init__(self, filters: np.ndarray, input_shape):
        filters = np.asarray(filters, dtype=np.float64)
        if filters.ndim != 4:
            raise DimensionError("filters must have shape (F, C, kh, kw)")
        C, H, W = input_shape
        if filters.shape[1] != C:
            raise DimensionError(
                f"filter channel count {filters.shape[1]} != image channels {C}"
            )
        self.filters = filters
        F, _, kh, kw = filters.shape
        self.input_shape = (C, H, W)
        self.output_shape = (F, H - kh + 1, W - kw + 1)

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.filters.shape[0] == 0:
            return np.zeros(self.output_shape)
        return bank_apply(self.filters, x)

    def adjoint_apply(self, z: np.ndarray) -> np.ndarray:
        if self.filters.shape[0] == 0:
            return np.zeros(self.input_shape)
        return bank_adjoint(self.filters, z, self.input_shape[1:])


class DiagonalWeights(LinearMap):
    """Pointwise nonnegative reweighting of feature responses."""

    def __init__(self, w: np.ndarray):
        w = np.asarray(w, dtype=np.float64)
        if np.any(w < 0):
            raise ParameterError("diagonal weights must be nonnegative")
        self.w = w
        self.input_shape = w.shape
        self.output_shape = w.shape

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.w * x

    adjoint_apply = apply


class SystemOperator(LinearMap):
    """Symmetric positive-definite step matrix of the reweighted solve:

        S x = (1 / sigma2) H^T H x + G^T (w * (G x)) + alpha x.

    Positive definiteness follows from alpha > 0 and w >= 0.
    """

    def __init__(self, blur: BlurOperator, reg: FilterBank | None,
                 weights: np.ndarray | None, sigma2: float, alpha: float):
        if sigma2 <= 0:
            raise ParameterError(f"sigma2 must be positive, got {sigma2}")
        if alpha <= 0:
            raise ParameterError(f"alpha must be positive, got {alpha}")
        if reg is not None and reg.input_shape != blur.input_shape:
            raise DimensionError("blur and regularizer disagree on input shape")
        if weights is not None and reg is not None and weights.shape != reg.output_shape:
            raise DimensionError(
                f"weights {weights.shape} do not match features {reg.output_shape}"
            )
        if weights is not None and np.any(weights < 0):
            raise ParameterError("system weights must be nonnegative")
        self.blur = blur
        self.reg = reg
        self.weights = weights
        self.sigma2 = float(sigma2)
        self.alpha = float(alpha)
        self.input_shape = blur.input_shape
        self.output_shape = blur.input_shape

    def apply(self, x: np.ndarray) -> np.ndarray:
        out = self.blur.adjoint_apply(self.blur.apply(x)) / self.sigma2
        if self.reg is not None and self.reg.filters.shape[0] > 0:
            z = self.reg.apply(x)
            if self.weights is not None:
                z = z * self.weights
            out = out + self.reg.adjoint_apply(z)
        return out + self.alpha * x

    adjoint_apply = apply  # symmetric by construction


class WienerOperator(LinearMap):
    """Initialization-step matrix: H^T H + sigma2 * Gw^T Gw."""

    def __init__(self, blur: BlurOperator, reg: FilterBank, sigma2: float):
        if sigma2 <= 0:
            raise ParameterError(f"sigma2 must be positive, got {sigma2}")
        if reg.input_shape != blur.input_shape:
            raise DimensionError("blur and Wiener bank disagree on input shape")
        self.blur = blur
        self.reg = reg
        self.sigma2 = float(sigma2)
        self.input_shape = blur.input_shape
        self.output_shape = blur.input_shape

    def apply(self, x: np.ndarray) -> np.ndarray:
        out = self.blur.adjoint_apply(self.blur.apply(x))
        if self.reg.filters.shape[0] > 0:
            out = out + self.sigma2 * self.reg.adjoint_apply(self.reg.apply(x))
        return out

    adjoint_apply = apply


def system_apply(op: SystemOperator, x: np.ndarray) -> np.ndarray:
    return op.apply(x)


def blur_apply(op: BlurOperator, x: np.ndarray) -> np.ndarray:
    return op.apply(x)


def build_rhs(blur: BlurOperator, y: np.ndarray, x_prev: np.ndarray,
              sigma2: float, alpha: float) -> np.ndarray:
    """Right-hand side of one reweighted step: (1/sigma2) H^T y + alpha x_prev."""
    if sigma2 <= 0:
        raise ParameterError(f"sigma2 must be positive, got {sigma2}")
    return blur.adjoint_apply(y) / sigma2 + alpha * x_prev
