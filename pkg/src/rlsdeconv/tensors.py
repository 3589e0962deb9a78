"""Float64 image arrays, valid 2-D convolution with its exact adjoint, seeded RNG.

Convolution convention: every hot-path operation is a cross correlation,

    out[i, j] = sum_{u, v} taps[u, v] * image[i + u, j + v],

so kernels specified in true-convolution orientation (PSF files) are flipped
once at load time (see linops.load_kernel) and stored as correlation taps.
The adjoint zero-pads: no circular wrap-around anywhere.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal

from .errors import DimensionError

LAPLACIAN_STENCIL = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


def as_image(x) -> np.ndarray:
    """Coerce to a float64 array of rank 2 (H, W) or 3 (C, H, W)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise DimensionError(f"expected 2-D or 3-D image, got shape {arr.shape}")
    return arr


def conv2d_valid(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Valid cross correlation of a 2-D image with a 2-D tap array.

    Output shape is (H - kh + 1, W - kw + 1).
    """
    image = np.asarray(image, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if image.ndim != 2 or kernel.ndim != 2:
        raise DimensionError("conv2d_valid expects 2-D arrays")
    if kernel.shape[0] > image.shape[0] or kernel.shape[1] > image.shape[1]:
        raise DimensionError(
            f"kernel {kernel.shape} larger than image {image.shape}"
        )
    return signal.correlate(image, kernel, mode="valid", method="auto")


def conv2d_valid_adjoint(grad: np.ndarray, kernel: np.ndarray, out_shape) -> np.ndarray:
    """Exact adjoint of conv2d_valid: zero-padded full correlation.

    Satisfies <conv2d_valid(x, k), g> == <x, conv2d_valid_adjoint(g, k, x.shape)>.
    """
    grad = np.asarray(grad, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if grad.ndim != 2 or kernel.ndim != 2:
        raise DimensionError("conv2d_valid_adjoint expects 2-D arrays")
    H, W = out_shape
    expected = (H - kernel.shape[0] + 1, W - kernel.shape[1] + 1)
    if grad.shape != expected:
        raise DimensionError(
            f"gradient shape {grad.shape} inconsistent with output {out_shape} "
            f"and kernel {kernel.shape} (expected {expected})"
        )
    return signal.convolve(grad, kernel, mode="full", method="auto")


def laplacian_response(image: np.ndarray) -> float:
    """Mean absolute valid response of the 3x3 Laplacian stencil.

    Used to rank candidate training crops by high-frequency content; zero on
    constant and affine images.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        image = image.mean(axis=0)
    if image.shape[0] < 3 or image.shape[1] < 3:
        raise DimensionError("laplacian_response needs at least a 3x3 image")
    return float(np.mean(np.abs(conv2d_valid(image, LAPLACIAN_STENCIL))))


def center_crop(image: np.ndarray, shape) -> np.ndarray:
    """Centered spatial crop of a 2-D or 3-D image to (h, w)."""
    image = as_image(image)
    h, w = shape
    H, W = image.shape[-2], image.shape[-1]
    if h > H or w > W:
        raise DimensionError(f"crop {shape} larger than image {image.shape}")
    top = (H - h) // 2
    left = (W - w) // 2
    return image[..., top:top + h, left:left + w]


def crop_border(image: np.ndarray, border: int) -> np.ndarray:
    """Discard `border` pixels from every side."""
    image = as_image(image)
    if border == 0:
        return image
    H, W = image.shape[-2], image.shape[-1]
    if 2 * border >= H or 2 * border >= W:
        raise DimensionError(f"border {border} too large for image {image.shape}")
    return image[..., border:H - border, border:W - border]


def sliding_windows(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """View of all valid (kh, kw) patches of a (C, H, W) array."""
    return sliding_window_view(x, (kh, kw), axis=(1, 2))


class Rng:
    """Deterministic random stream with stateless child derivation.

    The same (seed, key) pair always reproduces the same stream; parallel
    workers and per-epoch schedules derive independent children instead of
    sharing mutable state.
    """

    def __init__(self, seed: int, key: tuple = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self.key))
        )
        self._children = 0

    def child(self, index: int | None = None) -> "Rng":
        if index is None:
            index = self._children
            self._children += 1
        return Rng(self.seed, self.key + (int(index),))

    def normal(self, shape=None) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low: float = 0.0, high: float = 1.0, shape=None):
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, shape=None):
        return self._gen.integers(low, high, shape)

    def shuffle(self, items: list) -> None:
        self._gen.shuffle(items)


def sample_gaussian(rng: Rng, shape) -> np.ndarray:
    """I.i.d. standard normal samples; callers scale by the noise level."""
    return rng.normal(shape)
