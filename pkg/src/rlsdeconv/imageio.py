"""PNG image I/O mapped to [0, 1] float64 arrays.

Supported: 8-bit and 16-bit grayscale, 8-bit RGB. Loading then saving is
bit-exact for these formats.
"""

import numpy as np
from PIL import Image

from .errors import DimensionError, ParameterError


def load_image(path) -> np.ndarray:
    """Returns (H, W) for grayscale or (3, H, W) for RGB, values in [0, 1]."""
    with Image.open(path) as im:
        if im.mode == "I;16":
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        elif im.mode == "L":
            arr = np.asarray(im, dtype=np.float64) / 255.0
        elif im.mode in ("RGB", "RGBA"):
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float64).transpose(2, 0, 1) / 255.0
        elif im.mode == "I":
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        else:
            im2 = im.convert("L")
            arr = np.asarray(im2, dtype=np.float64) / 255.0
    return arr


def save_image(path, image, bitdepth: int = 8) -> None:
    """Write a [0, 1] array as PNG; grayscale may be 8- or 16-bit."""
    arr = np.asarray(image, dtype=np.float64)
    arr = np.clip(arr, 0.0, 1.0)
    if arr.ndim == 2:
        if bitdepth == 16:
            data = np.round(arr * 65535.0).astype(np.uint16)
            Image.fromarray(data, mode="I;16").save(path)
        elif bitdepth == 8:
            data = np.round(arr * 255.0).astype(np.uint8)
            Image.fromarray(data, mode="L").save(path)
        else:
            raise ParameterError(f"unsupported bit depth {bitdepth}")
    elif arr.ndim == 3 and arr.shape[0] == 3:
        if bitdepth != 8:
            raise ParameterError("RGB output is 8-bit only")
        data = np.round(arr.transpose(1, 2, 0) * 255.0).astype(np.uint8)
        Image.fromarray(data, mode="RGB").save(path)
    else:
        raise DimensionError(f"cannot save image of shape {arr.shape}")
