"""Synthetic training data: random-walk motion blur kernels, Laplacian-ranked
crop selection, Gaussian noise regimes, and a procedural piecewise-smooth
image corpus for environments without a natural-image dataset.
"""

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import DimensionError, ParameterError
from .linops import BlurKernel, normalize_kernel
from .tensors import Rng, as_image, conv2d_valid, laplacian_response, sample_gaussian

ANTI_ALIAS = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]) / 16.0


@dataclass
class DataConfig:
    source_dir: str = ""
    crop: int = 64
    kernel_min: int = 13
    kernel_max: int = 35
    noise_lo: float = 0.01     # fraction of peak intensity
    noise_hi: float = 0.03
    crops_per_epoch: int = 800
    seed: int = 0
    candidates: int = 8        # crops ranked per sample

    def validate(self):
        if self.kernel_min > self.kernel_max or self.kernel_min < 3:
            raise ParameterError("bad kernel size range")
        if not (0 < self.noise_lo <= self.noise_hi):
            raise ParameterError("bad noise range")
        if self.crop < self.kernel_max + 16:
            raise ParameterError(
                f"crop {self.crop} must be >= kernel_max + 16 "
                f"({self.kernel_max + 16})"
            )
        return self


def synth_kernel(rng: Rng, size_range=(13, 35)) -> BlurKernel:
    """Rasterize a random-walk trajectory into a normalized blur kernel.

    Gaussian increments with per-kernel anisotropy are splatted with bilinear
    weights, smoothed by a small anti-alias stencil, clipped at zero, and
    normalized to unit sum. Step count grows with the support area.
    """
    lo, hi = size_range
    if isinstance(size_range, int):
        size = size_range
    elif lo == hi:
        size = lo
    else:
        size = int(rng.integers(lo // 2, hi // 2 + 1)) * 2 + 1
        size = min(max(size, lo), hi)
    if size % 2 != 1:
        raise ParameterError(f"kernel size must be odd, got {size}")

    n_steps = max(16, 2 * size * size)
    aniso = rng.uniform(0.25, 1.0)
    theta = rng.uniform(0.0, np.pi)
    rot = np.array([[np.cos(theta), -np.sin(theta)],
                    [np.sin(theta), np.cos(theta)]])
    stretch = rot @ np.diag([1.0, aniso]) @ rot.T
    steps = sample_gaussian(rng, (n_steps, 2)) @ stretch.T
    # mild momentum makes trajectories look like camera shake, not static fuzz
    for i in range(1, n_steps):
        steps[i] += 0.6 * steps[i - 1]
    path = np.cumsum(steps, axis=0)
    path -= path.mean(axis=0)

    span = np.abs(path).max()
    margin = (size - 1) / 2.0 - 1.0
    if span > 0:
        path *= margin / span * rng.uniform(0.55, 1.0)
    path += (size - 1) / 2.0

    grid = np.zeros((size, size))
    ij = np.floor(path).astype(int)
    frac = path - ij
    for (i, j), (fi, fj) in zip(ij, frac):
        if 0 <= i < size - 1 and 0 <= j < size - 1:
            grid[i, j] += (1 - fi) * (1 - fj)
            grid[i + 1, j] += fi * (1 - fj)
            grid[i, j + 1] += (1 - fi) * fj
            grid[i + 1, j + 1] += fi * fj
    blurred = signal.convolve(grid, ANTI_ALIAS, mode="same")
    return normalize_kernel(blurred)


def select_crop(rng: Rng, source: np.ndarray, crop: int, candidates: int = 8):
    """Pick the most textured of `candidates` random crops by Laplacian response."""
    H, W = source.shape[-2], source.shape[-1]
    if H < crop or W < crop:
        raise DimensionError(f"source {source.shape} smaller than crop {crop}")
    best, best_score = None, -1.0
    for _ in range(candidates):
        top = int(rng.integers(0, H - crop + 1))
        left = int(rng.integers(0, W - crop + 1))
        patch = source[..., top:top + crop, left:left + crop]
        score = laplacian_response(patch)
        if score > best_score:
            best, best_score = patch, score
    return np.array(best)


@dataclass
class Sample:
    x_gt: np.ndarray
    y: np.ndarray
    kernel: BlurKernel
    sigma: float


def degrade(x_gt: np.ndarray, kernel: BlurKernel, sigma: float,
            rng: Rng) -> np.ndarray:
    """Valid blur plus i.i.d. Gaussian noise at standard deviation sigma."""
    x = as_image(x_gt)
    if x.ndim == 2:
        x = x[None]
    y = np.stack([conv2d_valid(ch, kernel.taps) for ch in x])
    y = y + sigma * sample_gaussian(rng, y.shape)
    return y if as_image(x_gt).ndim == 3 else y[0]


def make_sample(rng: Rng, source: np.ndarray, cfg: DataConfig) -> Sample:
    """Crop, blur, and corrupt one training pair from a source image."""
    cfg.validate()
    x_gt = select_crop(rng, as_image(source), cfg.crop, cfg.candidates)
    kernel = synth_kernel(rng, (cfg.kernel_min, cfg.kernel_max))
    sigma = float(rng.uniform(cfg.noise_lo, cfg.noise_hi))   # peak is 1.0
    y = degrade(x_gt, kernel, sigma, rng)
    x3 = x_gt if x_gt.ndim == 3 else x_gt[None]
    y3 = y if y.ndim == 3 else y[None]
    return Sample(x_gt=x3, y=y3, kernel=kernel, sigma=sigma)


def _smooth_field(rng: Rng, size: int, scales=(4, 8, 16)) -> np.ndarray:
    """Sum of upsampled random grids, a cheap band-limited background."""
    out = np.zeros((size, size))
    for s in scales:
        coarse = rng.normal((s + 1, s + 1))
        xs = np.linspace(0, s, size)
        ii = np.clip(xs.astype(int), 0, s - 1)
        fr = xs - ii
        row = coarse[ii][:, ii]
        rowr = coarse[ii + 1][:, ii]
        colr = coarse[ii][:, ii + 1]
        both = coarse[ii + 1][:, ii + 1]
        fi = fr[:, None]
        fj = fr[None, :]
        out += ((1 - fi) * (1 - fj) * row + fi * (1 - fj) * rowr
                + (1 - fi) * fj * colr + fi * fj * both) / len(scales)
    return out


def synth_source_image(rng: Rng, size: int = 256) -> np.ndarray:
    """Procedural piecewise-smooth image with sharp edges and mild texture.

    Stand-in corpus for desk-scale training when no photographic dataset is
    mounted; shapes and strokes give the crop selector real edges to find.
    """
    img = 0.5 + 0.18 * _smooth_field(rng, size)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    n_shapes = int(rng.integers(6, 12))
    for _ in range(n_shapes):
        cx, cy = rng.uniform(0, size, 2)
        a = rng.uniform(size * 0.04, size * 0.25)
        b = rng.uniform(size * 0.04, size * 0.25)
        theta = rng.uniform(0, np.pi)
        level = rng.uniform(0.05, 0.95)
        u = (xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)
        v = -(xx - cx) * np.sin(theta) + (yy - cy) * np.cos(theta)
        if rng.uniform() < 0.5:
            mask = (u / a) ** 2 + (v / b) ** 2 <= 1.0
        else:
            mask = (np.abs(u) <= a) & (np.abs(v) <= b)
        blend = rng.uniform(0.65, 1.0)
        img = np.where(mask, (1 - blend) * img + blend * level, img)
    n_lines = int(rng.integers(2, 6))
    for _ in range(n_lines):
        x0, y0 = rng.uniform(0, size, 2)
        ang = rng.uniform(0, np.pi)
        width = rng.uniform(1.0, 2.5)
        level = rng.uniform(0.0, 1.0)
        d = np.abs((xx - x0) * np.sin(ang) - (yy - y0) * np.cos(ang))
        img = np.where(d <= width, level, img)
    texture = 0.015 * rng.normal((size, size))
    img = img + signal.convolve(texture, ANTI_ALIAS, mode="same")
    return np.clip(img, 0.0, 1.0)


def generate_corpus(directory, count: int, seed: int, size: int = 256,
                    channels: int = 1) -> list:
    """Write `count` procedural PNGs into `directory`; returns the paths."""
    import os

    from .imageio import save_image

    os.makedirs(directory, exist_ok=True)
    rng = Rng(seed)
    paths = []
    for i in range(count):
        child = rng.child(i)
        if channels == 3:
            img = np.stack([synth_source_image(child.child(c), size)
                            for c in range(3)])
            base = synth_source_image(child.child(3), size)
            img = 0.6 * base[None] + 0.4 * img
        else:
            img = synth_source_image(child, size)
        path = os.path.join(directory, f"src_{i:04d}.png")
        save_image(path, img)
        paths.append(path)
    return paths
