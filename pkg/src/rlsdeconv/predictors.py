"""Weight predictors: map feature responses z = G x to nonnegative diagonal
weights for the reweighted solve.

Analytic predictors derive w = phi'(t) / t from a fixed penalty family with an
epsilon floor at t = max(|z|, eps); the convolutional predictor is a small
trainable image-to-image network whose final rectifier guarantees w >= 0.
"""

import numpy as np

from .errors import DimensionError, ParameterError
from .linops import bank_adjoint, bank_apply
from .diffops import bank_filter_vjp
from .tensors import Rng

FAMILIES = ("power", "charbonnier", "welsch")


class PotentialPredictor:
    """Reweighting derived from a scalar penalty on |z|.

    power:       phi(t) = t^p / p        -> w = t^(p-2)
    charbonnier: phi(t) = sqrt(t^2+s^2)  -> w = (t^2+s^2)^(-1/2)
    welsch:      phi(t) = s^2 (1 - exp(-t^2 / 2 s^2)) -> w = exp(-t^2 / 2 s^2)

    p = 2 recovers constant weights (classical quadratic regularization);
    p = 1 recovers total-variation style 1/|z| reweighting.
    """

    trainable = False

    def __init__(self, family: str, p: float = 1.0, scale: float = 1.0,
                 eps: float = 1e-4):
        if family not in FAMILIES:
            raise ParameterError(f"unknown predictor family {family!r}")
        if eps <= 0:
            raise ParameterError("eps must be positive")
        if family in ("charbonnier", "welsch") and scale <= 0:
            raise ParameterError("scale must be positive")
        self.family = family
        self.p = float(p)
        self.scale = float(scale)
        self.eps = float(eps)

    def weights(self, z: np.ndarray) -> np.ndarray:
        t = np.maximum(np.abs(z), self.eps)
        if self.family == "power":
            return t ** (self.p - 2.0)
        if self.family == "charbonnier":
            return 1.0 / np.sqrt(t * t + self.scale ** 2)
        return np.exp(-t * t / (2.0 * self.scale ** 2))

    def vjp(self, z: np.ndarray, cotangent: np.ndarray):
        """Returns ({}, d_z); the clamped region contributes zero slope."""
        t = np.maximum(np.abs(z), self.eps)
        if self.family == "power":
            dpsi = (self.p - 2.0) * t ** (self.p - 3.0)
        elif self.family == "charbonnier":
            dpsi = -t * (t * t + self.scale ** 2) ** -1.5
        else:
            dpsi = -(t / self.scale ** 2) * np.exp(-t * t / (2.0 * self.scale ** 2))
        slope = np.where(np.abs(z) > self.eps, dpsi * np.sign(z), 0.0)
        return {}, slope * cotangent

    def param_arrays(self, prefix: str) -> dict:
        return {}


def _pad_same(z: np.ndarray, pad: int) -> np.ndarray:
    return np.pad(z, ((0, 0), (pad, pad), (pad, pad)))


class ConvPredictor:
    """Shallow convolutional weight predictor with a nonnegative output.

    A stack of same-padding convolutions on the F feature channels with leaky
    rectifier hidden activations; the final rectifier clamps at zero. At its
    default initialization the output sits near a constant, so an untrained
    predictor behaves like mild quadratic reweighting.
    """

    trainable = True

    def __init__(self, channels: int, ksize: int = 5, depth: int = 3,
                 hidden_slope: float = 0.1, rng: Rng | None = None,
                 final_bias: float = 1.0):
        if ksize % 2 != 1:
            raise ParameterError("predictor kernel size must be odd")
        if depth < 1:
            raise ParameterError("predictor depth must be >= 1")
        self.channels = int(channels)
        self.ksize = int(ksize)
        self.depth = int(depth)
        self.hidden_slope = float(hidden_slope)
        rng = rng or Rng(0)
        fan = channels * ksize * ksize
        self.weights_list = [
            rng.normal((channels, channels, ksize, ksize)) * (0.5 / np.sqrt(fan))
            for _ in range(depth)
        ]
        self.biases = [np.zeros(channels) for _ in range(depth)]
        self.biases[-1][...] = final_bias

    def param_arrays(self, prefix: str) -> dict:
        out = {}
        for i in range(self.depth):
            out[f"{prefix}.w{i}"] = self.weights_list[i]
            out[f"{prefix}.b{i}"] = self.biases[i]
        return out

    def _layer(self, z: np.ndarray, i: int) -> np.ndarray:
        pad = (self.ksize - 1) // 2
        out = bank_apply(self.weights_list[i], _pad_same(z, pad))
        return out + self.biases[i][:, None, None]

    def _forward_trace(self, z: np.ndarray):
        """Pre-activations of every layer, for the backward sweep."""
        if z.ndim != 3 or z.shape[0] != self.channels:
            raise DimensionError(
                f"predictor expects ({self.channels}, h, w), got {z.shape}"
            )
        pres = []
        a = z
        for i in range(self.depth):
            pre = self._layer(a, i)
            pres.append(pre)
            if i < self.depth - 1:
                a = np.where(pre > 0, pre, self.hidden_slope * pre)
            else:
                a = np.maximum(pre, 0.0)
        return pres, a

    def weights(self, z: np.ndarray) -> np.ndarray:
        return self._forward_trace(z)[1]

    def vjp(self, z: np.ndarray, cotangent: np.ndarray):
        pres, _ = self._forward_trace(z)
        # recompute layer inputs from the stored pre-activations
        inputs = [z]
        for i in range(self.depth - 1):
            pre = pres[i]
            inputs.append(np.where(pre > 0, pre, self.hidden_slope * pre))
        pad = (self.ksize - 1) // 2
        grads: dict = {}
        cot = np.where(pres[-1] > 0, cotangent, 0.0)
        for i in range(self.depth - 1, -1, -1):
            if i < self.depth - 1:
                cot = np.where(pres[i] > 0, cot, self.hidden_slope * cot)
            padded = _pad_same(inputs[i], pad)
            grads[f"w{i}"] = bank_filter_vjp(padded, cot)
            grads[f"b{i}"] = cot.sum(axis=(1, 2))
            full = bank_adjoint(self.weights_list[i], cot, padded.shape[1:])
            h, w = inputs[i].shape[1:]
            cot = full[:, pad:pad + h, pad:pad + w]
        return grads, cot


def make_predictor(kind: str, channels: int, *, p: float = 1.0,
                   scale: float = 0.1, eps: float = 1e-4, ksize: int = 5,
                   depth: int = 3, rng: Rng | None = None):
    if kind == "conv":
        return ConvPredictor(channels, ksize=ksize, depth=depth, rng=rng)
    return PotentialPredictor(kind, p=p, scale=scale, eps=eps)


def predict_weights(pred, z: np.ndarray) -> np.ndarray:
    """Nonnegative weights, same shape as the feature tensor."""
    w = pred.weights(z)
    return w


def predictor_vjp(pred, z: np.ndarray, cotangent: np.ndarray):
    """(d_params, d_z) for the predictor; analytic families have no params."""
    return pred.vjp(z, cotangent)
