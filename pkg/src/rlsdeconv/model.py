"""Recurrent restoration driver: a learned initialization solve followed by K
adaptive steps of feature extraction, weight prediction, and a reweighted
least-squares solve, with fixed-point diagnostics per step.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .cg import CgConfig
from .diffops import ParamSet, bank_filter_vjp
from .errors import DimensionError, ParameterError
from .implicit import (
    NnlsLayer,
    WienerLayer,
    nnls_backward,
    nnls_forward,
    wiener_backward,
    wiener_forward,
)
from .linops import BlurKernel, BlurOperator, FilterBank, bank_adjoint
from .predictors import make_predictor
from .tensors import Rng, as_image


@dataclass
class ModelConfig:
    channels: int = 1
    reg_filters: int = 16
    reg_ksize: int = 5
    wiener_filters: int = 16
    wiener_ksize: int = 5
    steps: int = 4
    share_weights: bool = True
    beta_init: float = -1.2
    predictor: str = "welsch"      # welsch | charbonnier | power | conv
    predictor_p: float = 1.0
    predictor_scale: float = 0.1
    predictor_eps: float = 1e-4
    conv_depth: int = 3
    conv_ksize: int = 5
    cg_fwd_iters: int = 250
    cg_bwd_iters: int = 500
    cg_tol: float = 1e-3
    cg_bwd_warm_start: bool = False
    wiener_gain: float = 10.0
    seed: int = 0

    def validate(self):
        if self.steps < 0:
            raise ParameterError("steps must be >= 0")
        if self.reg_ksize % 2 != 1 or self.wiener_ksize % 2 != 1:
            raise ParameterError("filter sizes must be odd")
        if self.predictor not in ("welsch", "charbonnier", "power", "conv"):
            raise ParameterError(f"unknown predictor {self.predictor!r}")
        return self


@dataclass
class StepTrace:
    """Per-step outputs and diagnostics; entry 0 is the initialization step."""

    outputs: list = field(default_factory=list)
    tol: list = field(default_factory=list)
    cg_iters: list = field(default_factory=list)
    converged: list = field(default_factory=list)
    psnr: list = field(default_factory=list)

    def append(self, x, x_ref, iters, converged, psnr_value=None):
        num = float(np.linalg.norm(x - x_ref))
        den = max(float(np.linalg.norm(x)), 1e-300)
        self.outputs.append(x)
        self.tol.append(num / den)
        self.cg_iters.append(int(iters))
        self.converged.append(bool(converged))
        if psnr_value is not None:
            self.psnr.append(float(psnr_value))

    def total_cg_iterations(self) -> int:
        return int(sum(self.cg_iters))

    def to_json(self) -> str:
        return json.dumps({
            "steps": len(self.outputs),
            "tol": self.tol,
            "cg_iters": self.cg_iters,
            "converged": self.converged,
            "psnr": self.psnr if self.psnr else None,
        })


def _directional_stencils(k: int) -> list:
    """First and second difference stencils embedded in a k x k support."""
    c = k // 2
    out = []
    for taps in (
        [((0, 0), -1.0), ((0, 1), 1.0)],
        [((0, 0), -1.0), ((1, 0), 1.0)],
        [((0, 0), -1.0), ((1, 1), 1.0)],
        [((0, 1), -1.0), ((1, 0), 1.0)],
        [((0, -1), 1.0), ((0, 0), -2.0), ((0, 1), 1.0)],
        [((-1, 0), 1.0), ((0, 0), -2.0), ((1, 0), 1.0)],
    ):
        st = np.zeros((k, k))
        for (di, dj), v in taps:
            st[c + di, c + dj] = v
        out.append(st)
    return out


def init_filter_bank(n_filters: int, channels: int, ksize: int, rng: Rng,
                     gain: float = 1.0) -> np.ndarray:
    """Derivative-like leading filters plus zero-mean random completions."""
    bank = np.zeros((n_filters, channels, ksize, ksize))
    stencils = _directional_stencils(ksize)
    for f in range(n_filters):
        if f < len(stencils):
            bank[f, f % channels] = stencils[f]
        else:
            flt = rng.normal((channels, ksize, ksize))
            flt -= flt.mean(axis=(1, 2), keepdims=True)
            flt /= max(float(np.linalg.norm(flt)), 1e-12)
            bank[f] = 0.5 * flt
    return gain * bank


class Deconvolver:
    """Recurrent reweighted least-squares restorer.

    With shared weights (the default) the same filter bank, predictor, and
    step scalar drive every adaptive step, which also allows running more
    steps at inference than were used in training.
    """

    def __init__(self, config: ModelConfig):
        self.config = config.validate()
        rng = Rng(config.seed)
        c = config
        params = {}
        params["wiener.filters"] = init_filter_bank(
            c.wiener_filters, c.channels, c.wiener_ksize, rng.child(0),
            gain=c.wiener_gain,
        )
        self.predictors = []
        n_groups = 1 if c.share_weights else max(c.steps, 1)
        for s in range(n_groups):
            pfx = "step" if c.share_weights else f"step{s}"
            params[f"{pfx}.reg.filters"] = init_filter_bank(
                c.reg_filters, c.channels, c.reg_ksize, rng.child(10 + s))
            params[f"{pfx}.beta"] = np.asarray(float(c.beta_init))
            pred = make_predictor(
                c.predictor, c.reg_filters, p=c.predictor_p,
                scale=c.predictor_scale, eps=c.predictor_eps,
                ksize=c.conv_ksize, depth=c.conv_depth, rng=rng.child(100 + s),
            )
            self.predictors.append(pred)
            params.update(pred.param_arrays(f"{pfx}.pred"))
        self.params = ParamSet(params)
        self._rebind()

    def _rebind(self):
        """Point layers at the canonical parameter arrays."""
        c = self.config
        fwd = CgConfig(max_iters=c.cg_fwd_iters, rel_tol=c.cg_tol)
        bwd = CgConfig(max_iters=c.cg_bwd_iters, rel_tol=c.cg_tol)
        self.wiener = WienerLayer(
            filters=self.params["wiener.filters"],
            cg=fwd, cg_backward=bwd, backward_warm_start=c.cg_bwd_warm_start,
        )
        self.step_layers = []
        for s in range(max(c.steps, 1)):
            pfx = "step" if c.share_weights else f"step{min(s, self._n_groups() - 1)}"
            self.step_layers.append(NnlsLayer(
                filters=self.params[f"{pfx}.reg.filters"],
                beta=self.params[f"{pfx}.beta"],
                cg_forward=fwd, cg_backward=bwd,
                backward_warm_start=c.cg_bwd_warm_start,
            ))

    def _n_groups(self) -> int:
        return 1 if self.config.share_weights else max(self.config.steps, 1)

    def _group(self, step_index: int) -> int:
        return 0 if self.config.share_weights else min(step_index, self._n_groups() - 1)

    def _prefix(self, step_index: int) -> str:
        return "step" if self.config.share_weights else f"step{self._group(step_index)}"

    def step_layer(self, step_index: int) -> NnlsLayer:
        return self.step_layers[min(step_index, len(self.step_layers) - 1)]

    def predictor(self, step_index: int):
        return self.predictors[self._group(step_index)]

    def latent_shape(self, y: np.ndarray, kernel: BlurKernel):
        C, h, w = y.shape
        kh, kw = kernel.shape
        return (C, h + kh - 1, w + kw - 1)

    def adaptive_step(self, blur: BlurOperator, y: np.ndarray, x: np.ndarray,
                      sigma2: float, step_index: int,
                      layer: NnlsLayer | None = None):
        """Features -> weights -> reweighted solve; returns (x_next, saved, report)."""
        if layer is None:
            layer = self.step_layer(step_index)
        reg = FilterBank(layer.filters, blur.input_shape)
        z = reg.apply(x)
        weights = self.predictor(step_index).weights(z)
        x_next, saved, report = nnls_forward(layer, blur, y, x, weights, sigma2)
        saved.features = z
        return x_next, saved, report

    def restore(self, y, kernel: BlurKernel, sigma: float,
                steps_override: int | None = None, x_true=None,
                keep_saved: bool = False, cg_override: CgConfig | None = None):
        """Run the full pipeline on one observation.

        Returns (x, StepTrace); with keep_saved=True returns
        (x, StepTrace, saved_list) for a subsequent backward sweep.
        """
        if sigma <= 0:
            raise ParameterError(f"sigma must be positive, got {sigma}")
        y = as_image(y)
        squeeze = y.ndim == 2
        if squeeze:
            y = y[None]
        if y.shape[0] != self.config.channels:
            raise DimensionError(
                f"model expects {self.config.channels} channels, got {y.shape[0]}"
            )
        sigma2 = float(sigma) ** 2
        blur = BlurOperator(kernel, self.latent_shape(y, kernel))
        n_steps = self.config.steps if steps_override is None else int(steps_override)

        wiener = self.wiener
        if cg_override is not None:
            wiener = WienerLayer(filters=wiener.filters, cg=cg_override,
                                 cg_backward=wiener.cg_backward)
        trace = StepTrace()
        saved_list = []
        b0 = blur.adjoint_apply(y)
        x, saved, report = wiener_forward(wiener, blur, y, sigma2)
        trace.append(x, b0, report.iterations_used, report.converged,
                     _psnr_or_none(x, x_true))
        saved_list.append(saved)
        for k in range(n_steps):
            layer = None
            if cg_override is not None:
                base = self.step_layer(k)
                layer = NnlsLayer(filters=base.filters, beta=base.beta,
                                  cg_forward=cg_override,
                                  cg_backward=base.cg_backward)
            x_next, saved, report = self.adaptive_step(blur, y, x, sigma2, k,
                                                       layer=layer)
            trace.append(x_next, x, report.iterations_used, report.converged,
                         _psnr_or_none(x_next, x_true))
            saved_list.append(saved)
            x = x_next
        if squeeze:
            out = x[0]
        else:
            out = x
        if keep_saved:
            return out, trace, saved_list
        return out, trace

    def backprop(self, saved_list: list, cotangents: list) -> None:
        """Accumulate parameter gradients for one restored sample.

        `cotangents[k]` is the loss gradient at the k-th trace output (entry 0
        is the initialization step). Chains d_x_prev and the predictor /
        feature-extraction VJPs from the last step back to the first.
        """
        if len(cotangents) != len(saved_list):
            raise DimensionError("one cotangent per step output required")
        cot = np.zeros_like(saved_list[-1].x_star)
        g_prev = None
        for k in range(len(saved_list) - 1, 0, -1):
            saved = saved_list[k]
            rho = cot + cotangents[k]
            grads, d_x_prev, d_weights, g_prev, _ = nnls_backward(
                saved, rho, g0=g_prev)
            step_index = k - 1
            pfx = self._prefix(step_index)
            self.params.add_grad(f"{pfx}.reg.filters", grads["filters"])
            self.params.add_grad(f"{pfx}.beta", grads["beta"])
            pred = self.predictor(step_index)
            d_pred, d_z = pred.vjp(saved.features, d_weights)
            for name, val in d_pred.items():
                self.params.add_grad(f"{pfx}.pred.{name}", val)
            layer = self.step_layer(step_index)
            self.params.add_grad(
                f"{pfx}.reg.filters", bank_filter_vjp(saved.x_prev, d_z))
            cot = d_x_prev + bank_adjoint(layer.filters, d_z,
                                          saved.blur.input_shape[1:])
        rho = cot + cotangents[0]
        grads, _ = wiener_backward(saved_list[0], rho, g0=g_prev)
        self.params.add_grad("wiener.filters", grads["filters"])


def _psnr_or_none(x, x_true):
    if x_true is None:
        return None
    from .metrics import psnr
    ref = as_image(x_true)
    if ref.ndim == 2:
        ref = ref[None]
    return psnr(x, ref, peak=1.0)


def convergence_study(model: Deconvolver, dataset: list, step_counts,
                      cg_caps) -> list:
    """Mean restoration quality and solver effort per (steps, cg_cap) cell.

    `dataset` holds (x_gt, y, kernel, sigma) tuples. Step counts are total
    steps including the initialization solve, so steps=1 is the Wiener-only
    result. Returns rows of dicts with keys steps, cg_cap, psnr, mean_cg_iters.
    """
    step_counts = sorted(int(s) for s in step_counts)
    if step_counts[0] < 1:
        raise ParameterError("step counts must be >= 1")
    max_steps = step_counts[-1]
    rows = []
    for cap in cg_caps:
        override = CgConfig(max_iters=int(cap), rel_tol=model.config.cg_tol)
        per_image = []
        for x_gt, y, kernel, sigma in dataset:
            gt = as_image(x_gt)
            if gt.ndim == 2:
                gt = gt[None]
            _, trace = model.restore(y, kernel, sigma,
                                     steps_override=max_steps - 1,
                                     x_true=gt, cg_override=override)
            per_image.append(trace)
        for s in step_counts:
            psnrs = [t.psnr[s - 1] for t in per_image]
            iters = [sum(t.cg_iters[:s]) / s for t in per_image]
            rows.append({
                "steps": s,
                "cg_cap": int(cap),
                "psnr": float(np.mean(psnrs)),
                "mean_cg_iters": float(np.mean(iters)),
            })
    return rows


def write_convergence_csv(rows: list, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("steps,cg_cap,psnr,mean_cg_iters\n")
        for r in rows:
            fh.write(f"{r['steps']},{r['cg_cap']},{r['psnr']:.6f},"
                     f"{r['mean_cg_iters']:.3f}\n")
