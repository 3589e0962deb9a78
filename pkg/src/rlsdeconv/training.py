"""Desk-scale end-to-end training: sum of per-step MSE losses back-propagated
through the implicit layers, Adam with linear warmup and per-epoch decay, and
bit-exact checkpoint/resume.

At every epoch boundary the live state is passed through the checkpoint codec,
so an interrupted run resumed from disk continues on exactly the trajectory of
an uninterrupted one.
"""

import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from .checkpoint import (
    decode_f64,
    decode_u64,
    encode_f64,
    encode_u64,
    load_checkpoint,
    save_checkpoint,
)
from .diffops import ParamSet
from .errors import CheckpointError, DimensionError, ParameterError
from .imageio import load_image
from .metrics import interior_psnr
from .model import Deconvolver, ModelConfig
from .synth import DataConfig, Sample, make_sample
from .tensors import Rng

PREDICTOR_IDS = {"welsch": 0, "charbonnier": 1, "power": 2, "conv": 3}
PREDICTOR_NAMES = {v: k for k, v in PREDICTOR_IDS.items()}


@dataclass
class TrainConfig:
    batch: int = 4
    epochs: int = 5
    batches_per_epoch: int = 200
    lr: float = 2e-4
    decay: float = 0.98
    warmup_epochs: int = 2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    val_samples: int = 12
    val_sources: int = 6
    normalize_filters: bool = False

    def validate(self):
        for name in ("batch", "epochs", "batches_per_epoch"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be positive")
        if self.lr <= 0 or not (0 < self.decay <= 1):
            raise ParameterError("bad learning-rate schedule")
        return self


def loss_sum_mse(outputs: list, x_gt: np.ndarray):
    """Sum over steps of mean squared error, plus per-step cotangents."""
    total = 0.0
    cots = []
    n = float(x_gt.size)
    for x in outputs:
        if x.shape != x_gt.shape:
            raise DimensionError(
                f"step output {x.shape} does not match target {x_gt.shape}"
            )
        diff = x - x_gt
        total += float(np.vdot(diff, diff)) / n
        cots.append(2.0 * diff / n)
    return total, cots


class Adam:
    """Standard Adam with bias correction; parameters update in place."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def ensure_state(self, params: dict) -> None:
        for k, p in params.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.ensure_state(params)
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            p -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(params: dict, grads: dict, opt: Adam, lr: float) -> None:
    opt.step(params, grads, lr)


def effective_lr(cfg: TrainConfig, epoch: int, global_batch: int) -> float:
    """Linear warmup over the first warmup epochs, then 0.98^epoch decay."""
    warm_batches = max(cfg.warmup_epochs * cfg.batches_per_epoch, 1)
    ramp = min(1.0, (global_batch + 1) / warm_batches)
    return cfg.lr * ramp * (cfg.decay ** epoch)


def config_hash(model_cfg: ModelConfig, data_cfg: DataConfig,
                train_cfg: TrainConfig) -> int:
    blob = json.dumps(
        {"model": asdict(model_cfg), "data": asdict(data_cfg),
         "train": asdict(train_cfg)},
        sort_keys=True,
    ).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


_CFG_FIELDS = [
    "channels", "reg_filters", "reg_ksize", "wiener_filters", "wiener_ksize",
    "steps", "share_weights", "beta_init", "predictor_p", "predictor_scale",
    "predictor_eps", "conv_depth", "conv_ksize", "cg_fwd_iters",
    "cg_bwd_iters", "cg_tol", "cg_bwd_warm_start", "wiener_gain", "seed",
]


def model_state_tensors(model: Deconvolver, opt: Adam | None = None,
                        epoch: int = 0, cfg_hash: int = 0) -> dict:
    """Collect parameters, optimizer moments, and self-describing metadata."""
    tensors = dict(model.params.params)
    if opt is not None:
        opt.ensure_state(model.params.params)
        for k in model.params.params:
            tensors[f"adam.m.{k}"] = opt.m[k]
            tensors[f"adam.v.{k}"] = opt.v[k]
        tensors["meta.adam_t"] = encode_u64(opt.t)
    tensors["meta.epoch"] = encode_u64(epoch)
    tensors["meta.config_hash"] = encode_u64(cfg_hash)
    tensors["meta.rng_epoch"] = encode_u64(epoch)
    c = model.config
    for name in _CFG_FIELDS:
        tensors[f"meta.cfg.{name}"] = encode_f64(float(getattr(c, name)))
    tensors["meta.cfg.predictor"] = encode_u64(PREDICTOR_IDS[c.predictor])
    return tensors


def config_from_tensors(tensors: dict) -> ModelConfig:
    kwargs = {}
    for name in _CFG_FIELDS:
        key = f"meta.cfg.{name}"
        if key not in tensors:
            raise CheckpointError(f"checkpoint missing {key}")
        value = decode_f64(tensors[key])
        kwargs[name] = value
    for int_field in ("channels", "reg_filters", "reg_ksize", "wiener_filters",
                      "wiener_ksize", "steps", "conv_depth", "conv_ksize",
                      "cg_fwd_iters", "cg_bwd_iters", "seed"):
        kwargs[int_field] = int(kwargs[int_field])
    for bool_field in ("share_weights", "cg_bwd_warm_start"):
        kwargs[bool_field] = bool(kwargs[bool_field])
    kwargs["predictor"] = PREDICTOR_NAMES[decode_u64(tensors["meta.cfg.predictor"])]
    return ModelConfig(**kwargs)


def load_model_state(model: Deconvolver, tensors: dict,
                     opt: Adam | None = None) -> int:
    """Copy checkpoint values into the live arrays; returns the stored epoch."""
    for k, arr in model.params.params.items():
        if k not in tensors:
            raise CheckpointError(f"checkpoint missing parameter {k!r}")
        if tensors[k].shape != arr.shape:
            raise CheckpointError(
                f"parameter {k!r} has shape {tensors[k].shape}, "
                f"expected {arr.shape}"
            )
        arr[...] = tensors[k]
    if opt is not None:
        opt.ensure_state(model.params.params)
        for k in model.params.params:
            opt.m[k][...] = tensors.get(f"adam.m.{k}", opt.m[k])
            opt.v[k][...] = tensors.get(f"adam.v.{k}", opt.v[k])
        if "meta.adam_t" in tensors:
            opt.t = decode_u64(tensors["meta.adam_t"])
    return decode_u64(tensors.get("meta.epoch", encode_u64(0)))


def save_model(model: Deconvolver, path, opt: Adam | None = None,
               epoch: int = 0, cfg_hash: int = 0) -> None:
    save_checkpoint(path, model_state_tensors(model, opt, epoch, cfg_hash))


def load_model(path) -> Deconvolver:
    """Rebuild a model for inference from a self-describing checkpoint."""
    tensors = load_checkpoint(path)
    model = Deconvolver(config_from_tensors(tensors))
    load_model_state(model, tensors)
    return model


def list_sources(source_dir) -> list:
    names = sorted(
        n for n in os.listdir(source_dir)
        if n.lower().endswith((".png", ".tif", ".tiff"))
    )
    if not names:
        raise ParameterError(f"no source images found in {source_dir}")
    return [os.path.join(source_dir, n) for n in names]


def split_sources(paths: list, val_sources: int, seed: int):
    order = list(paths)
    Rng(seed, (7,)).shuffle(order)
    val = order[:val_sources]
    train = order[val_sources:] or order
    return train, val


def build_validation_set(val_paths: list, data_cfg: DataConfig,
                         count: int, seed: int) -> list:
    rng = Rng(seed, (11,))
    samples = []
    for i in range(count):
        source = load_image(val_paths[i % len(val_paths)])
        samples.append(make_sample(rng.child(i), source, data_cfg))
    return samples


def evaluate_heldout(model: Deconvolver, samples: list):
    """Mean interior PSNR of restorations and of the raw degraded inputs."""
    restored_scores, input_scores = [], []
    for s in samples:
        x, _ = model.restore(s.y, s.kernel, s.sigma)
        x3 = x if x.ndim == 3 else x[None]
        restored_scores.append(interior_psnr(x3, s.x_gt, s.y.shape))
        input_scores.append(interior_psnr(s.y, s.x_gt, s.y.shape))
    return float(np.mean(restored_scores)), float(np.mean(input_scores))


def _normalize_reg_filters(params: ParamSet) -> None:
    for name, arr in params.params.items():
        if name.endswith("reg.filters") and arr.ndim == 4:
            for f in range(arr.shape[0]):
                norm = float(np.linalg.norm(arr[f]))
                if norm > 1e-12:
                    arr[f] /= norm


def train_batch(model: Deconvolver, samples: list):
    """Accumulate gradients for a batch; returns the mean per-sample loss."""
    model.params.zero_grads()
    total = 0.0
    for s in samples:
        _, trace, saved = model.restore(s.y, s.kernel, s.sigma, keep_saved=True)
        loss, cots = loss_sum_mse(trace.outputs, s.x_gt)
        total += loss
        model.backprop(saved, cots)
    model.params.scale_grads(1.0 / len(samples))
    return total / len(samples)


def train(model: Deconvolver, data_cfg: DataConfig, train_cfg: TrainConfig,
          checkpoint_dir, resume: bool = False, log_fn=None):
    """Run the training loop; returns (final_checkpoint_path, log_rows).

    Checkpoints land in `checkpoint_dir` as epoch_NNNN.ckpt with a JSON-lines
    metrics log alongside. Batches with non-finite gradients are skipped with
    a diagnostic. `resume=True` continues from the newest checkpoint whose
    config hash matches.
    """
    data_cfg.validate()
    train_cfg.validate()
    os.makedirs(checkpoint_dir, exist_ok=True)
    opt = Adam(train_cfg.beta1, train_cfg.beta2, train_cfg.eps)
    opt.ensure_state(model.params.params)
    chash = config_hash(model.config, data_cfg, train_cfg)
    log_path = os.path.join(checkpoint_dir, "metrics.jsonl")

    start_epoch = 0
    if resume:
        previous = sorted(
            n for n in os.listdir(checkpoint_dir)
            if n.startswith("epoch_") and n.endswith(".ckpt")
        )
        if previous:
            tensors = load_checkpoint(os.path.join(checkpoint_dir, previous[-1]))
            stored = decode_u64(tensors["meta.config_hash"])
            if stored != chash:
                raise CheckpointError(
                    "checkpoint was produced by a different configuration"
                )
            start_epoch = load_model_state(model, tensors, opt)

    sources = list_sources(data_cfg.source_dir)
    train_paths, val_paths = split_sources(sources, train_cfg.val_sources,
                                           data_cfg.seed)
    val_set = build_validation_set(val_paths, data_cfg, train_cfg.val_samples,
                                   data_cfg.seed)

    log_rows = []
    final_path = None
    for epoch in range(start_epoch, train_cfg.epochs):
        t0 = time.time()
        epoch_rng = Rng(data_cfg.seed, (1, epoch))
        losses = []
        skipped = 0
        for b in range(train_cfg.batches_per_epoch):
            batch_rng = epoch_rng.child(b)
            samples = []
            for i in range(train_cfg.batch):
                src_rng = batch_rng.child(i)
                path = train_paths[int(src_rng.integers(0, len(train_paths)))]
                samples.append(make_sample(src_rng, load_image(path), data_cfg))
            loss = train_batch(model, samples)
            if not (np.isfinite(loss) and model.params.grads_finite()):
                skipped += 1
                if log_fn:
                    log_fn(f"epoch {epoch} batch {b}: non-finite gradient, "
                           f"batch aborted")
                continue
            lr = effective_lr(train_cfg, epoch,
                              epoch * train_cfg.batches_per_epoch + b)
            opt.step(model.params.params, model.params.grads, lr)
            if train_cfg.normalize_filters:
                _normalize_reg_filters(model.params)
            losses.append(loss)

        val_psnr, _ = evaluate_heldout(model, val_set)
        row = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)) if losses else float("nan"),
            "val_psnr": val_psnr,
            "lr": effective_lr(train_cfg, epoch,
                               (epoch + 1) * train_cfg.batches_per_epoch - 1),
            "wall_time_s": time.time() - t0,
            "skipped_batches": skipped,
        }
        log_rows.append(row)
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(row) + "\n")
        if log_fn:
            log_fn(f"epoch {epoch}: loss {row['train_loss']:.5f} "
                   f"val {val_psnr:.2f} dB ({row['wall_time_s']:.0f} s)")

        final_path = os.path.join(checkpoint_dir, f"epoch_{epoch + 1:04d}.ckpt")
        save_model(model, final_path, opt, epoch + 1, chash)
        # round-trip through the codec so resumed runs follow this trajectory
        load_model_state(model, load_checkpoint(final_path), opt)
    return final_path, log_rows
