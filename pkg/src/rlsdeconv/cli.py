"""Command-line entry points.

Exit codes: 0 on success, 1 on user error (bad flags, missing files,
malformed inputs), 2 on numerical failure.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from .cg import CgConfig
from .errors import NumericalBreakdownError, RlsError
from .imageio import load_image, save_image
from .linops import load_kernel, save_kernel
from .metrics import estimate_sigma_wmad, interior_psnr, psnr
from .model import convergence_study, write_convergence_csv
from .synth import DataConfig, generate_corpus, make_sample, synth_kernel
from .tensors import Rng
from .training import (
    TrainConfig,
    evaluate_heldout,
    load_model,
    train,
)

GRAD_TOL = 1e-4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rlsdeconv",
                     description="Matrix-free recurrent least-squares "
                                 "non-blind deconvolution")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("deblur", help="restore one image", parents=[])
    p.add_argument("--input", required=True)
    p.add_argument("--kernel", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--sigma", type=float, default=None,
                   help="noise std in [0,1] units; omitted: wavelet estimate")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--cg-max", type=int, default=None)
    p.add_argument("--cg-tol", type=float, default=None)
    p.add_argument("--trace", default=None, help="write step trace JSON here")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="run the training loop")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("synthesize", help="generate corpus or degraded pairs")
    p.add_argument("--out", required=True)
    p.add_argument("--corpus", type=int, default=None,
                   help="generate N procedural source images")
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--input", default=None, help="clean image to degrade")
    p.add_argument("--sigma", type=float, default=0.02)
    p.add_argument("--kernel-size", type=int, default=17)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("grad-check", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("bench", help="time the numerical kernels")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("convergence", help="step-count / CG-cap study")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source", required=True,
                   help="directory of clean source images")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--images", type=int, default=4)
    p.add_argument("--steps", default="1,2,3,5,10,20")
    p.add_argument("--caps", default="25,75,250")
    p.add_argument("--crop", type=int, default=64)
    p.add_argument("--kernel-size", type=int, default=17)
    p.add_argument("--sigma", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    return parser


def cmd_deblur(args) -> int:
    for path, label in ((args.input, "input image"),
                        (args.kernel, "kernel file"),
                        (args.checkpoint, "checkpoint")):
        if not os.path.exists(path):
            raise RlsError(f"{label} not found: {path}")
    y = load_image(args.input)
    kernel = load_kernel(args.kernel)
    model = load_model(args.checkpoint)
    sigma = args.sigma
    if sigma is None:
        sigma = estimate_sigma_wmad(y)
        print(f"sigma not given; wavelet estimate {sigma:.5f}")
    if sigma <= 0:
        raise RlsError("estimated sigma is zero; pass --sigma explicitly")
    if args.cg_tol is not None:
        model.config.cg_tol = args.cg_tol
        model._rebind()
    override = None
    if args.cg_max is not None:
        override = CgConfig(max_iters=args.cg_max, rel_tol=model.config.cg_tol)
    x, trace = model.restore(y, kernel, sigma, steps_override=args.steps,
                             cg_override=override)
    bitdepth = 16 if x.ndim == 2 else 8
    save_image(args.output, x, bitdepth=bitdepth)
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            fh.write(trace.to_json() + "\n")
    print(json.dumps({
        "output": args.output,
        "steps": len(trace.outputs),
        "total_cg_iterations": trace.total_cg_iterations(),
        "final_tol": trace.tol[-1],
    }))
    return 0


def cmd_train(args) -> int:
    from .configfile import load_configs
    from .model import Deconvolver
    from .plots import save_training_figure

    if not os.path.exists(args.config):
        raise RlsError(f"config file not found: {args.config}")
    model_cfg, data_cfg, train_cfg = load_configs(args.config)
    model = Deconvolver(model_cfg)
    log_fn = None if args.quiet else lambda msg: print(msg, flush=True)
    path, rows = train(model, data_cfg, train_cfg, args.out,
                       resume=args.resume, log_fn=log_fn)
    if rows:
        save_training_figure(rows, os.path.join(args.out, "training_curves.png"))
    print(json.dumps({"final_checkpoint": path, "epochs": len(rows)}))
    return 0


def cmd_synthesize(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    rng = Rng(args.seed)
    if args.corpus is not None:
        paths = generate_corpus(args.out, args.corpus, args.seed, args.size)
        print(json.dumps({"generated": len(paths), "directory": args.out}))
        return 0
    if args.input is None:
        raise RlsError("need --input (or --corpus N)")
    if not os.path.exists(args.input):
        raise RlsError(f"input image not found: {args.input}")
    source = load_image(args.input)
    kernel = synth_kernel(rng, (args.kernel_size, args.kernel_size))
    from .synth import degrade

    y = degrade(source, kernel, args.sigma, rng.child(1))
    save_image(os.path.join(args.out, "gt.png"), source,
               bitdepth=16 if source.ndim == 2 else 8)
    save_image(os.path.join(args.out, "y.png"), y,
               bitdepth=16 if y.ndim == 2 else 8)
    save_kernel(kernel, os.path.join(args.out, "kernel.txt"))
    meta = {"sigma": args.sigma, "kernel_size": args.kernel_size,
            "seed": args.seed,
            "input_psnr": interior_psnr(
                y if y.ndim == 3 else y[None],
                source if source.ndim == 3 else source[None],
                y.shape)}
    with open(os.path.join(args.out, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
    print(json.dumps(meta))
    return 0


def cmd_grad_check(args) -> int:
    from .gradcheck import run_suite

    results = run_suite(args.seed)
    worst = 0.0
    for name, err in sorted(results.items()):
        print(f"{name:32s} rel err {err:.3e}")
        worst = max(worst, err)
    ok = worst <= GRAD_TOL
    print(f"worst {worst:.3e} ({'OK' if ok else 'FAIL'} at {GRAD_TOL:.0e})")
    return 0 if ok else 2


def cmd_bench(args) -> int:
    from .linops import BlurOperator, FilterBank, SystemOperator, normalize_kernel
    from .cg import cg_solve

    rng = Rng(args.seed)
    img = rng.normal((1, 64, 64))
    kernel = synth_kernel(rng, (13, 13))
    blur = BlurOperator(kernel, img.shape)
    filters = rng.normal((16, 1, 5, 5)) * 0.2
    reg = FilterBank(filters, img.shape)
    results = {}

    t0 = time.perf_counter()
    for _ in range(50):
        blur.adjoint_apply(blur.apply(img))
    results["blur_roundtrip_ms"] = (time.perf_counter() - t0) / 50 * 1e3

    t0 = time.perf_counter()
    for _ in range(50):
        reg.adjoint_apply(reg.apply(img))
    results["bank_roundtrip_ms"] = (time.perf_counter() - t0) / 50 * 1e3

    weights = np.abs(rng.normal(reg.output_shape))
    system = SystemOperator(blur, reg, weights, 0.02 ** 2, 0.3)
    rhs = blur.adjoint_apply(blur.apply(img)) / 0.02 ** 2
    t0 = time.perf_counter()
    _, report = cg_solve(system, rhs, cfg=CgConfig(max_iters=100, rel_tol=1e-3))
    results["cg_solve_s"] = time.perf_counter() - t0
    results["cg_iterations"] = report.iterations_used
    print(json.dumps(results))
    return 0


def cmd_convergence(args) -> int:
    from .plots import save_convergence_figure

    if not os.path.exists(args.checkpoint):
        raise RlsError(f"checkpoint not found: {args.checkpoint}")
    if not os.path.isdir(args.source):
        raise RlsError(f"source directory not found: {args.source}")
    model = load_model(args.checkpoint)
    names = sorted(n for n in os.listdir(args.source)
                   if n.lower().endswith(".png"))
    if not names:
        raise RlsError(f"no PNG images in {args.source}")
    data_cfg = DataConfig(crop=args.crop, kernel_min=args.kernel_size,
                          kernel_max=args.kernel_size, noise_lo=args.sigma,
                          noise_hi=args.sigma, seed=args.seed)
    rng = Rng(args.seed)
    dataset = []
    for i in range(args.images):
        source = load_image(os.path.join(args.source, names[i % len(names)]))
        s = make_sample(rng.child(i), source, data_cfg)
        dataset.append((s.x_gt, s.y, s.kernel, s.sigma))
    steps = [int(t) for t in args.steps.split(",")]
    caps = [int(t) for t in args.caps.split(",")]
    rows = convergence_study(model, dataset, steps, caps)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "convergence.csv")
    write_convergence_csv(rows, csv_path)
    save_convergence_figure(rows, os.path.join(args.out, "convergence.png"))
    print(json.dumps({"rows": len(rows), "csv": csv_path}))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "deblur": cmd_deblur,
        "train": cmd_train,
        "synthesize": cmd_synthesize,
        "grad-check": cmd_grad_check,
        "bench": cmd_bench,
        "convergence": cmd_convergence,
    }
    try:
        return handlers[args.command](args)
    except NumericalBreakdownError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (RlsError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
