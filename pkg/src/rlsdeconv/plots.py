"""Matplotlib renderings of the diagnostic exports.

Every report path writes the figure next to its delimited output (CSV or
JSON lines), so runs can be inspected without re-loading anything.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def save_convergence_figure(rows: list, path) -> None:
    """PSNR against step count, one curve per CG iteration cap."""
    caps = sorted({r["cg_cap"] for r in rows})
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.5, 3.6))
    for cap in caps:
        sub = sorted((r for r in rows if r["cg_cap"] == cap),
                     key=lambda r: r["steps"])
        steps = [r["steps"] for r in sub]
        ax1.plot(steps, [r["psnr"] for r in sub], marker="o", label=f"cap {cap}")
        ax2.plot(steps, [r["mean_cg_iters"] for r in sub], marker="s",
                 label=f"cap {cap}")
    ax1.set_xlabel("steps")
    ax1.set_ylabel("mean PSNR (dB)")
    ax1.legend(fontsize=8)
    ax2.set_xlabel("steps")
    ax2.set_ylabel("mean CG iterations per step")
    ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_trace_figure(trace, path) -> None:
    """Per-step relative change (log scale) and PSNR when available."""
    steps = list(range(len(trace.tol)))
    fig, ax1 = plt.subplots(figsize=(6.0, 3.6))
    ax1.semilogy(steps[1:], trace.tol[1:], marker="o", color="tab:blue",
                 label="relative step change")
    ax1.set_xlabel("step")
    ax1.set_ylabel("relative change")
    if trace.psnr:
        ax2 = ax1.twinx()
        ax2.plot(steps, trace.psnr, marker="s", color="tab:orange",
                 label="PSNR")
        ax2.set_ylabel("PSNR (dB)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_training_figure(rows: list, path) -> None:
    """Loss and held-out PSNR per epoch."""
    epochs = [r["epoch"] for r in rows]
    fig, ax1 = plt.subplots(figsize=(6.0, 3.6))
    ax1.plot(epochs, [r["train_loss"] for r in rows], marker="o",
             color="tab:blue", label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss")
    ax2 = ax1.twinx()
    ax2.plot(epochs, [r["val_psnr"] for r in rows], marker="s",
             color="tab:orange", label="val PSNR")
    ax2.set_ylabel("held-out PSNR (dB)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
