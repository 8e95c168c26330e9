"""Report figures written next to the CSV outputs.

Figure functions accept an optional ``axis``/``path`` so they can be used
interactively or from the CLI.

.. autosummary::
   :nosignatures:

   plot_history
   plot_metrics
   plot_scene
   plot_scm_stages
"""

import csv
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import numpy as np
import torch
from matplotlib import pyplot as plt

from .objective import MU, tonemap


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def _mu_image(hwc, mu=MU):
    return tonemap(torch.from_numpy(np.clip(hwc, 0, 1)), mu).numpy()


def read_history(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def plot_history(history_path, path):
    """Training loss (log scale) with periodic evaluation PSNR-mu overlaid."""
    rows = read_history(history_path)
    train = [(int(r["step"]), float(r["loss"])) for r in rows if r["loss"]]
    evals = [(int(r["step"]), float(r["eval_psnr_mu"])) for r in rows if r["eval_psnr_mu"]]

    fig, axis = plt.subplots(figsize=(7, 4))
    if train:
        s, l = zip(*train)
        axis.semilogy(s, l, color="C0", lw=1.2, label="multi-scale L1")
    axis.set_xlabel("step")
    axis.set_ylabel("loss")
    if evals:
        twin = axis.twinx()
        s, p = zip(*evals)
        twin.plot(s, p, "o-", color="C3", ms=3, label="eval PSNR-$\\mu$")
        twin.set_ylabel("PSNR-$\\mu$ (dB)")
    finetune = [int(r["step"]) for r in rows if r["phase"] == "finetune"]
    if finetune:
        axis.axvline(min(finetune), color="0.5", ls="--", lw=0.8)
    axis.set_title("training history")
    return _save(fig, path)


def plot_metrics(reports: Sequence, path, title: Optional[str] = None):
    """Per-scene PSNR (left) and SSIM (right) in both domains."""
    names = [r.scene_id for r in reports]
    x = np.arange(len(names))
    fig, (ax_p, ax_s) = plt.subplots(1, 2, figsize=(max(6, 0.6 * len(names) + 4), 3.8))
    ax_p.bar(x - 0.2, [r.psnr_mu for r in reports], 0.4, label="PSNR-$\\mu$")
    ax_p.bar(x + 0.2, [r.psnr_l for r in reports], 0.4, label="PSNR-L")
    ax_p.set_ylabel("dB")
    ax_s.bar(x - 0.2, [r.ssim_mu for r in reports], 0.4, label="SSIM-$\\mu$")
    ax_s.bar(x + 0.2, [r.ssim_l for r in reports], 0.4, label="SSIM-L")
    lo = min(min(r.ssim_mu, r.ssim_l) for r in reports)
    ax_s.set_ylim(max(0.0, lo - 0.05), 1.0)
    for ax in (ax_p, ax_s):
        ax.set_xticks(x)
        ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
        ax.legend(fontsize=8)
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def plot_scene(stack, pred, path, mu=MU):
    """LDR inputs, mu-law prediction, mu-law GT and absolute error."""
    panels = [(f, f"LDR {i + 1} ({b:+g} EV)") for i, (f, b) in enumerate(zip(stack.ldr, stack.biases))]
    panels.append((_mu_image(pred, mu), "prediction ($\\mu$-law)"))
    if stack.gt_hdr is not None:
        panels.append((_mu_image(stack.gt_hdr, mu), "ground truth ($\\mu$-law)"))
    fig, axes = plt.subplots(1, len(panels) + (stack.gt_hdr is not None),
                             figsize=(2.6 * (len(panels) + 1), 2.8))
    for axis, (img, label) in zip(axes, panels):
        axis.imshow(np.clip(img, 0, 1))
        axis.set_title(label, fontsize=8)
        axis.axis("off")
    if stack.gt_hdr is not None:
        err = np.abs(_mu_image(pred, mu) - _mu_image(stack.gt_hdr, mu)).mean(axis=2)
        im = axes[-1].imshow(err, cmap="magma")
        axes[-1].set_title("|error| ($\\mu$-law)", fontsize=8)
        axes[-1].axis("off")
        fig.colorbar(im, ax=axes[-1], fraction=0.046)
    fig.suptitle(stack.scene_id, fontsize=9)
    return _save(fig, path)


@torch.no_grad()
def plot_scm_stages(model, x1, x2, x3, path):
    """Channel-mean maps of the intermediate features of both SCMs."""
    align = model.front
    f_ref = align.reference_feature(x2)
    rows = []
    for label, scm, xi in (("SCM 1", align.scm1, x1), ("SCM 3", align.scm3, x3)):
        _, stages = scm(xi, x2, f_ref, return_stages=True)
        rows.append((label, stages))
    names = list(rows[0][1])
    fig, axes = plt.subplots(len(rows), len(names), figsize=(2.4 * len(names), 2.5 * len(rows)))
    for r, (label, stages) in enumerate(rows):
        for c, name in enumerate(names):
            axis = axes[r, c]
            axis.imshow(stages[name][0].abs().mean(0).numpy(), cmap="viridis")
            axis.set_title(f"{label}: {name}", fontsize=8)
            axis.axis("off")
    return _save(fig, path)
