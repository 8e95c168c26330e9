"""Tonemapping, training loss and image-quality metrics."""

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import torch
import torch.nn.functional as F

from .blocks import bilinear_resample
from .errors import ConfigError, RangeError, ShapeError

MU = 5000.0
PSNR_CAP = 99.0
RANGE_SLACK = 1e-3


def tonemap(h, mu=MU):
    """mu-law range compression ``log(1 + mu*h) / log(1 + mu)``.

    Inputs are clamped to [0, 1]; anything further than 1e-3 outside that
    range is rejected.
    """
    if mu <= 0:
        raise ConfigError(f"mu must be positive, got {mu}")
    if isinstance(h, np.ndarray):
        h = torch.from_numpy(h)
    lo, hi = torch.aminmax(h.detach()) if h.numel() else (h.new_zeros(()), h.new_zeros(()))
    if lo < -RANGE_SLACK or hi > 1 + RANGE_SLACK:
        raise RangeError(f"tonemap input outside [0, 1]: min={float(lo):g} max={float(hi):g}")
    h = h.clamp(0.0, 1.0)
    return torch.log1p(mu * h) / math.log1p(mu)


def gt_pyramid(gt, n_scales):
    """Bilinear half-size cascade matching the model's input pyramid."""
    levels = [gt]
    for _ in range(n_scales - 1):
        levels.append(bilinear_resample(levels[-1], 0.5))
    return levels


@dataclass
class LossReport:
    total: torch.Tensor
    per_scale: List[float]
    per_stage: Optional[List[float]] = None

    @property
    def value(self):
        return float(self.total.detach())


def weighted_total(per_scale, lambdas):
    if len(per_scale) != len(lambdas):
        raise ShapeError(f"{len(per_scale)} scale terms but {len(lambdas)} weights")
    return sum(w * t for w, t in zip(lambdas, per_scale))


def multiscale_l1(preds, gt, lambdas, mu=MU, stage1=None):
    """Weighted sum over scales of mean |tonemap(pred) - tonemap(gt)|.

    ``preds`` is finest-first.  Stage-1 predictions, when given, add their
    own terms with the same weights.
    """
    if len(preds) != len(lambdas):
        raise ShapeError(f"{len(preds)} predicted scales but {len(lambdas)} loss weights")
    targets = gt_pyramid(gt, len(preds))
    terms = []
    for s, (p, t) in enumerate(zip(preds, targets)):
        if p.shape != t.shape:
            raise ShapeError(f"scale {s}: prediction {tuple(p.shape)} vs target {tuple(t.shape)}")
        terms.append(torch.mean(torch.abs(tonemap(p, mu) - tonemap(t, mu))))
    total = weighted_total(terms, lambdas)
    per_stage = None
    if stage1 is not None:
        s1 = [torch.mean(torch.abs(tonemap(p, mu) - tonemap(t, mu))) for p, t in zip(stage1, targets)]
        s1_total = weighted_total(s1, lambdas)
        per_stage = [float(s1_total.detach()), float(total.detach())]
        total = total + s1_total
    return LossReport(total, [float(t.detach()) for t in terms], per_stage)


def _as_batch(x):
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(x)
    x = x.to(torch.float64)
    if x.dim() == 3:
        x = x.unsqueeze(0)
    if x.dim() != 4:
        raise ShapeError(f"expected C x H x W or N x C x H x W, got {tuple(x.shape)}")
    return x


def psnr(a, b, peak=1.0):
    """PSNR in dB; identical inputs report :data:`PSNR_CAP`."""
    a, b = _as_batch(a), _as_batch(b)
    if a.shape != b.shape:
        raise ShapeError(f"psnr shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    mse = float(torch.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak ** 2 / mse))


def gaussian_window(size=11, sigma=1.5):
    g = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(g ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Mean structural similarity with a Gaussian window ('valid' filtering)."""
    a, b = _as_batch(a), _as_batch(b)
    if a.shape != b.shape:
        raise ShapeError(f"ssim shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    n, c, h, w = a.shape
    if h < window or w < window:
        raise ShapeError(f"image {h}x{w} smaller than the {window}x{window} SSIM window")
    kernel = gaussian_window(window, sigma).expand(c, 1, window, window)

    def filt(x):
        return F.conv2d(x, kernel, groups=c)

    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(torch.mean(num / den))


@dataclass
class MetricReport:
    scene_id: str
    psnr_mu: float
    psnr_l: float
    ssim_mu: float
    ssim_l: float

    FIELDS = ("scene_id", "psnr_mu", "psnr_l", "ssim_mu", "ssim_l")

    def row(self):
        return [self.scene_id, f"{self.psnr_mu:.4f}", f"{self.psnr_l:.4f}",
                f"{self.ssim_mu:.6f}", f"{self.ssim_l:.6f}"]


def evaluate_prediction(pred, gt, scene_id="", mu=MU):
    """PSNR/SSIM in the linear and mu-law domains on clamped predictions."""
    pred = _as_batch(pred).clamp(0.0, 1.0)
    gt = _as_batch(gt).clamp(0.0, 1.0)
    tp, tg = tonemap(pred, mu), tonemap(gt, mu)
    return MetricReport(scene_id, psnr(tp, tg), psnr(pred, gt), ssim(tp, tg), ssim(pred, gt))


def average_reports(reports, label="average"):
    if not reports:
        raise ValueError("no metric reports to average")
    mean = lambda k: sum(getattr(r, k) for r in reports) / len(reports)
    return MetricReport(label, mean("psnr_mu"), mean("psnr_l"), mean("ssim_mu"), mean("ssim_l"))
