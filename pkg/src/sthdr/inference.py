"""Full-frame prediction with reflection padding, and test-set evaluation."""

import numpy as np
import torch
import torch.nn.functional as F

from .data_io import stack_to_tensors
from .objective import evaluate_prediction


def pad_to_multiple(x, multiple):
    """Reflection-pad the bottom/right of ``x`` up to a multiple of ``multiple``."""
    h, w = x.shape[-2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph == 0 and pw == 0:
        return x
    return F.pad(x, (0, pw, 0, ph), mode="reflect")


@torch.no_grad()
def predict(model, x1, x2, x3):
    """Finest-scale prediction for arbitrary-size inputs (cropped back)."""
    model.eval()
    h, w = x1.shape[-2:]
    m = model.config.required_multiple
    xs = [pad_to_multiple(x, m) for x in (x1, x2, x3)]
    return model(*xs).preds[0][..., :h, :w]


def predict_stack(model, stack):
    """``H x W x 3`` float32 linear HDR prediction for an :class:`ExposureStack`."""
    x1, x2, x3, _ = stack_to_tensors(stack, model.config.gamma)
    pred = predict(model, x1, x2, x3)
    return pred[0].permute(1, 2, 0).numpy().astype(np.float32)


def evaluate_scenes(model, scenes, self_test=False):
    """``[(MetricReport, prediction HWC)]`` for every scene with GT.

    With ``self_test`` the ground truth is scored against itself, which
    must give capped PSNR and unit SSIM.
    """
    results = []
    for stack in scenes:
        if stack.gt_hdr is None:
            continue
        pred = stack.gt_hdr.astype(np.float32) if self_test else predict_stack(model, stack)
        report = evaluate_prediction(torch.from_numpy(pred.transpose(2, 0, 1)),
                                     torch.from_numpy(stack.gt_hdr.transpose(2, 0, 1)),
                                     stack.scene_id, model.config.mu)
        results.append((report, pred))
    return results
