"""Two-stage merge network."""

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn

from .blocks import LEAKY_SLOPE, SAM, HINBlock, bilinear_resample, conv1, conv3
from .errors import ShapeError


class EncoderDecoder(nn.Module):
    """Two-level U-shaped network of HIN blocks (widths ``c`` and ``2c``)."""

    def __init__(self, channels=32, blocks=3, slope=LEAKY_SLOPE):
        super().__init__()

        def stack(c):
            return nn.Sequential(*[HINBlock(c, slope) for _ in range(blocks)])

        self.enc1 = stack(channels)
        self.down = conv3(channels, 2 * channels, stride=2)
        self.enc2 = stack(2 * channels)
        self.bottleneck = stack(2 * channels)
        self.up = conv3(2 * channels, channels)
        self.skip_fuse = conv1(2 * channels, channels)
        self.dec1 = stack(channels)

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % 4 or w % 4:
            raise ShapeError(f"encoder-decoder needs H, W divisible by 4, got {h}x{w}")
        e1 = self.enc1(x)
        e2 = self.enc2(self.down(e1))
        b = self.bottleneck(e2)
        u = self.up(bilinear_resample(b, 2))
        return self.dec1(self.skip_fuse(torch.cat([u, e1], dim=1)))


@dataclass
class MergeOutput:
    pred_stage1: torch.Tensor
    pred_stage2: torch.Tensor
    feat_out: torch.Tensor


class MergeNet(nn.Module):
    """Stage 1 predicts a preliminary HDR through SAM; stage 2 refines it.

    Both predictions are residuals over the linearized reference frame and
    are clamped to [0, 1].  ``cross_fuse`` merges the upsampled feature of
    the next-coarser scale when one is given.
    """

    def __init__(self, channels=32, blocks=3, slope=LEAKY_SLOPE):
        super().__init__()
        self.cross_fuse = conv1(2 * channels, channels)
        self.stage1 = EncoderDecoder(channels, blocks, slope)
        self.sam = SAM(channels)
        self.stage2_in = conv1(2 * channels, channels)
        self.stage2 = EncoderDecoder(channels, blocks, slope)
        self.to_img = conv3(channels, 3)

    def forward(self, z, ref_img, cross_scale_feat: Optional[torch.Tensor] = None):
        if ref_img.shape[-2:] != z.shape[-2:]:
            raise ShapeError(f"reference {tuple(ref_img.shape)} does not match features {tuple(z.shape)}")
        if cross_scale_feat is not None:
            if cross_scale_feat.shape != z.shape:
                raise ShapeError(f"cross-scale feature {tuple(cross_scale_feat.shape)} "
                                 f"does not match {tuple(z.shape)}")
            z = self.cross_fuse(torch.cat([z, cross_scale_feat], dim=1))
        f1 = self.stage1(z)
        pred1, f_sam = self.sam(f1, ref_img)
        f2 = self.stage2(self.stage2_in(torch.cat([f_sam, z], dim=1)))
        pred2 = torch.clamp(self.to_img(f2) + ref_img, 0.0, 1.0)
        return MergeOutput(pred1, pred2, f2)
