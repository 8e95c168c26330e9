"""Feature-space alignment of the non-reference exposures."""

import torch
import torch.nn as nn

from .blocks import LEAKY_SLOPE, DeformConv, GCBlock, conv1, conv3, lrelu
from .errors import ShapeError


class SCM(nn.Module):
    """Spatial correct module: pulls useful detail from one non-reference
    frame onto the reference feature.

    Stages: joint conv -> global-context channel gating -> compression with
    the reference feature -> deformable sampling -> conv with a skip onto the
    reference feature.
    """

    def __init__(self, in_channels=6, channels=32, slope=LEAKY_SLOPE):
        super().__init__()
        self.slope = slope
        self.joint = conv3(2 * in_channels, channels)
        self.gcb = GCBlock(channels)
        self.compress = conv1(2 * channels, channels)
        self.deform = DeformConv(channels, channels)
        self.out = conv3(channels, channels)

    def forward(self, x_i, x_ref, f_ref, return_stages=False):
        if x_i.shape != x_ref.shape:
            raise ShapeError(f"SCM inputs differ: {tuple(x_i.shape)} vs {tuple(x_ref.shape)}")
        f0 = lrelu(self.joint(torch.cat([x_i, x_ref], dim=1)), self.slope)
        fw = f0 * self.gcb(f0)
        f1 = self.compress(torch.cat([fw, f_ref], dim=1))
        d = self.deform(f1)
        af = lrelu(self.out(d), self.slope) + f_ref
        if return_stages:
            return af, {"joint": f0, "gated": fw, "compressed": f1, "deformed": d, "aligned": af}
        return af


class AlignNet(nn.Module):
    """Two SCMs (one per non-reference frame) plus channel compression.

    The reference feature is computed once and shared by both SCMs.
    """

    def __init__(self, in_channels=6, channels=32, slope=LEAKY_SLOPE):
        super().__init__()
        self.slope = slope
        self.ref_conv = conv3(in_channels, channels)
        self.scm1 = SCM(in_channels, channels, slope)
        self.scm3 = SCM(in_channels, channels, slope)
        self.fuse = conv1(3 * channels, channels)

    def reference_feature(self, x2):
        return lrelu(self.ref_conv(x2), self.slope)

    def forward(self, x1, x2, x3, return_parts=False):
        if not (x1.shape == x2.shape == x3.shape):
            raise ShapeError("align net inputs must share one shape, got "
                             f"{tuple(x1.shape)}, {tuple(x2.shape)}, {tuple(x3.shape)}")
        f_ref = self.reference_feature(x2)
        af1 = self.scm1(x1, x2, f_ref)
        af3 = self.scm3(x3, x2, f_ref)
        z = lrelu(self.fuse(torch.cat([af1, f_ref, af3], dim=1)), self.slope)
        if return_parts:
            return z, {"af1": af1, "ref": f_ref, "af3": af3}
        return z
