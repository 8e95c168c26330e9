"""Differentiable building blocks used by the alignment and merge networks."""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError

LEAKY_SLOPE = 0.2


class Conv(nn.Conv2d):
    """``nn.Conv2d`` restricted to 1x1/3x3 kernels with same-size padding.

    Raises :class:`ShapeError` instead of a bare ``RuntimeError`` when the
    input channel count does not match.
    """

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, bias=True):
        if kernel_size not in (1, 3):
            raise ShapeError(f"kernel size must be 1 or 3, got {kernel_size}")
        super().__init__(in_channels, out_channels, kernel_size, stride=stride,
                         padding=kernel_size // 2, bias=bias)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"conv expects N x {self.in_channels} x H x W, got {tuple(x.shape)}")
        return super().forward(x)


def conv3(cin, cout, stride=1, bias=True):
    return Conv(cin, cout, 3, stride=stride, bias=bias)


def conv1(cin, cout, bias=True):
    return Conv(cin, cout, 1, bias=bias)


def lrelu(x, slope=LEAKY_SLOPE):
    return F.leaky_relu(x, slope)


class GCBlock(nn.Module):
    """Global context block producing per-channel gates in (0, 1).

    Context pooling uses a softmax over all spatial positions; the pooled
    vector goes through a LayerNorm bottleneck and a sigmoid.
    """

    def __init__(self, channels, ratio=4):
        super().__init__()
        hidden = max(channels // ratio, 1)
        self.attn = conv1(channels, 1)
        self.reduce = conv1(channels, hidden)
        self.norm = nn.LayerNorm([hidden, 1, 1])
        self.expand = conv1(hidden, channels)

    def attention(self, x):
        """Softmax pooling weights, ``N x 1 x (H*W)``."""
        n = x.shape[0]
        return torch.softmax(self.attn(x).view(n, 1, -1), dim=-1)

    def context(self, x):
        n, c = x.shape[:2]
        w = self.attention(x)
        return torch.bmm(x.view(n, c, -1), w.transpose(1, 2)).view(n, c, 1, 1)

    def forward(self, x):
        t = self.expand(F.relu(self.norm(self.reduce(self.context(x)))))
        return torch.sigmoid(t)


def _bilinear_gather(x, py, px):
    """Sample ``x`` (N,C,H,W) at float coords (N,K,H,W); zero outside."""
    n, c, h, w = x.shape
    y0 = torch.floor(py)
    x0 = torch.floor(px)
    ly, lx = py - y0, px - x0
    y0 = y0.long()
    x0 = x0.long()
    flat = x.reshape(n, c, h * w)
    out = 0
    for dy, wy in ((0, 1 - ly), (1, ly)):
        for dx, wx in ((0, 1 - lx), (1, lx)):
            yy, xx = y0 + dy, x0 + dx
            valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            idx = (yy.clamp(0, h - 1) * w + xx.clamp(0, w - 1)).reshape(n, 1, -1)
            vals = flat.gather(2, idx.expand(n, c, idx.shape[-1]))
            weight = (wy * wx * valid).reshape(n, 1, -1)
            out = out + vals * weight
    return out.view(n, c, *py.shape[1:])


def deform_conv2d(x, offset, mask, weight, bias=None):
    """Modulated deformable 3x3 convolution, stride 1, padding 1.

    ``offset`` is ``N x 2K x H x W`` with ``(dy, dx)`` pairs per tap in
    row-major tap order; ``mask`` is ``N x K x H x W``.  Samples are
    bilinear with zeros outside the image.
    """
    n, c, h, w = x.shape
    cout, cin, kh, kw = weight.shape
    if (kh, kw) != (3, 3):
        raise ShapeError(f"deformable conv supports 3x3 kernels only, got {kh}x{kw}")
    if cin != c:
        raise ShapeError(f"weight expects {cin} input channels, got {c}")
    k = kh * kw
    if offset.shape != (n, 2 * k, h, w) or mask.shape != (n, k, h, w):
        raise ShapeError(f"offset/mask shapes {tuple(offset.shape)}/{tuple(mask.shape)} "
                         f"do not match input {tuple(x.shape)}")
    dev, dt = x.device, x.dtype
    ky, kx = torch.meshgrid(torch.arange(kh, device=dev, dtype=dt) - kh // 2,
                            torch.arange(kw, device=dev, dtype=dt) - kw // 2, indexing="ij")
    gy, gx = torch.meshgrid(torch.arange(h, device=dev, dtype=dt),
                            torch.arange(w, device=dev, dtype=dt), indexing="ij")
    off = offset.view(n, k, 2, h, w)
    py = gy + ky.reshape(1, k, 1, 1) + off[:, :, 0]
    px = gx + kx.reshape(1, k, 1, 1) + off[:, :, 1]
    cols = _bilinear_gather(x, py, px) * mask.unsqueeze(1)  # N,C,K,H,W
    out = torch.einsum("nckhw,ock->nohw", cols, weight.reshape(cout, cin, k))
    if bias is not None:
        out = out + bias.view(1, -1, 1, 1)
    return out


class DeformConv(nn.Module):
    """Modulated deformable conv whose offsets/mask come from a 3x3 conv.

    The offset branch starts at zero, so offsets are 0 and the modulation
    is ``sigmoid(0) = 0.5`` until training moves it.
    """

    taps = 9

    def __init__(self, in_channels, out_channels, bias=True):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(out_channels, in_channels, 3, 3))
        self.bias = nn.Parameter(torch.empty(out_channels)) if bias else None
        self.offset_conv = conv3(in_channels, 3 * self.taps)
        self.reset_parameters()

    def reset_parameters(self):
        ref = nn.Conv2d(self.weight.shape[1], self.weight.shape[0], 3, bias=self.bias is not None)
        with torch.no_grad():
            self.weight.copy_(ref.weight)
            if self.bias is not None:
                self.bias.copy_(ref.bias)
        nn.init.zeros_(self.offset_conv.weight)
        nn.init.zeros_(self.offset_conv.bias)

    def offsets(self, x):
        out = self.offset_conv(x)
        offset, logits = out[:, :2 * self.taps], out[:, 2 * self.taps:]
        return offset, torch.sigmoid(logits)

    def forward(self, x):
        offset, mask = self.offsets(x)
        return deform_conv2d(x, offset, mask, self.weight, self.bias)


class HINBlock(nn.Module):
    """Residual block with instance normalization on half the channels."""

    def __init__(self, channels, slope=LEAKY_SLOPE):
        super().__init__()
        if channels % 2:
            raise ShapeError(f"HIN block needs an even channel count, got {channels}")
        self.slope = slope
        self.conv_a = conv3(channels, channels)
        self.norm = nn.InstanceNorm2d(channels // 2, affine=True, eps=1e-5)
        self.conv_b = conv3(channels, channels)
        self.skip = conv1(channels, channels)

    def forward(self, x):
        if x.shape[1] % 2:
            raise ShapeError(f"HIN block needs an even channel count, got {x.shape[1]}")
        y = self.conv_a(x)
        a, b = torch.chunk(y, 2, dim=1)
        y = torch.cat([self.norm(a), b], dim=1)
        return self.conv_b(lrelu(y, self.slope)) + self.skip(x)


class SAM(nn.Module):
    """Supervised attention bridge between the two merge stages.

    Predicts a residual over the linearized reference and reweights the
    incoming features with a mask computed from that prediction.
    """

    def __init__(self, channels, out_channels=3):
        super().__init__()
        self.to_img = conv3(channels, out_channels)
        self.to_mask = conv3(out_channels, channels)

    def forward(self, f, ref_img):
        pred = torch.clamp(self.to_img(f) + ref_img, 0.0, 1.0)
        mask = torch.sigmoid(self.to_mask(pred))
        return pred, f * mask + f


def bilinear_resample(x, scale):
    """Half- or double-size bilinear resize (``align_corners=False``)."""
    if scale == 0.5:
        h, w = x.shape[-2:]
        if h % 2 or w % 2:
            raise ShapeError(f"cannot halve odd spatial size {h}x{w}")
        return F.interpolate(x, size=(h // 2, w // 2), mode="bilinear", align_corners=False)
    if scale == 2:
        h, w = x.shape[-2:]
        return F.interpolate(x, size=(2 * h, 2 * w), mode="bilinear", align_corners=False)
    raise ShapeError(f"unsupported resample factor {scale}")
