"""Full multi-scale network, ablation variants and parameter accounting."""

from collections import OrderedDict
from dataclasses import asdict, dataclass, fields
from typing import List, Optional, Tuple

import torch
import torch.nn as nn

from .align import AlignNet
from .blocks import LEAKY_SLOPE, bilinear_resample, conv3, lrelu
from .errors import ConfigError, ShapeError
from .merge import EncoderDecoder, MergeNet, MergeOutput

VARIANTS = ("HSS", "SS", "MS", "SCM_SS", "SCM_MS")
SINGLE_SCALE = ("HSS", "SS", "SCM_SS")


@dataclass
class ModelConfig:
    variant: str = "SCM_MS"
    n_scales: int = 3
    base_channels: int = 32
    blocks_per_level: int = 3
    gamma: float = 2.2
    mu: float = 5000.0
    lambdas: Tuple[float, ...] = (1.0, 1.0, 1.0)
    leaky_slope: float = LEAKY_SLOPE
    supervise_stage1: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; valid variants: {', '.join(VARIANTS)}")
        self.lambdas = tuple(float(v) for v in self.lambdas)
        if self.n_scales < 1:
            raise ConfigError(f"n_scales must be >= 1, got {self.n_scales}")
        if self.variant in SINGLE_SCALE and self.n_scales != 1:
            raise ConfigError(f"variant {self.variant} is single-scale, got n_scales={self.n_scales}")
        if len(self.lambdas) != self.n_scales:
            raise ConfigError(f"need {self.n_scales} loss weights, got {len(self.lambdas)}")
        if any(v <= 0 for v in self.lambdas):
            raise ConfigError(f"loss weights must be positive, got {self.lambdas}")
        if self.base_channels < 2 or self.base_channels % 2:
            raise ConfigError(f"base_channels must be an even number >= 2, got {self.base_channels}")
        if self.blocks_per_level < 1:
            raise ConfigError("blocks_per_level must be >= 1")
        if self.gamma <= 0 or self.mu <= 0:
            raise ConfigError("gamma and mu must be positive")

    @classmethod
    def for_variant(cls, variant="SCM_MS", tiny=False, **overrides):
        """Full-size defaults (or the CPU ``tiny`` profile) for a variant."""
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}; valid variants: {', '.join(VARIANTS)}")
        n = 1 if variant in SINGLE_SCALE else (2 if tiny else 3)
        kw = dict(variant=variant, n_scales=n, lambdas=(1.0,) * n)
        if tiny:
            kw["base_channels"] = 8
        if "n_scales" in overrides and "lambdas" not in overrides:
            overrides["lambdas"] = (1.0,) * int(overrides["n_scales"])
        kw.update(overrides)
        return cls(**kw)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["lambdas"] = list(self.lambdas)
        return d

    @property
    def multi_scale(self):
        return self.n_scales > 1

    @property
    def required_multiple(self):
        return 4 * 2 ** (self.n_scales - 1)


@dataclass
class ScalePyramidPrediction:
    """Per-scale linear HDR predictions, finest first."""

    preds: List[torch.Tensor]
    stage1: Optional[List[torch.Tensor]] = None

    @property
    def finest(self):
        return self.preds[0]


class ConcatFront(nn.Module):
    """Front end of the non-aligning variants: stacked inputs -> conv."""

    def __init__(self, channels=32, slope=LEAKY_SLOPE):
        super().__init__()
        self.slope = slope
        self.conv = conv3(18, channels)

    def forward(self, x1, x2, x3):
        return lrelu(self.conv(torch.cat([x1, x2, x3], dim=1)), self.slope)


class SingleStageHead(nn.Module):
    """One encoder-decoder with a residual image head (HSS baseline)."""

    def __init__(self, channels=32, blocks=3, slope=LEAKY_SLOPE):
        super().__init__()
        self.body = EncoderDecoder(channels, blocks, slope)
        self.to_img = conv3(channels, 3)

    def forward(self, z, ref_img, cross_scale_feat=None):
        f = self.body(z)
        return MergeOutput(None, torch.clamp(self.to_img(f) + ref_img, 0.0, 1.0), f)


class STHDR(nn.Module):
    """Scale-aware two-stage HDR network.

    One front end and one merge head are built and reused at every scale.
    Scales run coarse to fine; each finer scale receives the upsampled
    stage-2 feature of the previous one.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c, slope = config.base_channels, config.leaky_slope
        if config.variant.startswith("SCM"):
            self.front = AlignNet(6, c, slope)
        else:
            self.front = ConcatFront(c, slope)
        if config.variant == "HSS":
            self.merge = SingleStageHead(c, config.blocks_per_level, slope)
        else:
            self.merge = MergeNet(c, config.blocks_per_level, slope)
            if not config.multi_scale:
                # never used at a single scale; drop it so it is not counted
                del self.merge.cross_fuse
                self.merge.cross_fuse = None

    def check_input(self, *xs):
        m = self.config.required_multiple
        for x in xs:
            if x.dim() != 4 or x.shape[1] != 6:
                raise ShapeError(f"expected N x 6 x H x W inputs, got {tuple(x.shape)}")
            h, w = x.shape[-2:]
            if h % m or w % m:
                raise ShapeError(f"input size {h}x{w} must be a multiple of {m} "
                                 f"for {self.config.n_scales} scales")
        if not (xs[0].shape == xs[1].shape == xs[2].shape):
            raise ShapeError("the three frames must share one shape")

    def pyramid(self, x):
        levels = [x]
        for _ in range(self.config.n_scales - 1):
            levels.append(bilinear_resample(levels[-1], 0.5))
        return levels

    def forward(self, x1, x2, x3):
        self.check_input(x1, x2, x3)
        p1, p2, p3 = self.pyramid(x1), self.pyramid(x2), self.pyramid(x3)
        preds, stage1 = [], []
        cross = None
        for s in reversed(range(self.config.n_scales)):
            ref_img = p2[s][:, 3:6]
            z = self.front(p1[s], p2[s], p3[s])
            out = self.merge(z, ref_img, cross)
            preds.append(out.pred_stage2)
            stage1.append(out.pred_stage1)
            if s > 0:
                cross = bilinear_resample(out.feat_out, 2)
        preds.reverse()
        stage1.reverse()
        keep_stage1 = self.config.supervise_stage1 and stage1[0] is not None
        return ScalePyramidPrediction(preds, stage1 if keep_stage1 else None)


def build(config: ModelConfig, seed=0):
    """Construct a model with deterministic, seed-controlled initialization.

    Convolutions use PyTorch's fan-in scaled uniform init; deformable
    offset branches start at zero.  The global RNG state is left untouched.
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = STHDR(config)
    return model


def count_parameters(model):
    """Number of learnable scalars; tensors shared across scales count once."""
    seen = set()
    total = 0
    for p in model.parameters():
        if p.requires_grad and id(p) not in seen:
            seen.add(id(p))
            total += p.numel()
    return total


def parameter_breakdown(model, depth=2):
    """Parameter counts grouped by module path prefix of length ``depth``."""
    out = OrderedDict()
    for name, p in model.named_parameters():
        key = ".".join(name.split(".")[:depth])
        out[key] = out.get(key, 0) + p.numel()
    return out


def shared_weight_map(model):
    """Which submodules are reused, and how many times per forward pass."""
    n = model.config.n_scales
    return OrderedDict((name, n) for name, _ in model.named_children())
