"""Scene loading, linearization, cropping and augmentation.

Dataset layout::

    <root>/Training/<scene>/{*.tif x3, exposure.txt, HDRImg.hdr}
    <root>/Test/<scene>/...

LDR frames are 16-bit TIFFs whose lexicographic order is ascending
exposure.  ``exposure.txt`` lists three log2 exposure biases.
"""

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import tifffile
import torch

from .errors import DataError, DimensionError, MalformedSceneError, RangeError
from .rgbe import read_hdr

GAMMA = 2.2
EXPOSURE_FILE = "exposure.txt"
GT_FILE = "HDRImg.hdr"
DATA_ENV = "STHDR_DATA"


@dataclass
class ExposureStack:
    """One scene: three LDR frames, their exposure biases and optional GT.

    ``ldr`` frames are ``H x W x 3`` floats in [0, 1]; the middle frame is
    the reference.
    """

    ldr: Sequence[np.ndarray]
    biases: Sequence[float]
    gt_hdr: Optional[np.ndarray] = None
    scene_id: str = ""

    def __post_init__(self):
        if len(self.ldr) != 3:
            raise MalformedSceneError(self.scene_id, f"expected 3 frames, got {len(self.ldr)}")
        if len(self.biases) != 3:
            raise MalformedSceneError(self.scene_id, f"expected 3 biases, got {len(self.biases)}")
        shapes = {f.shape for f in self.ldr}
        if self.gt_hdr is not None:
            shapes.add(self.gt_hdr.shape)
        if len(shapes) != 1:
            raise DimensionError(f"scene {self.scene_id}: frame shapes differ {sorted(shapes)}")
        shape = next(iter(shapes))
        if len(shape) != 3 or shape[2] != 3:
            raise DimensionError(f"scene {self.scene_id}: expected H x W x 3 frames, got {shape}")
        if not all(a < b for a, b in zip(self.biases, self.biases[1:])):
            raise MalformedSceneError(self.scene_id, f"biases not strictly increasing: {list(self.biases)}")
        for f in self.ldr:
            _check_unit_range(f, "LDR frame")
        if self.gt_hdr is not None:
            _check_unit_range(self.gt_hdr, "ground truth")

    @property
    def shape(self):
        return self.ldr[0].shape[:2]

    @property
    def exposure_times(self):
        """Relative exposure times, normalized so the shortest is 1."""
        lo = min(self.biases)
        return tuple(2.0 ** (b - lo) for b in self.biases)


@dataclass
class SamplePatch:
    """Co-located training crop: three 6-channel inputs plus GT (all CHW)."""

    inputs: np.ndarray  # 3 x 6 x P x P
    gt: Optional[np.ndarray]  # 3 x P x P
    scene_id: str = ""
    origin: tuple = field(default=(0, 0))

    @property
    def size(self):
        return self.inputs.shape[-1]


def _check_unit_range(arr, what):
    if not np.all(np.isfinite(arr)):
        raise RangeError(f"{what} contains non-finite values")
    lo, hi = float(np.min(arr)), float(np.max(arr))
    if lo < 0.0 or hi > 1.0:
        raise RangeError(f"{what} outside [0, 1]: min={lo:g} max={hi:g}")


def linearize(ldr, bias, bias_min, gamma=GAMMA):
    """Map display-referred ``ldr`` to linear radiance ``ldr**gamma / t``.

    ``t = 2 ** (bias - bias_min)`` so the shortest exposure has ``t = 1``
    and the result stays in [0, 1].
    """
    if gamma <= 0:
        raise RangeError(f"gamma must be positive, got {gamma}")
    if bias < bias_min:
        raise RangeError(f"bias {bias} below bias_min {bias_min}")
    ldr = np.asarray(ldr)
    _check_unit_range(ldr, "LDR input")
    t = 2.0 ** (bias - bias_min)
    return (ldr ** gamma / t).astype(ldr.dtype if ldr.dtype.kind == "f" else np.float64)


def assemble_inputs(stack, gamma=GAMMA):
    """Return three ``6 x H x W`` float32 arrays ``[I_i ; H_i]``."""
    lo = min(stack.biases)
    out = []
    for frame, bias in zip(stack.ldr, stack.biases):
        frame = np.asarray(frame, dtype=np.float32)
        lin = linearize(frame, bias, lo, gamma)
        out.append(np.concatenate([frame, lin], axis=2).transpose(2, 0, 1).copy())
    return out


def read_exposures(path):
    """Parse three whitespace/newline separated log2 biases."""
    tokens = Path(path).read_text().split()
    try:
        return tuple(float(t) for t in tokens)
    except ValueError as exc:
        raise MalformedSceneError(Path(path).parent, f"unparsable exposure file: {exc}") from None


def _read_ldr(path):
    img = tifffile.imread(path)
    if img.ndim == 3 and img.shape[0] in (3, 4) and img.shape[2] not in (3, 4):
        img = img.transpose(1, 2, 0)
    if img.ndim != 3 or img.shape[2] < 3:
        raise DimensionError(f"{path}: expected an RGB image, got shape {img.shape}")
    img = img[..., :3]
    if img.dtype.kind == "u":
        return img.astype(np.float32) / np.iinfo(img.dtype).max
    if img.dtype.kind == "f":
        return np.clip(img.astype(np.float32), 0.0, 1.0)
    raise MalformedSceneError(Path(path).parent, f"unsupported TIFF dtype {img.dtype}")


def load_scene(dir_path, require_gt=False):
    """Load one scene directory into an :class:`ExposureStack`."""
    d = Path(dir_path)
    if not d.is_dir():
        raise MalformedSceneError(d, "not a directory")
    tifs = sorted(p for p in d.iterdir() if p.suffix.lower() in (".tif", ".tiff"))
    if len(tifs) != 3:
        raise MalformedSceneError(d, f"expected 3 TIFF frames, found {len(tifs)}")
    exp_path = d / EXPOSURE_FILE
    if not exp_path.is_file():
        raise MalformedSceneError(d, f"missing {EXPOSURE_FILE}")
    biases = read_exposures(exp_path)
    if len(biases) != 3:
        raise MalformedSceneError(d, f"expected 3 exposure biases, found {len(biases)}")

    gt = None
    gt_path = d / GT_FILE
    if not gt_path.is_file():
        others = sorted(d.glob("*.hdr"))
        gt_path = others[0] if others else None
    if gt_path is not None:
        gt = np.clip(read_hdr(gt_path), 0.0, 1.0)
    elif require_gt:
        raise MalformedSceneError(d, "training scene without ground truth")

    ldr = [_read_ldr(p) for p in tifs]
    return ExposureStack(ldr=ldr, biases=biases, gt_hdr=gt, scene_id=d.name)


def list_scenes(root, split):
    """Scene directories under ``<root>/<split>`` in sorted order."""
    base = Path(root) / split
    if not base.is_dir():
        raise DataError(f"dataset split not found: {base}")
    scenes = sorted(p for p in base.iterdir() if p.is_dir())
    if not scenes:
        raise DataError(f"no scenes under {base}")
    return scenes


def load_split(root, split, require_gt=True):
    return [load_scene(p, require_gt=require_gt) for p in list_scenes(root, split)]


def resolve_data_root(arg):
    root = arg or os.environ.get(DATA_ENV)
    if not root:
        raise DataError(f"no data root given and ${DATA_ENV} is unset")
    if not Path(root).is_dir():
        raise DataError(f"data root does not exist: {root}")
    return Path(root)


def dihedral(x, k):
    """Apply element ``k`` of D4 to the last two axes of ``x``.

    ``k % 4`` counter-clockwise quarter turns applied after a horizontal flip
    when ``k >= 4``.  Works on numpy arrays and torch tensors.
    """
    if not 0 <= k <= 7:
        raise RangeError(f"dihedral index must be in 0..7, got {k}")
    turns, flip = k % 4, k >= 4
    if isinstance(x, torch.Tensor):
        if flip:
            x = torch.flip(x, dims=(-1,))
        return torch.rot90(x, turns, dims=(-2, -1)) if turns else x
    if flip:
        x = np.flip(x, axis=-1)
    return np.ascontiguousarray(np.rot90(x, turns, axes=(-2, -1)))


def dihedral_inverse(k):
    if not 0 <= k <= 7:
        raise RangeError(f"dihedral index must be in 0..7, got {k}")
    return k if k >= 4 else (4 - k) % 4


def augment_dihedral(sample, k):
    """Apply the same flip/rotation to every input frame and the GT."""
    return replace(
        sample,
        inputs=dihedral(sample.inputs, k),
        gt=None if sample.gt is None else dihedral(sample.gt, k),
    )


def crop_stack(stack, top, left, size, gamma=GAMMA):
    """Deterministic co-located crop of ``stack`` at ``(top, left)``."""
    h, w = stack.shape
    if size > min(h, w):
        raise RangeError(f"patch {size} larger than image {h}x{w}")
    if not (0 <= top <= h - size and 0 <= left <= w - size):
        raise RangeError(f"crop window ({top}, {left}, {size}) outside {h}x{w}")
    win = (slice(top, top + size), slice(left, left + size))
    sub = ExposureStack(
        ldr=[f[win] for f in stack.ldr],
        biases=stack.biases,
        gt_hdr=None if stack.gt_hdr is None else stack.gt_hdr[win],
        scene_id=stack.scene_id,
    )
    gt = None if sub.gt_hdr is None else np.ascontiguousarray(
        sub.gt_hdr.transpose(2, 0, 1), dtype=np.float32)
    return SamplePatch(np.stack(assemble_inputs(sub, gamma)), gt, stack.scene_id, (top, left))


def random_crop(stack, size, rng, gamma=GAMMA):
    """Uniformly placed ``size x size`` crop drawn from ``rng``."""
    if size % 4:
        raise RangeError(f"patch size must be divisible by 4, got {size}")
    h, w = stack.shape
    if size > min(h, w):
        raise RangeError(f"patch {size} larger than image {h}x{w}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return crop_stack(stack, top, left, size, gamma)


def sample_batch(scenes, rng, batch_size, size, gamma=GAMMA, augment=True):
    """Draw ``batch_size`` augmented patches; one generator drives every choice."""
    patches = []
    for _ in range(batch_size):
        stack = scenes[int(rng.integers(0, len(scenes)))]
        patch = random_crop(stack, size, rng, gamma)
        if augment:
            patch = augment_dihedral(patch, int(rng.integers(0, 8)))
        patches.append(patch)
    return patches


def collate(patches):
    """Stack patches into ``(x1, x2, x3, gt)`` float32 tensors."""
    inputs = torch.from_numpy(np.stack([p.inputs for p in patches]).astype(np.float32))
    gt = None
    if all(p.gt is not None for p in patches):
        gt = torch.from_numpy(np.stack([p.gt for p in patches]).astype(np.float32))
    return inputs[:, 0], inputs[:, 1], inputs[:, 2], gt


def stack_to_tensors(stack, gamma=GAMMA):
    """Full-frame network inputs (batch of one) and optional GT."""
    x = [torch.from_numpy(a).unsqueeze(0) for a in assemble_inputs(stack, gamma)]
    gt = None
    if stack.gt_hdr is not None:
        gt = torch.from_numpy(np.ascontiguousarray(stack.gt_hdr.transpose(2, 0, 1),
                                                   dtype=np.float32)).unsqueeze(0)
    return x[0], x[1], x[2], gt


def write_scene(dir_path, ldr, biases, gt=None):
    """Write a scene directory in the dataset layout (16-bit TIFFs)."""
    from .rgbe import write_hdr

    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(ldr, start=1):
        q = np.rint(np.clip(frame, 0.0, 1.0) * 65535.0).astype(np.uint16)
        tifffile.imwrite(d / f"frame_{i}.tif", q, photometric="rgb")
    (d / EXPOSURE_FILE).write_text("\n".join(f"{b:g}" for b in biases) + "\n")
    if gt is not None:
        write_hdr(d / GT_FILE, gt)
    return d
