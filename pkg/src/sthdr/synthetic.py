"""Procedural multi-exposure scenes with known ground truth.

Used for tests, smoke training and the ``make-fixture`` command.  A scene
is a smooth radiance field with textures, a few highlights that saturate
the reference exposure, and a foreground block that moves between frames.
"""

import numpy as np

from .data_io import write_scene

DEFAULT_BIASES = (-2.0, 0.0, 2.0)


def _radiance(rng, h, w, obj_shift=(0, 0), params=None):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    p = params
    base = 0.03 + 0.12 * (0.5 + 0.5 * np.sin(2 * np.pi * (xx * p["fx"] + yy * p["fy"]) + p["phase"]))
    stripes = 0.04 * (np.sin(xx * p["kx"]) * np.cos(yy * p["ky"]))
    img = (base + stripes)[..., None] * p["tint"][None, None, :]
    for cy, cx, r, amp in p["lights"]:
        d2 = ((yy - cy) ** 2 + (xx - cx) ** 2) / r ** 2
        img = img + (amp * np.exp(-d2))[..., None] * np.array([1.0, 0.95, 0.85])
    oy, ox, size, color = p["object"]
    oy, ox = oy + obj_shift[0], ox + obj_shift[1]
    y0, x0 = int(max(oy, 0)), int(max(ox, 0))
    y1, x1 = int(min(oy + size, h)), int(min(ox + size, w))
    if y1 > y0 and x1 > x0:
        img[y0:y1, x0:x1] = color
    return np.clip(img, 0.0, 1.0)


def scene_params(rng, h, w):
    n_lights = int(rng.integers(2, 4))
    return {
        "fx": rng.uniform(0.2, 1.0) / w,
        "fy": rng.uniform(0.2, 1.0) / h,
        "phase": rng.uniform(0, 2 * np.pi),
        "kx": rng.uniform(0.1, 0.4),
        "ky": rng.uniform(0.1, 0.4),
        "tint": rng.uniform(0.6, 1.0, size=3),
        "lights": [(rng.uniform(0.2, 0.8) * h, rng.uniform(0.2, 0.8) * w,
                    rng.uniform(0.15, 0.3) * min(h, w), rng.uniform(0.5, 0.9))
                   for _ in range(n_lights)],
        "object": (rng.uniform(0.3, 0.6) * h, rng.uniform(0.3, 0.6) * w,
                   int(0.2 * min(h, w)), rng.uniform(0.05, 0.3, size=3)),
    }


def make_scene(rng, height=128, width=128, biases=DEFAULT_BIASES, motion=2, gamma=2.2):
    """Return ``(ldr_frames, biases, gt)`` for one synthetic scene.

    Frames are quantized to 16 bits.  The ground truth is the radiance at
    the reference (middle) frame's object position.
    """
    params = scene_params(rng, height, width)
    lo = min(biases)
    shifts = [(-motion, motion), (0, 0), (motion, -motion)]
    ldr = []
    for bias, shift in zip(biases, shifts):
        rad = _radiance(rng, height, width, shift, params)
        t = 2.0 ** (bias - lo)
        frame = np.clip(rad * t, 0.0, 1.0) ** (1.0 / gamma)
        ldr.append((np.rint(frame * 65535.0) / 65535.0).astype(np.float32))
    gt = _radiance(rng, height, width, (0, 0), params).astype(np.float32)
    return ldr, tuple(biases), gt


def make_dataset(root, n_train=2, n_test=2, height=128, width=128, seed=0, motion=2):
    """Write a small dataset in the ``Training/`` + ``Test/`` layout."""
    rng = np.random.default_rng(seed)
    dirs = []
    for split, count in (("Training", n_train), ("Test", n_test)):
        for i in range(count):
            ldr, biases, gt = make_scene(rng, height, width, motion=motion)
            dirs.append(write_scene(f"{root}/{split}/scene_{i:03d}", ldr, biases, gt))
    return dirs
