"""Radiance RGBE (``.hdr``) reader and writer.

Pixels are stored as three 8-bit mantissas sharing one 8-bit exponent.
Reading accepts both flat and new-style run-length encoded scanlines;
writing emits flat scanlines.
"""

import re
from pathlib import Path

import numpy as np

from .errors import HDRFormatError, RangeError

_MAGICS = (b"#?RADIANCE", b"#?RGBE")
_RES_RE = re.compile(rb"^-Y (\d+) \+X (\d+)$")
_EXP_BIAS = 128 + 8


def float_to_rgbe(image):
    """Encode an ``H x W x 3`` float array into ``H x W x 4`` uint8 RGBE."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise RangeError(f"expected H x W x 3 image, got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise RangeError("RGBE encoding requires finite values")
    if np.any(image < 0):
        raise RangeError("RGBE encoding requires nonnegative values")
    if image.size and image.max() >= 2.0 ** 127:
        raise RangeError("value too large for an 8-bit shared exponent")

    peak = image.max(axis=2)
    out = np.zeros(image.shape[:2] + (4,), dtype=np.uint8)
    nz = peak > 1e-38
    if not np.any(nz):
        return out

    _, exp = np.frexp(peak[nz])
    mant = np.floor(image[nz] * np.ldexp(1.0, 8 - exp)[:, None])
    out[nz, :3] = mant.astype(np.uint8)
    out[nz, 3] = (exp + 128).astype(np.uint8)
    return out


def rgbe_to_float(rgbe):
    """Decode ``H x W x 4`` uint8 RGBE into float32 ``H x W x 3``.

    Mantissas are read at their bin centre (``m + 0.5``), matching the
    truncating encoder; a zero exponent byte decodes to exact zero.
    """
    rgbe = np.asarray(rgbe)
    e = rgbe[..., 3].astype(np.int32)
    scale = np.where(e > 0, np.ldexp(1.0, e - _EXP_BIAS), 0.0)
    return ((rgbe[..., :3].astype(np.float64) + 0.5) * scale[..., None]).astype(np.float32)


def _read_header(buf):
    pos = 0

    def line():
        nonlocal pos
        end = buf.find(b"\n", pos)
        if end < 0:
            raise HDRFormatError("truncated header")
        text = buf[pos:end]
        pos = end + 1
        return text

    first = line()
    if not first.startswith(_MAGICS):
        raise HDRFormatError(f"bad magic {first[:16]!r}")
    fmt = None
    while True:
        text = line()
        if text == b"":
            break
        if text.startswith(b"FORMAT="):
            fmt = text[len(b"FORMAT="):]
    if fmt not in (None, b"32-bit_rle_rgbe"):
        raise HDRFormatError(f"unsupported pixel format {fmt!r}")
    m = _RES_RE.match(line().strip())
    if m is None:
        raise HDRFormatError("expected '-Y H +X W' resolution line")
    return int(m.group(1)), int(m.group(2)), pos


def _decode_rle_scanline(buf, pos, width):
    row = np.empty((4, width), dtype=np.uint8)
    for c in range(4):
        i = 0
        while i < width:
            if pos >= len(buf):
                raise HDRFormatError("truncated RLE scanline")
            count = buf[pos]
            pos += 1
            if count > 128:
                count -= 128
                if i + count > width:
                    raise HDRFormatError("RLE run overflows scanline")
                row[c, i:i + count] = buf[pos]
                pos += 1
            else:
                if count == 0 or i + count > width:
                    raise HDRFormatError("bad RLE literal count")
                row[c, i:i + count] = np.frombuffer(buf, np.uint8, count, pos)
                pos += count
            i += count
    return row.T, pos


def decode_rgbe_bytes(buf):
    """Parse a complete ``.hdr`` byte string into float32 ``H x W x 3``."""
    height, width, pos = _read_header(buf)
    pixels = np.empty((height, width, 4), dtype=np.uint8)
    for y in range(height):
        head = buf[pos:pos + 4]
        if (len(head) == 4 and head[0] == 2 and head[1] == 2 and head[2] < 128
                and 8 <= width < 32768):
            if (head[2] << 8 | head[3]) != width:
                raise HDRFormatError(f"scanline {y} width mismatch")
            pixels[y], pos = _decode_rle_scanline(buf, pos + 4, width)
        else:
            end = pos + 4 * width
            if end > len(buf):
                raise HDRFormatError(f"truncated pixel data at scanline {y}")
            pixels[y] = np.frombuffer(buf, np.uint8, 4 * width, pos).reshape(width, 4)
            pos = end
    return rgbe_to_float(pixels)


def encode_rgbe_bytes(image):
    image = np.asarray(image)
    h, w = image.shape[:2]
    header = (b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n"
              + f"-Y {h} +X {w}\n".encode("ascii"))
    return header + float_to_rgbe(image).tobytes()


def read_hdr(path):
    """Read a Radiance ``.hdr`` file as float32 ``H x W x 3``."""
    return decode_rgbe_bytes(Path(path).read_bytes())


def write_hdr(path, image):
    """Write ``H x W x 3`` nonnegative radiance to ``path`` (flat scanlines)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_rgbe_bytes(image))
