"""Grayscale PGM writer and reader.

Values map to pixels by ``floor(255 * clamp((v - lo) / (hi - lo), 0, 1) + 0.5)``.
The ``(lo, hi)`` pair travels in a ``# range lo hi`` comment right after the
magic number, so an image can be mapped back to its value range.
"""

import numpy as np

from .errors import FormatError
from .numkernel import format_real

MAXVAL = 255


def to_pixels(values, lo, hi):
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("image values must be finite")
    if not hi > lo:
        # A flat image: everything maps to black.
        return np.zeros(v.shape, dtype=np.uint8)
    t = np.clip((v - lo) / (hi - lo), 0.0, 1.0)
    return np.floor(MAXVAL * t + 0.5).astype(np.uint8)


def value_range(values):
    v = np.asarray(values, dtype=float)
    return float(v.min()), float(v.max())


def encode(image, lo=None, hi=None, binary=False):
    """Encode a 2-D array as PGM bytes (P2 text or P5 binary)."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("image must be 2-D")
    if lo is None or hi is None:
        dlo, dhi = value_range(img)
        lo = dlo if lo is None else lo
        hi = dhi if hi is None else hi
    px = to_pixels(img, lo, hi)
    h, w = px.shape
    head = "%s\n# range %s %s\n%d %d\n%d\n" % ("P5" if binary else "P2", format_real(lo), format_real(hi), w, h, MAXVAL)
    if binary:
        return head.encode("ascii") + px.tobytes()
    body = "\n".join(" ".join(str(int(p)) for p in row) for row in px)
    return (head + body + "\n").encode("ascii")


def write(path, image, lo=None, hi=None, binary=False):
    data = encode(image, lo, hi, binary)
    with open(path, "wb") as fh:
        fh.write(data)
    return path


def heatmap_image(heat):
    """Heatmaps share the value mapping over ``[0, max]``."""
    heat = np.asarray(heat, dtype=float)
    return encode(heat, 0.0, float(heat.max()))


def decode(data):
    """Parse PGM bytes; returns ``(pixels, (lo, hi) or None)``."""
    pos = 0
    tokens = []
    value_range_ = None
    line = 1
    magic = None
    # Header tokens: magic, width, height, maxval; comments may appear between.
    while len(tokens) < 4:
        if pos >= len(data):
            raise FormatError("truncated PGM header", line=line)
        c = data[pos : pos + 1]
        if c == b"#":
            end = data.find(b"\n", pos)
            end = len(data) if end < 0 else end
            comment = data[pos + 1 : end].decode("ascii", "replace").split()
            if len(comment) == 3 and comment[0] == "range":
                try:
                    value_range_ = (float(comment[1]), float(comment[2]))
                except ValueError:
                    raise FormatError("bad range comment", line=line)
            pos = end
        elif c.isspace():
            if c == b"\n":
                line += 1
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
                pos += 1
            tokens.append(data[start:pos].decode("ascii", "replace"))
    magic = tokens[0]
    if magic not in ("P2", "P5"):
        raise FormatError("not a PGM file (magic %r)" % magic, line=1)
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError("bad PGM dimensions", line=line)
    if w < 1 or h < 1 or not 0 < maxval < 256:
        raise FormatError("unsupported PGM dimensions or maxval", line=line)
    if magic == "P5":
        raw = data[pos + 1 : pos + 1 + w * h]
        if len(raw) != w * h:
            raise FormatError("truncated P5 pixel data", line=line)
        px = np.frombuffer(raw, dtype=np.uint8).reshape(h, w).copy()
    else:
        vals = data[pos:].split()
        if len(vals) != w * h:
            raise FormatError("expected %d pixels, found %d" % (w * h, len(vals)), line=line)
        try:
            px = np.array([int(v) for v in vals], dtype=int).reshape(h, w)
        except ValueError:
            raise FormatError("non-integer pixel", line=line)
        if px.min() < 0 or px.max() > maxval:
            raise FormatError("pixel out of range", line=line)
        px = px.astype(np.uint8)
    return px, value_range_


def read(path):
    with open(path, "rb") as fh:
        return decode(fh.read())
