"""Binary PGM (P5) reading and writing for 8-bit grayscale images."""

from pathlib import Path

import numpy as np

from .errors import DecodeError


def write_pgm(path, img):
    arr = np.asarray(img, dtype=np.uint8)
    h, w = arr.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + arr.tobytes())


def read_pgm(path):
    data = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DecodeError("truncated PGM header", path=str(path))
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise DecodeError("not a binary PGM (P5) file", path=str(path))
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval > 255:
        raise DecodeError("16-bit PGM is not supported", path=str(path))
    body = data[pos + 1 : pos + 1 + w * h]
    if len(body) != w * h:
        raise DecodeError("truncated PGM pixel data", path=str(path))
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()


def scale_to_byte(values):
    """Linearly map a real-valued grid onto 0..255 (all-zero if flat)."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi <= lo:
        return np.zeros(v.shape, dtype=np.uint8)
    return np.floor((v - lo) * (255.0 / (hi - lo)) + 0.5).astype(np.uint8)
