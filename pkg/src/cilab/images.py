"""Binary PGM (P5) reading and writing for sample grids."""

from __future__ import annotations

import numpy as np

from .exceptions import FormatError


def write_pgm(path, image: np.ndarray) -> None:
    """Write an 8-bit grayscale image as binary PGM."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise FormatError(f"PGM needs a 2-d image, got shape {img.shape}")
    if img.dtype != np.uint8:
        if img.min() < 0 or img.max() > 255:
            raise FormatError("pixel values outside [0, 255]")
        img = img.astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(b"P5"):
        raise FormatError(f"{path}: not a binary PGM")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos] in b" \t\r\n":
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] not in b"\r\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and raw[pos] not in b" \t\r\n":
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1   # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    if len(raw) - pos < w * h:
        raise FormatError(f"{path}: truncated pixel data")
    return np.frombuffer(raw, np.uint8, count=w * h, offset=pos).reshape(h, w).copy()
