"""Binary P6 PPM reader/writer for (3, h, w) float images in [0, 1].

Zero-dependency and bit-exact: channel values are clamped to [0, 1] and
scaled to one byte, so a write/read round trip moves any value by at most
1/255. Only the binary P6 variant with maxval 255 is accepted.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"write_ppm: expected a (3, h, w) image, got shape {image.shape}")
    h, w = image.shape[1:]
    payload = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(payload.transpose(1, 2, 0).tobytes())  # interleave to RGB per pixel


def _read_token(fh) -> bytes:
    """Next whitespace-delimited header token, skipping '#' comments."""
    token = b""
    while True:
        ch = fh.read(1)
        if ch == b"":
            raise ValueError("ppm: truncated header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = fh.read(1)
            continue
        if ch.isspace():
            if token:
                return token
            continue
        token += ch


def read_ppm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(2)
        if magic != b"P6":
            raise ValueError(f"ppm: unsupported magic {magic!r}, only binary P6 is handled")
        try:
            w = int(_read_token(fh))
            h = int(_read_token(fh))
            maxval = int(_read_token(fh))
        except ValueError as err:
            raise ValueError(f"ppm: malformed header in {path}: {err}") from None
        if w < 1 or h < 1:
            raise ValueError(f"ppm: bad dimensions {w}x{h}")
        if maxval != 255:
            raise ValueError(f"ppm: only maxval 255 supported, got {maxval}")
        payload = fh.read(3 * w * h)
        if len(payload) != 3 * w * h:
            raise ValueError(f"ppm: truncated payload, expected {3 * w * h} bytes, got {len(payload)}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return pixels.transpose(2, 0, 1).astype(np.float64) / 255.0
