"""Raster map files: binary PGM masks and PFM float maps.

Masks are P5 PGM with maxval 255, value 255 inside. Float maps are PFM
(`Pf` scalar / `PF` 3-channel), little-endian (scale -1.0), float32, with the
standard bottom-to-top scanline order.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ShapeMismatchError


def save_pgm_mask(path, mask: np.ndarray) -> None:
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ShapeMismatchError("mask must be 2D")
    h, w = mask.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write((mask.astype(np.uint8) * 255).tobytes())


def load_pgm_mask(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, offset = _read_header_tokens(data, 4)
    if tokens[0] != b"P5":
        raise IOError(f"{path}: not a binary PGM file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise IOError(f"{path}: expected maxval 255, got {maxval}")
    pixels = np.frombuffer(data[offset:offset + w * h], dtype=np.uint8)
    if len(pixels) != w * h:
        raise IOError(f"{path}: truncated pixel data")
    return (pixels.reshape(h, w) >= 128)


def save_pfm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        magic = b"Pf"
        h, w = image.shape
    elif image.ndim == 3 and image.shape[2] == 3:
        magic = b"PF"
        h, w = image.shape[:2]
    else:
        raise ShapeMismatchError("image must be HxW or HxWx3")
    with open(path, "wb") as fh:
        fh.write(magic + b"\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.ascontiguousarray(image[::-1]).astype("<f4").tobytes())


def load_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, offset = _read_header_tokens(data, 4)
    magic = tokens[0]
    if magic not in (b"Pf", b"PF"):
        raise IOError(f"{path}: not a PFM file")
    w, h = int(tokens[1]), int(tokens[2])
    scale = float(tokens[3])
    channels = 3 if magic == b"PF" else 1
    count = w * h * channels
    dtype = "<f4" if scale < 0 else ">f4"
    values = np.frombuffer(data[offset:offset + count * 4], dtype=dtype)
    if len(values) != count:
        raise IOError(f"{path}: truncated pixel data")
    if channels == 1:
        image = values.reshape(h, w)
    else:
        image = values.reshape(h, w, 3)
    return np.ascontiguousarray(image[::-1]).astype(np.float32)


def _read_header_tokens(data: bytes, n_tokens: int):
    """Whitespace-separated header tokens followed by a single separator byte."""
    tokens = []
    i = 0
    while len(tokens) < n_tokens:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        start = i
        while i < len(data) and not data[i:i + 1].isspace():
            i += 1
        if start == i:
            raise IOError("truncated header")
        tokens.append(data[start:i])
    return tokens, i + 1
