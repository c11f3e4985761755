"""Image and depth-map files: PNG/JPEG through Pillow, PFM by hand."""

from __future__ import annotations

import re
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DomainError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def read_image(path) -> np.ndarray:
    """Float RGB in [0, 1], shape (H, W, 3)."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_image(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DomainError(f"expected (H, W, 3) image, got {rgb.shape}")
    u8 = np.round(np.clip(np.nan_to_num(rgb), 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(u8, "RGB").save(path)


def write_pfm(path, data: np.ndarray) -> None:
    """Single-channel (H, W) or color (H, W, 3) float map; NaN survives the round trip."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        header = "Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = "PF"
    else:
        raise DomainError(f"PFM holds (H, W) or (H, W, 3) maps, got {data.shape}")
    H, W = data.shape[:2]
    scale = -1.0 if sys.byteorder == "little" else 1.0
    with open(path, "wb") as f:
        f.write(f"{header}\n{W} {H}\n{scale}\n".encode("ascii"))
        # PFM rows run bottom to top
        f.write(np.ascontiguousarray(data[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    m = re.match(rb"(P[Ff])\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s", raw)
    if m is None:
        raise DomainError(f"{path}: not a PFM file")
    channels = 3 if m.group(1) == b"PF" else 1
    W, H = int(m.group(2)), int(m.group(3))
    dtype = "<f4" if float(m.group(4)) < 0 else ">f4"
    body = np.frombuffer(raw, dtype=dtype, count=W * H * channels, offset=m.end())
    shape = (H, W, 3) if channels == 3 else (H, W)
    return body.reshape(shape)[::-1].astype(np.float64)


def list_images(folder) -> dict[str, Path]:
    """Image files in ``folder`` keyed by stem."""
    out = {}
    for p in sorted(Path(folder).iterdir()):
        if p.suffix.lower() in IMAGE_SUFFIXES:
            out[p.stem] = p
    return out
