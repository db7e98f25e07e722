"""Image and depth-map file I/O: PFM floats, PNG images and masks."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def write_pfm(path, data: np.ndarray) -> None:
    """Write a grayscale PFM (32-bit float, little-endian, scale -1.0).

    Rows are stored bottom-to-top per the PFM convention.
    """
    arr = np.asarray(data, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"PFM writer expects a 2-D array, got shape {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(arr[::-1].tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"Pf":
            raise ValueError(f"{path}: expected grayscale PFM magic 'Pf', got {magic!r}")
        w, h = (int(x) for x in fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(4 * w * h), dtype=dtype).reshape(h, w)
    return data[::-1].astype(np.float64)


def write_mask_png(path, mask: np.ndarray) -> None:
    arr = (np.asarray(mask, dtype=bool) * np.uint8(255))
    Image.fromarray(arr, mode="L").save(path)


def read_mask_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L")) > 127


def write_image_png(path, image: np.ndarray) -> None:
    """Write an RGB or grayscale [0, 1] float image as 8-bit PNG."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    mode = "L" if data.ndim == 2 else "RGB"
    Image.fromarray(data, mode=mode).save(path)


def read_image_png(path) -> np.ndarray:
    """Read a PNG as float RGB in [0, 1]."""
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0


def write_heatmap_png(path, values: np.ndarray) -> None:
    """Write non-negative scalar values as a normalized grayscale heatmap."""
    arr = np.asarray(values, dtype=np.float64)
    peak = arr.max()
    norm = arr / peak if peak > 0 else np.zeros_like(arr)
    write_image_png(path, norm)


def ensure_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path
