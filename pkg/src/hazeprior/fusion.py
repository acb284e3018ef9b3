"""Feature-alignment primitives: offset-driven bilinear warping and normalized addition.

Feature maps are ``(H, W, C)`` arrays; offset fields are ``(H, W, 2)`` arrays
holding ``(dy, dx)`` in cell units.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def bilinear_warp(src, offsets) -> np.ndarray:
    """Sample ``src`` at ``(y + dy, x + dx)`` with bilinear weights and zero padding."""
    src = np.asarray(src)
    offsets = np.asarray(offsets, dtype=np.float64)
    if src.ndim == 2:
        src = src[:, :, None]
    h, w, _ = src.shape
    if offsets.shape != (h, w, 2):
        raise ValueError(f"offset field {offsets.shape} does not match feature map {src.shape}")
    if not np.all(np.isfinite(offsets)):
        raise ValueError("offsets must be finite")

    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    py = ys + offsets[..., 0]
    px = xs + offsets[..., 1]
    y0 = np.floor(py).astype(np.int64)
    x0 = np.floor(px).astype(np.int64)
    fy = (py - y0)[..., None]
    fx = (px - x0)[..., None]

    data = src.astype(np.float64)
    out = np.zeros(data.shape)
    for dy, dx, wgt in (
        (0, 0, (1 - fy) * (1 - fx)),
        (0, 1, (1 - fy) * fx),
        (1, 0, fy * (1 - fx)),
        (1, 1, fy * fx),
    ):
        yy, xx = y0 + dy, x0 + dx
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = np.zeros(data.shape)
        vals[valid] = data[yy[valid], xx[valid]]
        out += wgt * vals
    return out.astype(src.dtype, copy=False)


def normalized_add(f, f_w, guard: float = 1e-6) -> np.ndarray:
    """``f + (sum(f) / sum(f_w)) * f_w`` with sums over every entry.

    Raises ``ZeroDivisionError`` when ``|sum(f_w)| < guard * f_w.size``.
    """
    f = np.asarray(f, dtype=np.float64)
    f_w = np.asarray(f_w, dtype=np.float64)
    if f.shape != f_w.shape:
        raise ValueError(f"shape mismatch: {f.shape} vs {f_w.shape}")
    # numpy's pairwise sum is deterministic for a fixed shape and dtype
    s_w = float(np.sum(f_w))
    if abs(s_w) < guard * f_w.size:
        raise ZeroDivisionError(f"sum of warped features {s_w:.3g} is below the guard threshold")
    return f + (float(np.sum(f)) / s_w) * f_w


def save_feature_map(arr, path) -> None:
    """JSON header line ``{"h", "w", "c"}`` followed by little-endian float32 data."""
    arr = np.asarray(arr, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    header = json.dumps({"h": h, "w": w, "c": c}).encode() + b"\n"
    Path(path).write_bytes(header + np.ascontiguousarray(arr).tobytes())


def load_feature_map(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    nl = blob.find(b"\n")
    if nl < 0:
        raise ValueError(f"{path}: missing header line")
    meta = json.loads(blob[:nl])
    h, w, c = int(meta["h"]), int(meta["w"]), int(meta["c"])
    payload = blob[nl + 1 :]
    if len(payload) != 4 * h * w * c:
        raise ValueError(f"{path}: expected {h}x{w}x{c} floats, got {len(payload)} bytes")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w, c).copy()
