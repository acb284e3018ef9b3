"""Image containers, PNG/PPM I/O, patch grids and seeded random streams.

Images are plain ``float32`` arrays of shape ``(H, W, C)`` with ``C`` in
``{1, 3}`` and values in ``[0, 1]``.  Depth maps are ``(H, W)`` arrays in the
same range.  Channel order is RGB everywhere in this package.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
_PNM_MAGICS = (b"P5", b"P6")


class ImageIOError(OSError):
    """Raised when an image file cannot be read or written."""

    def __init__(self, path, cause: str):
        super().__init__(f"{path}: {cause}")
        self.path = Path(path)
        self.cause = cause


def as_image(data) -> np.ndarray:
    """Coerce ``data`` to an ``(H, W, C)`` float32 image, validating shape and range."""
    img = np.asarray(data, dtype=np.float32)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected HxWx1 or HxWx3 image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img


def _sniff(path: Path) -> str:
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head.startswith(_PNG_MAGIC):
        return "png"
    if head[:2] in _PNM_MAGICS:
        return "pnm"
    raise ImageIOError(path, "unsupported format (expected PNG or binary PPM/PGM)")


def load_image(path) -> np.ndarray:
    """Read an 8/16-bit PNG or binary PPM/PGM and map samples linearly to [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise ImageIOError(path, "no such file")
    _sniff(path)
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageIOError(path, "corrupt or undecodable image data")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ImageIOError(path, f"unsupported sample type {raw.dtype}")
    if raw.ndim == 2:
        raw = raw[:, :, None]
    elif raw.shape[2] == 4:
        raw = cv2.cvtColor(raw, cv2.COLOR_BGRA2RGB)
    elif raw.shape[2] == 3:
        raw = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
    elif raw.shape[2] == 2:
        raw = raw[:, :, :1]
    return (raw.astype(np.float64) / scale).astype(np.float32)


def load_depth(path) -> np.ndarray:
    """Load a grayscale depth map as an ``(H, W)`` array in [0, 1]."""
    img = load_image(path)
    if img.shape[2] != 1:
        raise ImageIOError(path, "depth map must be single-channel")
    return img[:, :, 0]


def to_integer_samples(img: np.ndarray, bits: int = 8) -> np.ndarray:
    """Quantize a [0, 1] image to unsigned integers with ``bits`` per sample."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    top = (1 << bits) - 1
    dtype = np.uint8 if bits == 8 else np.uint16
    vals = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.rint(vals * top).astype(dtype)


def save_image(img, path, bits: int = 8) -> None:
    """Write ``img`` as PNG or binary PPM/PGM depending on the file suffix."""
    path = Path(path)
    img = as_image(img)
    suffix = path.suffix.lower()
    if suffix not in (".png", ".ppm", ".pgm", ".pnm"):
        raise ImageIOError(path, f"unsupported output format {suffix!r}")
    if img.shape[2] == 3 and suffix == ".pgm":
        raise ImageIOError(path, "PGM output requires a single-channel image")
    if img.shape[2] == 1 and suffix == ".ppm":
        img = np.repeat(img, 3, axis=2)
    samples = to_integer_samples(img, bits)
    if samples.shape[2] == 3:
        samples = cv2.cvtColor(samples, cv2.COLOR_RGB2BGR)
    else:
        samples = samples[:, :, 0]
    if not path.parent.is_dir():
        raise ImageIOError(path, "parent directory does not exist")
    try:
        ok = cv2.imwrite(str(path), samples)
    except cv2.error as exc:
        raise ImageIOError(path, f"encoder failure: {exc}") from exc
    if not ok:
        raise ImageIOError(path, "could not write file")


@dataclass(frozen=True)
class PatchGrid:
    """Patches of an image laid out on a regular grid.

    ``features`` has shape ``(rows, cols, patch_size * patch_size * channels)``;
    each vector is a patch flattened in ``(y, x, c)`` scan order.
    """

    features: np.ndarray
    patch_size: int
    stride: int
    channels: int

    @property
    def rows(self) -> int:
        return self.features.shape[0]

    @property
    def cols(self) -> int:
        return self.features.shape[1]

    @property
    def dim(self) -> int:
        return self.features.shape[2]

    def flat(self) -> np.ndarray:
        """Features as an ``(rows * cols, dim)`` matrix in row-major cell order."""
        return self.features.reshape(-1, self.dim)


def extract_patches(img, patch_size: int, stride: int) -> PatchGrid:
    img = as_image(img)
    if patch_size < 1 or stride < 1:
        raise ValueError("patch_size and stride must be >= 1")
    h, w, c = img.shape
    if h < patch_size or w < patch_size:
        raise ValueError(f"image {h}x{w} is smaller than patch size {patch_size}")
    rows = (h - patch_size) // stride + 1
    cols = (w - patch_size) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(img, (patch_size, patch_size), axis=(0, 1))
    # windows: (h-p+1, w-p+1, c, p, p) -> take strided cells, reorder to (p, p, c)
    windows = windows[: (rows - 1) * stride + 1 : stride, : (cols - 1) * stride + 1 : stride]
    feats = np.ascontiguousarray(windows.transpose(0, 1, 3, 4, 2)).reshape(rows, cols, -1)
    return PatchGrid(feats, patch_size, stride, c)


def assemble_patches(grid: PatchGrid) -> np.ndarray:
    """Inverse of :func:`extract_patches` for non-overlapping grids."""
    if grid.stride != grid.patch_size:
        raise ValueError(
            f"cannot assemble overlapping grid (stride {grid.stride} != patch {grid.patch_size})"
        )
    p, c = grid.patch_size, grid.channels
    if grid.dim != p * p * c:
        raise ValueError(f"feature dim {grid.dim} does not match patch {p}x{p}x{c}")
    tiles = grid.features.reshape(grid.rows, grid.cols, p, p, c)
    return np.ascontiguousarray(tiles.transpose(0, 2, 1, 3, 4)).reshape(grid.rows * p, grid.cols * p, c)


def center_crop(img: np.ndarray, multiple: int) -> np.ndarray:
    """Crop ``img`` symmetrically so both spatial dimensions divide ``multiple``."""
    h, w = img.shape[:2]
    nh, nw = h - h % multiple, w - w % multiple
    if nh == 0 or nw == 0:
        raise ValueError(f"image {h}x{w} is smaller than {multiple}")
    top, left = (h - nh) // 2, (w - nw) // 2
    return img[top : top + nh, left : left + nw]


class RngStream:
    """Counter-based (Philox) random stream keyed by a 64-bit seed.

    ``substream(i)`` derives an independent stream for work item ``i`` so that
    per-item draws do not depend on processing order or thread count.
    """

    def __init__(self, seed: int, _spawn_key: tuple[int, ...] = ()):
        if not 0 <= int(seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self._spawn_key = tuple(_spawn_key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self._spawn_key)
        self.generator = np.random.Generator(np.random.Philox(ss))

    def substream(self, index: int) -> "RngStream":
        return RngStream(self.seed, self._spawn_key + (int(index),))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def random(self, size=None):
        return self.generator.random(size)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, key={self._spawn_key})"
