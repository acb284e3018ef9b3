"""Patch codebooks: k-means fitting, nearest-code matching and usage profiles.

A learned VQ encoder is replaced by raw flattened patches; the matching,
reconstruction and frequency machinery is unchanged by that substitution.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .imgcore import PatchGrid, RngStream, assemble_patches

log = logging.getLogger(__name__)

MAGIC = b"HQPC"
VERSION = 1
_HEADER = struct.Struct("<4sHIIHB")


@dataclass(frozen=True)
class Codebook:
    codes: np.ndarray  # (K, dim) float32
    patch_size: int = 0
    channels: int = 0
    fingerprint: str = ""

    def __post_init__(self):
        codes = np.ascontiguousarray(self.codes, dtype=np.float32)
        if codes.ndim != 2 or codes.shape[0] < 1:
            raise ValueError(f"codes must be a non-empty (K, dim) matrix, got {codes.shape}")
        if not np.all(np.isfinite(codes)):
            raise ValueError("codes contain non-finite values")
        object.__setattr__(self, "codes", codes)

    @property
    def K(self) -> int:
        return self.codes.shape[0]

    @property
    def dim(self) -> int:
        return self.codes.shape[1]

    def save(self, path) -> None:
        header = _HEADER.pack(MAGIC, VERSION, self.K, self.dim, self.patch_size, self.channels)
        Path(path).write_bytes(header + self.codes.astype("<f4").tobytes())

    @classmethod
    def load(cls, path) -> "Codebook":
        blob = Path(path).read_bytes()
        if len(blob) < _HEADER.size:
            raise ValueError(f"{path}: truncated codebook header")
        magic, version, K, dim, patch_size, channels = _HEADER.unpack_from(blob)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise ValueError(f"{path}: unsupported codebook version {version}")
        payload = blob[_HEADER.size :]
        if len(payload) != 4 * K * dim:
            raise ValueError(f"{path}: expected {K}x{dim} floats, got {len(payload)} bytes")
        codes = np.frombuffer(payload, dtype="<f4").reshape(K, dim)
        return cls(codes, patch_size, channels, fingerprint=hashlib.sha256(payload).hexdigest()[:16])


@dataclass(frozen=True)
class CodeGrid:
    indices: np.ndarray  # (rows, cols) int64
    distances: np.ndarray  # (rows, cols) float64

    @property
    def rows(self) -> int:
        return self.indices.shape[0]

    @property
    def cols(self) -> int:
        return self.indices.shape[1]


@dataclass(frozen=True)
class FrequencyProfile:
    freq: np.ndarray
    sample_count: int

    @property
    def K(self) -> int:
        return self.freq.shape[0]

    @classmethod
    def from_counts(cls, counts) -> "FrequencyProfile":
        counts = np.asarray(counts, dtype=np.int64)
        total = int(counts.sum())
        if total <= 0:
            raise ValueError("cannot build a profile from zero samples")
        return cls(counts / total, total)

    def top(self, n: int = 10) -> list[tuple[int, float]]:
        order = np.argsort(-self.freq, kind="stable")[:n]
        return [(int(k), float(self.freq[k])) for k in order]

    def to_json(self) -> dict:
        return {"K": self.K, "sample_count": self.sample_count, "freq": self.freq.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "FrequencyProfile":
        freq = np.asarray(d["freq"], dtype=np.float64)
        if freq.shape != (int(d["K"]),):
            raise ValueError("profile K does not match freq length")
        if np.any(freq < 0) or abs(freq.sum() - 1.0) > 1e-9:
            raise ValueError("profile is not a probability vector")
        return cls(freq, int(d["sample_count"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path) -> "FrequencyProfile":
        return cls.from_json(json.loads(Path(path).read_text()))


def euclidean(features, codes) -> np.ndarray:
    """Pairwise Euclidean distances ``(N, K)`` computed by direct differences."""
    x = np.asarray(features, dtype=np.float64)
    z = np.asarray(codes, dtype=np.float64)
    if x.ndim != 2 or z.ndim != 2 or x.shape[1] != z.shape[1]:
        raise ValueError(f"dimension mismatch: features {x.shape}, codes {z.shape}")
    if x.shape[0] == 0:
        return np.zeros((0, z.shape[0]))
    return cdist(x, z, "euclidean")


def _kmeans_pp(x: np.ndarray, K: int, gen: np.random.Generator, init=None) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((K, x.shape[1]))
    if init is None or len(init) == 0:
        centers[0] = x[gen.integers(n)]
        start = 1
    else:
        start = len(init)
        centers[:start] = init
    d2 = cdist(x, centers[:start], "sqeuclidean").min(axis=1)
    for j in range(start, K):
        total = d2.sum()
        if total <= 0:
            # remaining points coincide with chosen centers; pick any unused row
            idx = gen.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), gen.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[j] = x[idx]
        d2 = np.minimum(d2, cdist(x, centers[j : j + 1], "sqeuclidean")[:, 0])
    return centers


def _dedupe(codes: np.ndarray, jitter: float = 1e-6) -> np.ndarray:
    codes = codes.copy()
    for _ in range(8):
        _, first, inverse = np.unique(codes, axis=0, return_index=True, return_inverse=True)
        if first.size == codes.shape[0]:
            return codes
        seen: dict[int, int] = {}
        for i, grp in enumerate(inverse.ravel()):
            rank = seen.get(grp, 0)
            if rank:
                codes[i] += np.float32(jitter * rank)
            seen[grp] = rank + 1
    raise RuntimeError("could not separate duplicate codes")


def fit_kmeans(
    features,
    K: int,
    max_iters: int = 50,
    seed: int = 0,
    *,
    patch_size: int = 0,
    channels: int = 0,
    history: list | None = None,
    init=None,
) -> Codebook:
    """Lloyd's algorithm with k-means++ seeding.

    ``init`` optionally fixes the first seeds (e.g. the codes of a smaller
    codebook); the remaining ones are drawn by k-means++.  Starting from a
    smaller fit this way the objective can never exceed that fit's.
    If ``history`` is given, the objective (sum of squared distances to the
    assigned center) after every assignment step is appended to it.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be an (N, dim) matrix")
    if K < 1:
        raise ValueError("K must be >= 1")
    n_distinct = np.unique(x, axis=0).shape[0] if x.size else 0
    if n_distinct < K:
        raise ValueError(f"need at least K={K} distinct features, got {n_distinct}")

    if init is not None:
        init = np.asarray(init, dtype=np.float64)
        if init.ndim != 2 or init.shape[1] != x.shape[1] or init.shape[0] > K:
            raise ValueError(f"init centers {init.shape} incompatible with K={K}, dim={x.shape[1]}")

    gen = RngStream(seed).generator
    centers = _kmeans_pp(x, K, gen, init)
    labels = None
    for it in range(max_iters):
        d2 = cdist(x, centers, "sqeuclidean")
        new = np.argmin(d2, axis=1)
        objective = float(d2[np.arange(x.shape[0]), new].sum())
        if history is not None:
            history.append(objective)
        log.debug("kmeans iter %d objective %.6g", it, objective)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        counts = np.bincount(labels, minlength=K)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        nonempty = counts > 0
        # empty clusters keep their previous center
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]

    codes = _dedupe(centers.astype(np.float32))
    fp = hashlib.sha256(
        np.ascontiguousarray(x).tobytes() + struct.pack("<IIQ", K, max_iters, seed)
    ).hexdigest()[:16]
    return Codebook(codes, patch_size, channels, fingerprint=fp)


def match_nearest(feature, cb: Codebook) -> tuple[int, float]:
    """Index and Euclidean distance of the nearest code; ties go to the lowest index."""
    f = np.asarray(feature, dtype=np.float64).reshape(1, -1)
    if f.shape[1] != cb.dim:
        raise ValueError(f"feature dim {f.shape[1]} != codebook dim {cb.dim}")
    d = euclidean(f, cb.codes)[0]
    k = int(np.argmin(d))
    return k, float(d[k])


def quantize_grid(grid: PatchGrid, cb: Codebook) -> CodeGrid:
    if grid.dim != cb.dim and grid.rows * grid.cols:
        raise ValueError(f"grid feature dim {grid.dim} != codebook dim {cb.dim}")
    d = euclidean(grid.flat(), cb.codes)
    idx = np.argmin(d, axis=1) if d.shape[0] else np.zeros(0, dtype=np.int64)
    dist = d[np.arange(d.shape[0]), idx]
    shape = (grid.rows, grid.cols)
    return CodeGrid(idx.astype(np.int64).reshape(shape), dist.reshape(shape))


def reconstruct_from_codes(cg: CodeGrid, cb: Codebook, geometry: tuple[int, int] | None = None) -> np.ndarray:
    """Replace each cell by its code reshaped to a patch and reassemble.

    ``geometry`` is ``(patch_size, channels)``; defaults to the codebook's own.
    """
    patch_size, channels = geometry or (cb.patch_size, cb.channels)
    if patch_size < 1 or channels < 1 or patch_size * patch_size * channels != cb.dim:
        raise ValueError(f"geometry {patch_size}x{patch_size}x{channels} does not fit codebook dim {cb.dim}")
    if np.any(cg.indices < 0) or np.any(cg.indices >= cb.K):
        raise ValueError("code index out of range")
    feats = cb.codes[cg.indices]
    img = assemble_patches(PatchGrid(feats, patch_size, patch_size, channels))
    return np.clip(img, 0.0, 1.0)


def activation_frequency(codegrids, K: int) -> FrequencyProfile:
    """Empirical code usage over all cells; integer counts, so order-insensitive."""
    counts = np.zeros(K, dtype=np.int64)
    for cg in codegrids:
        idx = np.asarray(cg.indices if isinstance(cg, CodeGrid) else cg).ravel()
        if idx.size and (idx.min() < 0 or idx.max() >= K):
            raise ValueError(f"code index out of range [0, {K})")
        counts += np.bincount(idx, minlength=K)
    if counts.sum() == 0:
        raise ValueError("no cells to profile")
    return FrequencyProfile.from_counts(counts)
