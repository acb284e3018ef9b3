"""Phenomenological haze degradation and paired dataset synthesis.

The forward model is::

    I = JPEG( P( J**gamma + N, exp(-beta * depth), A + dA ) )
    P(J, t, A) = J * t + A * (1 - t)

with the low-light stage (gamma and noise together) and the JPEG stage each
enabled by an independent coin flip.  Every stage clamps its output to [0, 1].
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .imgcore import ImageIOError, RngStream, as_image, load_depth, load_image, save_image

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".ppm", ".pgm", ".pnm")


class DataError(Exception):
    """Input data is missing, unmatched or inconsistent."""


@dataclass(frozen=True)
class ParamRanges:
    gamma: tuple[float, float] = (1.5, 3.0)
    sigma: tuple[float, float] = (0.0, 0.02)
    beta: tuple[float, float] = (0.3, 1.5)
    a_base: tuple[float, float] = (0.25, 1.0)
    delta_a: tuple[float, float] = (-0.025, 0.025)
    jpeg_quality: tuple[int, int] = (30, 95)
    p_lowlight: float = 0.5
    p_jpeg: float = 0.5

    def validate(self) -> None:
        for name in ("gamma", "sigma", "beta", "a_base", "delta_a", "jpeg_quality"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
                raise ValueError(f"range {name}={lo, hi} is empty or inverted")
        if self.gamma[0] <= 0 or self.beta[0] <= 0 or self.sigma[0] < 0:
            raise ValueError("gamma and beta must be positive, sigma non-negative")
        if self.a_base[0] <= 0 or self.a_base[1] > 1:
            raise ValueError("a_base must lie in (0, 1]")
        if self.jpeg_quality[0] < 1 or self.jpeg_quality[1] > 100:
            raise ValueError("jpeg_quality must lie in [1, 100]")
        for p in (self.p_lowlight, self.p_jpeg):
            if not 0.0 <= p <= 1.0:
                raise ValueError("stage probabilities must lie in [0, 1]")


@dataclass(frozen=True)
class DegradationParams:
    gamma: float = 1.0
    sigma: float = 0.0
    beta: float = 1.0
    a_base: float = 1.0
    delta_a: tuple[float, float, float] = (0.0, 0.0, 0.0)
    jpeg_quality: int = 95
    apply_lowlight: bool = False
    apply_jpeg: bool = False
    seed: int = 0

    def airlight(self) -> np.ndarray:
        """Per-channel atmospheric light ``a_base + delta_a`` clamped to (0, 1]."""
        a = self.a_base + np.asarray(self.delta_a, dtype=np.float64)
        return np.clip(a, np.finfo(np.float32).tiny, 1.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["delta_a"] = list(self.delta_a)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationParams":
        d = dict(d)
        d["delta_a"] = tuple(float(v) for v in d["delta_a"])
        return cls(**d)


@dataclass
class HazySample:
    hazy: np.ndarray
    clean: np.ndarray
    depth: np.ndarray
    params: DegradationParams
    transmission: np.ndarray = field(repr=False, default=None)


def transmission_from_depth(depth, beta: float) -> np.ndarray:
    """t(x) = exp(-beta * d(x)); decays with depth, equals 1 at zero depth."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    d = np.asarray(depth, dtype=np.float64)
    if d.size and (d.min() < 0 or d.max() > 1):
        raise ValueError("depth must lie in [0, 1]")
    return np.exp(-beta * d)


def scattering(J, t, A) -> np.ndarray:
    """Atmospheric scattering I = J*t + A*(1-t), clamped to [0, 1]."""
    J = as_image(J).astype(np.float64)
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 2:
        t = t[:, :, None]
    if t.shape[:2] != J.shape[:2]:
        raise ValueError(f"transmission {t.shape[:2]} does not match image {J.shape[:2]}")
    A = np.broadcast_to(np.asarray(A, dtype=np.float64).reshape(-1), (3,))[: J.shape[2]]
    if np.any(A <= 0) or np.any(A > 1):
        raise ValueError("atmospheric light components must lie in (0, 1]")
    out = J * t + A * (1.0 - t)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def apply_gamma(J, gamma: float) -> np.ndarray:
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    J = np.clip(as_image(J).astype(np.float64), 0.0, 1.0)
    return np.power(J, gamma).astype(np.float32)


def add_gaussian_noise(J, sigma: float, rng: RngStream) -> np.ndarray:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    J = as_image(J)
    if sigma == 0:
        return J.copy()
    noise = rng.normal(0.0, sigma, size=J.shape)
    return np.clip(J.astype(np.float64) + noise, 0.0, 1.0).astype(np.float32)


def jpeg_roundtrip(img, quality: int) -> np.ndarray:
    """Baseline JPEG encode/decode (4:2:0 chroma for colour input)."""
    quality = int(quality)
    if not 1 <= quality <= 100:
        raise ValueError("JPEG quality must lie in [1, 100]")
    img = as_image(img)
    samples = np.rint(np.clip(img.astype(np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    if img.shape[2] == 3:
        samples = cv2.cvtColor(samples, cv2.COLOR_RGB2BGR)
    else:
        samples = samples[:, :, 0]
    flags = [
        cv2.IMWRITE_JPEG_QUALITY, quality,
        cv2.IMWRITE_JPEG_OPTIMIZE, 0,
        cv2.IMWRITE_JPEG_PROGRESSIVE, 0,
        cv2.IMWRITE_JPEG_SAMPLING_FACTOR, cv2.IMWRITE_JPEG_SAMPLING_FACTOR_420,
    ]
    ok, buf = cv2.imencode(".jpg", samples, flags)
    if not ok:
        raise RuntimeError("JPEG encoding failed")
    dec = cv2.imdecode(buf, cv2.IMREAD_UNCHANGED)
    if dec is None:
        raise RuntimeError("JPEG decoding failed")
    if dec.ndim == 2:
        dec = dec[:, :, None]
    else:
        dec = cv2.cvtColor(dec, cv2.COLOR_BGR2RGB)
    if dec.shape != img.shape:
        raise RuntimeError(f"JPEG round trip changed shape {img.shape} -> {dec.shape}")
    return (dec.astype(np.float64) / 255.0).astype(np.float32)


def sample_params(rng: RngStream, ranges: ParamRanges | None = None) -> DegradationParams:
    """Draw one degradation realization; the draw order is fixed for reproducibility."""
    ranges = ranges or ParamRanges()
    ranges.validate()
    u = rng.uniform
    gamma = float(u(*ranges.gamma))
    sigma = float(u(*ranges.sigma))
    beta = float(u(*ranges.beta))
    a_base = float(u(*ranges.a_base))
    delta_a = tuple(float(v) for v in u(*ranges.delta_a, size=3))
    q_lo, q_hi = ranges.jpeg_quality
    jpeg_quality = int(rng.integers(q_lo, q_hi + 1))
    apply_lowlight = bool(rng.random() < ranges.p_lowlight)
    apply_jpeg = bool(rng.random() < ranges.p_jpeg)
    seed = int(rng.integers(0, 2**63))
    return DegradationParams(
        gamma=gamma,
        sigma=sigma,
        beta=beta,
        a_base=a_base,
        delta_a=delta_a,
        jpeg_quality=jpeg_quality,
        apply_lowlight=apply_lowlight,
        apply_jpeg=apply_jpeg,
        seed=seed,
    )


def degrade(J, depth, params: DegradationParams) -> HazySample:
    """Apply the full degradation pipeline; a pure function of its arguments."""
    clean = as_image(J)
    depth = np.asarray(depth, dtype=np.float32)
    if depth.ndim == 3 and depth.shape[2] == 1:
        depth = depth[:, :, 0]
    if depth.shape != clean.shape[:2]:
        raise ValueError(f"depth {depth.shape} does not match image {clean.shape[:2]}")

    x = clean
    if params.apply_lowlight:
        x = apply_gamma(x, params.gamma)
        x = add_gaussian_noise(x, params.sigma, RngStream(params.seed))
    t = transmission_from_depth(depth, params.beta)
    x = scattering(x, t, params.airlight())
    if params.apply_jpeg:
        x = jpeg_roundtrip(x, params.jpeg_quality)
    return HazySample(hazy=x, clean=clean, depth=depth, params=params, transmission=t)


def invert_scattering(I, t, A) -> np.ndarray:
    """Closed-form recovery of J from I, t and A (no clamping)."""
    I = np.asarray(I, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 2:
        t = t[:, :, None]
    A = np.asarray(A, dtype=np.float64).reshape(-1)[: I.shape[2]]
    return (I - A * (1.0 - t)) / t


def _list_images(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def _pair_sources(clean_dir: Path, depth_dir: Path, strict: bool) -> list[tuple[Path, Path]]:
    for d in (clean_dir, depth_dir):
        if not d.is_dir():
            raise DataError(f"{d}: directory does not exist")
    depth_by_stem = {}
    for p in _list_images(depth_dir):
        depth_by_stem.setdefault(p.stem, p)
    pairs = []
    for clean in _list_images(clean_dir):
        depth = depth_by_stem.get(clean.stem)
        if depth is None:
            msg = f"{clean}: no depth map with stem {clean.stem!r} in {depth_dir}"
            if strict:
                raise DataError(msg)
            log.warning("skipping %s", msg)
            continue
        pairs.append((clean, depth))
    return pairs


def synth_dataset(
    clean_dir,
    depth_dir,
    out_dir,
    count: int,
    seed: int,
    *,
    ranges: ParamRanges | None = None,
    strict: bool = False,
    workers: int = 1,
) -> Path:
    """Materialize ``count`` hazy samples plus ``manifest.json`` under ``out_dir``.

    Sources are cycled in sorted filename order.  Sample ``i`` draws its
    parameters from substream ``i`` of ``seed``, so the output does not depend
    on ``workers``.  Hazy paths in the manifest are relative to ``out_dir``.
    """
    clean_dir, depth_dir, out_dir = Path(clean_dir), Path(depth_dir), Path(out_dir)
    if count < 0:
        raise ValueError("count must be non-negative")
    ranges = ranges or ParamRanges()
    ranges.validate()
    pairs = _pair_sources(clean_dir, depth_dir, strict) if count else []
    if count and not pairs:
        raise DataError(f"{clean_dir}: no usable clean/depth pairs")

    hazy_dir = out_dir / "hazy"
    hazy_dir.mkdir(parents=True, exist_ok=True)
    root = RngStream(seed)

    def make(i: int):
        clean_path, depth_path = pairs[i % len(pairs)]
        try:
            J = load_image(clean_path)
            depth = load_depth(depth_path)
            if J.shape[2] == 1:
                J = np.repeat(J, 3, axis=2)
            params = sample_params(root.substream(i), ranges)
            sample = degrade(J, depth, params)
        except (ImageIOError, ValueError) as exc:
            if strict:
                raise DataError(str(exc)) from exc
            log.warning("skipping sample %d: %s", i, exc)
            return None
        rel = Path("hazy") / f"{i:05d}_{clean_path.stem}.png"
        save_image(sample.hazy, out_dir / rel)
        return {
            "id": i,
            "clean_path": str(clean_path),
            "depth_path": str(depth_path),
            "hazy_path": rel.as_posix(),
            "params": params.to_dict(),
        }

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(make, range(count)))
    else:
        records = [make(i) for i in range(count)]
    records = [r for r in records if r is not None]

    manifest = {"seed": int(seed), "count": len(records), "samples": records}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path
