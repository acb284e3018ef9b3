"""Controllable code matching: frequency-weighted distances and alpha calibration.

Each code k gets a multiplicative distance weight ``exp(alpha * delta_k)``
where ``delta_k = f_h[k] - f_c[k]`` is how much more often the code fires on
hazy input than on clean input.  Positive alpha therefore discourages codes
that are over-used on hazy data.  ``calibrate_alpha`` picks the alpha whose
re-matched hazy usage is closest, in forward KL, to the clean usage.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codebook import Codebook, FrequencyProfile, euclidean

log = logging.getLogger(__name__)

KL_EPS = 1e-8
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0

_matrix_builds = 0


def distance_matrix_builds() -> int:
    """Number of :func:`distance_matrix` calls so far in this process."""
    return _matrix_builds


@dataclass(frozen=True)
class DeltaProfile:
    delta: np.ndarray

    def __post_init__(self):
        delta = np.asarray(self.delta, dtype=np.float64)
        if delta.ndim != 1 or delta.size < 1:
            raise ValueError("delta must be a non-empty vector")
        if np.any(np.abs(delta) > 1.0) or abs(delta.sum()) > 1e-9:
            raise ValueError("delta must lie in [-1, 1] and sum to zero")
        object.__setattr__(self, "delta", delta)

    @property
    def K(self) -> int:
        return self.delta.shape[0]

    @classmethod
    def from_profiles(cls, f_h: FrequencyProfile, f_c: FrequencyProfile) -> "DeltaProfile":
        if f_h.K != f_c.K:
            raise ValueError(f"profile sizes differ: {f_h.K} vs {f_c.K}")
        return cls(f_h.freq - f_c.freq)

    @classmethod
    def zeros(cls, K: int) -> "DeltaProfile":
        return cls(np.zeros(K))

    def to_json(self) -> dict:
        return {"K": self.K, "delta": self.delta.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "DeltaProfile":
        dp = cls(d["delta"])
        if dp.K != int(d["K"]):
            raise ValueError("delta profile K does not match vector length")
        return dp

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path) -> "DeltaProfile":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class CalibrationResult:
    alpha_hat: float
    kl_at_alpha_hat: float
    trace: list[tuple[float, float]] = field(default_factory=list)

    def kl_at(self, alpha: float) -> float:
        for a, v in self.trace:
            if a == alpha:
                return v
        raise KeyError(alpha)

    def to_json(self) -> dict:
        return {
            "alpha_hat": self.alpha_hat,
            "kl": self.kl_at_alpha_hat,
            "trace": [{"alpha": a, "kl": v} for a, v in self.trace],
        }


def weight(f_tilde: float, alpha: float) -> float:
    return math.exp(float(alpha) * float(f_tilde))


def weights(delta, alpha: float) -> np.ndarray:
    """Vectorised :func:`weight` over a whole delta vector."""
    return np.exp(float(alpha) * np.asarray(delta, dtype=np.float64))


def match_chm(feature, cb: Codebook, dp: DeltaProfile, alpha: float) -> tuple[int, float]:
    """argmin_k weight(delta_k, alpha) * ||feature - z_k||, ties to the lowest index."""
    if dp.K != cb.K:
        raise ValueError(f"delta profile has K={dp.K}, codebook K={cb.K}")
    f = np.asarray(feature, dtype=np.float64).reshape(1, -1)
    if f.shape[1] != cb.dim:
        raise ValueError(f"feature dim {f.shape[1]} != codebook dim {cb.dim}")
    wd = euclidean(f, cb.codes)[0] * weights(dp.delta, alpha)
    k = int(np.argmin(wd))
    return k, float(wd[k])


def distance_matrix(features, cb: Codebook) -> np.ndarray:
    """All feature-to-code distances ``(N, K)``; alpha-independent, so build once per sweep."""
    global _matrix_builds
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1 and x.size == 0:
        x = x.reshape(0, cb.dim)
    d = euclidean(x, cb.codes)
    _matrix_builds += 1
    return d


def assign_at_alpha(dm: np.ndarray, dp: DeltaProfile, alpha: float) -> np.ndarray:
    """Row-wise weighted argmin of a distance matrix."""
    dm = np.asarray(dm)
    if dm.ndim != 2 or dm.shape[1] != dp.K:
        raise ValueError(f"distance matrix {dm.shape} incompatible with K={dp.K}")
    if dm.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return np.argmin(dm * weights(dp.delta, alpha), axis=1).astype(np.int64)


def histogram_at_alpha(dm: np.ndarray, dp: DeltaProfile, alpha: float) -> FrequencyProfile:
    idx = assign_at_alpha(dm, dp, alpha)
    if idx.size == 0:
        raise ValueError("empty distance matrix")
    return FrequencyProfile.from_counts(np.bincount(idx, minlength=dp.K))


def sweep_assignments(dm: np.ndarray, dp: DeltaProfile, alphas) -> dict[float, np.ndarray]:
    return {float(a): assign_at_alpha(dm, dp, a) for a in alphas}


def _smooth(p) -> np.ndarray:
    p = np.asarray(p.freq if isinstance(p, FrequencyProfile) else p, dtype=np.float64) + KL_EPS
    return p / p.sum()


def kl_divergence(p_c, p_h) -> float:
    """Forward KL(p_c || p_h) with additive smoothing and renormalisation."""
    a, b = _smooth(p_c), _smooth(p_h)
    if a.shape != b.shape:
        raise ValueError(f"profile sizes differ: {a.shape[0]} vs {b.shape[0]}")
    return max(0.0, float(np.sum(a * (np.log(a) - np.log(b)))))


def _grid(a: float, b: float, step: float) -> list[float]:
    lo, hi = math.ceil(a / step - 1e-9), math.floor(b / step + 1e-9)
    pts = [a] + [round(k * step, 10) for k in range(lo, hi + 1)] + [b]
    return [p for p in pts if a <= p <= b]


def calibrate_alpha(
    dm: np.ndarray,
    dp: DeltaProfile,
    p_c: FrequencyProfile,
    search_range: tuple[float, float] = (-60.0, 60.0),
    tolerance: float = 0.05,
    grid_span: float | None = None,
    coarse_step: float | None = 1.0,
) -> CalibrationResult:
    """Minimise KL(p_c || P_h(alpha)) over ``search_range``.

    KL(alpha) is piecewise constant and not guaranteed unimodal.  A scan at
    ``coarse_step`` picks a bracket of +-``coarse_step`` around the best
    coarse point (``coarse_step=None`` keeps the whole range), a
    golden-section shrink narrows it to ``grid_span`` (default
    ``32 * tolerance``), and a sweep at step ``tolerance`` over the surviving
    bracket settles the answer.  The result is the best point of the whole
    trace; alpha = 0 is always traced when it lies in range.  Ties prefer the
    smaller ``|alpha|``.
    """
    lo, hi = (float(v) for v in search_range)
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
        raise ValueError(f"degenerate search range {search_range}")
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    dm = np.asarray(dm)
    if dm.ndim != 2 or dm.shape[0] == 0:
        raise ValueError("empty distance matrix")
    if p_c.K != dp.K:
        raise ValueError(f"clean profile K={p_c.K} != delta K={dp.K}")
    grid_span = 32 * tolerance if grid_span is None else grid_span

    trace: list[tuple[float, float]] = []
    cache: dict[float, float] = {}

    def f(alpha: float) -> float:
        alpha = float(alpha)
        if alpha not in cache:
            cache[alpha] = kl_divergence(p_c, histogram_at_alpha(dm, dp, alpha))
            trace.append((alpha, cache[alpha]))
        return cache[alpha]

    if lo <= 0.0 <= hi:
        f(0.0)

    a, b = lo, hi
    if coarse_step is not None and coarse_step > 0 and hi - lo > 2 * coarse_step:
        for alpha in _grid(lo, hi, coarse_step):
            f(alpha)
        centre = min(trace, key=lambda t: (t[1], abs(t[0]), t[0]))[0]
        a, b = max(lo, centre - coarse_step), min(hi, centre + coarse_step)
    c, d = b - _INV_PHI * (b - a), a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > grid_span:
        if fc < fd or (fc == fd and abs(c) <= abs(d)):
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)

    for alpha in _grid(a, b, tolerance):
        f(alpha)

    best_alpha, best_kl = min(trace, key=lambda t: (t[1], abs(t[0]), t[0]))
    inside = min(v for x, v in trace if a <= x <= b)
    if best_kl < inside:
        log.warning(
            "KL(alpha) not unimodal: best bracket [%.4g, %.4g] KL=%.6g, outside point alpha=%.4g KL=%.6g",
            a, b, inside, best_alpha, best_kl,
        )
    return CalibrationResult(best_alpha, best_kl, trace)
