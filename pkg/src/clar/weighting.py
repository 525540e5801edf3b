"""Activity-aware pair weights from DTW distance to static templates.

A window far (in DTW) from every activity-free template probably contains
motion. The share of windows scoring above the sample's own mean response
becomes the sample weight, and a positive pair's weight is the sum of its
members' weights.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from clar.signal import dtw_cross, sliding_windows


class WeightingError(ValueError):
    pass


def default_window(length: int) -> int:
    """Window length H = L / 8, rounded, at least 4."""
    return max(4, int(round(length / 8)))


@dataclass(frozen=True)
class StaticTemplate:
    window: np.ndarray

    @property
    def H(self) -> int:
        return len(self.window)


@dataclass(frozen=True)
class ResponseMap:
    scores: np.ndarray
    sigma_s: float

    def __post_init__(self):
        if np.any(self.scores < 0):
            raise WeightingError("response scores must be non-negative")

    @classmethod
    def from_scores(cls, scores) -> "ResponseMap":
        scores = np.asarray(scores, dtype=np.float64)
        if scores.size == 0:
            raise WeightingError("empty response map")
        return cls(scores=scores, sigma_s=float(scores.mean()))

    @property
    def indicator(self) -> np.ndarray:
        return self.scores > self.sigma_s


@dataclass(frozen=True)
class PairWeight:
    w_i: float
    w_j: float

    @property
    def w_pair(self) -> float:
        return pair_weight(self.w_i, self.w_j)


def select_templates(static_pool, K: int, H: int, rng: np.random.Generator) -> list[StaticTemplate]:
    """Draw K distinct (sequence, offset) windows of length H from the activity-free pool."""
    if K < 1:
        raise WeightingError(f"K must be >= 1, got {K}")
    if H < 1:
        raise WeightingError(f"H must be >= 1, got {H}")
    pool = [np.asarray(s, dtype=np.float64) for s in static_pool]
    if not pool:
        raise WeightingError("static pool is empty")
    for s in pool:
        if s.ndim != 1 or len(s) < H:
            raise WeightingError(f"static sequence of shape {s.shape} is shorter than H = {H}")
    positions = [(p, o) for p, s in enumerate(pool) for o in range(len(s) - H + 1)]
    if K > len(positions):
        raise WeightingError(f"K = {K} exceeds the {len(positions)} available template positions")
    chosen = rng.choice(len(positions), size=K, replace=False)
    return [StaticTemplate(pool[positions[c][0]][positions[c][1] : positions[c][1] + H].copy()) for c in chosen]


def _template_matrix(templates, H: int) -> np.ndarray:
    if len(templates) == 0:
        raise WeightingError("need at least one template")
    rows = [np.asarray(getattr(t, "window", t), dtype=np.float64) for t in templates]
    for r in rows:
        if r.shape != (H,):
            raise WeightingError(f"template of shape {r.shape} does not have length H = {H}")
    return np.array(rows)


def response_map(x, templates, H: int) -> ResponseMap:
    """Mean DTW distance from every length-H window of ``x`` to the templates."""
    T = _template_matrix(templates, H)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or len(x) < H:
        raise WeightingError(f"sequence of shape {x.shape} is shorter than H = {H}")
    return ResponseMap.from_scores(dtw_cross(sliding_windows(x, H), T).mean(axis=1))


def sample_weight(rmap: ResponseMap, alpha: float, floor: float = 0.0) -> float:
    """(fraction of windows scoring strictly above sigma_s) ** alpha, optionally floored."""
    if alpha <= 0:
        raise WeightingError(f"alpha must be positive, got {alpha}")
    if not 0.0 <= floor <= 1.0:
        raise WeightingError(f"floor must be in [0, 1], got {floor}")
    if rmap.scores.size == 0:
        raise WeightingError("empty response map")
    frac = np.count_nonzero(rmap.indicator) / rmap.scores.size
    return max(floor, float(frac**alpha))


def pair_weight(w_i: float, w_j: float) -> float:
    return float(w_i) + float(w_j)


def batch_weights(xs: np.ndarray, templates, H: int, alpha: float, floor: float = 0.0) -> np.ndarray:
    """Sample weights for every row of ``xs``."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    return np.array([sample_weight(response_map(x, templates, H), alpha, floor) for x in xs])
