"""Deterministic 1-D signal primitives.

DTW uses absolute-difference local cost with no window constraint. The
dynamic programs are compiled with numba; everything else is numpy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

DEFAULT_CROP_RANGE = (0.6, 0.9)


class SignalError(ValueError):
    pass


@dataclass(frozen=True)
class WaveletBands:
    high: np.ndarray
    low: np.ndarray


def _as_series(x, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise SignalError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise SignalError(f"{name} must be non-empty")
    return arr


# --------------------------------------------------------------------- Haar


def haar_low(x: np.ndarray) -> np.ndarray:
    """Undecimated Haar approximation band, periodic boundary. Works on the last axis."""
    return (x + np.roll(x, -1, axis=-1)) / 2.0


def haar_high(x: np.ndarray) -> np.ndarray:
    """Undecimated Haar detail band, periodic boundary. Works on the last axis."""
    return (x - np.roll(x, -1, axis=-1)) / 2.0


def haar_analysis(x) -> WaveletBands:
    """Split ``x`` into same-length high and low bands with ``high + low == x``."""
    arr = _as_series(x)
    if arr.size < 2:
        raise SignalError(f"haar_analysis needs at least 2 samples, got {arr.size}")
    return WaveletBands(high=haar_high(arr), low=haar_low(arr))


# ---------------------------------------------------------------------- DTW


@numba.njit(cache=True)
def _accumulate(a, b):
    n, m = a.shape[0], b.shape[0]
    D = np.full((n + 1, m + 1), np.inf)
    D[0, 0] = 0.0
    for i in range(1, n + 1):
        ai = a[i - 1]
        for j in range(1, m + 1):
            best = D[i - 1, j - 1]
            if D[i - 1, j] < best:
                best = D[i - 1, j]
            if D[i, j - 1] < best:
                best = D[i, j - 1]
            D[i, j] = abs(ai - b[j - 1]) + best
    return D


@numba.njit(cache=True)
def _distance(a, b):
    m = b.shape[0]
    prev = np.full(m + 1, np.inf)
    cur = np.empty(m + 1)
    prev[0] = 0.0
    for i in range(a.shape[0]):
        cur[0] = np.inf
        ai = a[i]
        for j in range(1, m + 1):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = abs(ai - b[j - 1]) + best
        prev, cur = cur, prev
    return prev[m]


@numba.njit(cache=True)
def _traceback(D):
    # D has the (n+1, m+1) layout of _accumulate; returns (len, 2) index pairs
    i, j = D.shape[0] - 1, D.shape[1] - 1
    out = np.empty((i + j, 2), dtype=np.int64)
    k = 0
    while True:
        out[k, 0] = i - 1
        out[k, 1] = j - 1
        k += 1
        if i == 1 and j == 1:
            break
        diag = D[i - 1, j - 1]
        up = D[i - 1, j]
        left = D[i, j - 1]
        # diagonal first, then the i-predecessor
        if diag <= up and diag <= left:
            i -= 1
            j -= 1
        elif up <= left:
            i -= 1
        else:
            j -= 1
    return out[:k][::-1].copy()


@numba.njit(cache=True)
def _cross_distances(xs, ys):
    out = np.empty((xs.shape[0], ys.shape[0]))
    for p in range(xs.shape[0]):
        for q in range(ys.shape[0]):
            out[p, q] = _distance(xs[p], ys[q])
    return out


@numba.njit(cache=True)
def _pairwise_distances(xs):
    n = xs.shape[0]
    out = np.zeros((n, n))
    for p in range(n):
        for q in range(p + 1, n):
            d = _distance(xs[p], xs[q])
            out[p, q] = d
            out[q, p] = d
    return out


def dtw_distance(a, b) -> float:
    """Classic DTW distance with |a_i - b_j| local cost."""
    a = _as_series(a, "a")
    b = _as_series(b, "b")
    return float(_distance(a, b))


def dtw_path(a, b) -> list[tuple[int, int]]:
    """Optimal warping path from (0, 0) to (len(a)-1, len(b)-1).

    Ties are broken toward the diagonal predecessor, then the one that
    decrements the index into ``a``.
    """
    a = _as_series(a, "a")
    b = _as_series(b, "b")
    return [(int(i), int(j)) for i, j in _traceback(_accumulate(a, b))]


def dtw_cross(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """DTW distance for every (row of xs, row of ys) pair."""
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    if xs.ndim != 2 or ys.ndim != 2 or xs.shape[1] == 0 or ys.shape[1] == 0:
        raise SignalError(f"dtw_cross expects non-empty 2-D arrays, got {xs.shape} and {ys.shape}")
    return _cross_distances(xs, ys)


def dtw_pairwise(xs: np.ndarray) -> np.ndarray:
    """Symmetric matrix of DTW distances between the rows of ``xs``."""
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] == 0:
        raise SignalError(f"dtw_pairwise expects a non-empty 2-D array, got {xs.shape}")
    return _pairwise_distances(xs)


def path_cost(a, b, path) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(sum(abs(a[i] - b[j]) for i, j in path))


# ------------------------------------------------------------- aggregation


def resample(x: np.ndarray, n: int) -> np.ndarray:
    """Linear interpolation of ``x`` onto ``n`` evenly spaced points spanning it."""
    x = np.asarray(x, dtype=np.float64)
    if n < 1:
        raise SignalError(f"target length must be positive, got {n}")
    if x.size == 1:
        return np.full(n, x[0])
    pos = np.linspace(0.0, x.size - 1, n)
    return np.interp(pos, np.arange(x.size, dtype=np.float64), x)


@numba.njit(cache=True)
def _merge_along_path(a, b, path):
    out = np.empty(path.shape[0])
    for k in range(path.shape[0]):
        out[k] = (a[path[k, 0]] + b[path[k, 1]]) / 2.0
    return out


@numba.njit(cache=True)
def _warp_aggregate(a, b):
    merged = _merge_along_path(a, b, _traceback(_accumulate(a, b)))
    n, p = a.shape[0], merged.shape[0]
    out = np.empty(n)
    if p == 1:
        out[:] = merged[0]
        return out
    if n == 1:
        out[0] = merged[0]
        return out
    step = (p - 1.0) / (n - 1.0)
    for k in range(n):
        pos = k * step
        lo = int(pos)
        if lo >= p - 1:
            out[k] = merged[p - 1]
        else:
            frac = pos - lo
            out[k] = merged[lo] + frac * (merged[lo + 1] - merged[lo])
    return out


@numba.njit(cache=True)
def _warp_aggregate_rows(A, B):
    out = np.empty_like(A)
    for r in range(A.shape[0]):
        out[r] = _warp_aggregate(A[r], B[r])
    return out


def warp_aggregate(a, b) -> np.ndarray:
    """Average ``a`` and ``b`` along their warping path, resampled onto ``a``'s length."""
    a = _as_series(a, "a")
    b = _as_series(b, "b")
    return _warp_aggregate(a, b)


def warp_aggregate_rows(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Row-wise :func:`warp_aggregate` for two arrays of shape (rows, length)."""
    A = np.ascontiguousarray(A, dtype=np.float64)
    B = np.ascontiguousarray(B, dtype=np.float64)
    if A.ndim != 2 or A.shape != B.shape or A.shape[1] == 0:
        raise SignalError(f"warp_aggregate_rows needs equal non-empty 2-D shapes, got {A.shape}, {B.shape}")
    return _warp_aggregate_rows(A, B)


# ---------------------------------------------------------------- windowing


def sliding_windows(x, H: int) -> np.ndarray:
    """All length-``H`` windows with step 1, as an array of shape (len(x) - H + 1, H)."""
    arr = _as_series(x)
    if H < 1:
        raise SignalError(f"window length must be positive, got {H}")
    if H > arr.size:
        raise SignalError(f"window length {H} exceeds sequence length {arr.size}")
    return np.lib.stride_tricks.sliding_window_view(arr, H).copy()


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def crop_resize(
    x,
    target_len: int,
    crop_fraction: float | None = None,
    offset_fraction: float | None = None,
    rng: np.random.Generator | None = None,
    crop_range: tuple[float, float] = DEFAULT_CROP_RANGE,
) -> np.ndarray:
    """Contiguous crop of ``x`` linearly resampled to ``target_len``.

    Fractions left as None are drawn from ``rng``: the crop fraction uniformly
    from ``crop_range`` and the offset fraction uniformly from [0, 1).
    """
    arr = _as_series(x)
    if crop_fraction is None or offset_fraction is None:
        if rng is None:
            raise SignalError("crop_resize needs explicit fractions or an rng")
        if crop_fraction is None:
            crop_fraction = float(rng.uniform(*crop_range))
        if offset_fraction is None:
            offset_fraction = float(rng.uniform(0.0, 1.0))
    if not 0.0 < crop_fraction <= 1.0:
        raise SignalError(f"crop_fraction must be in (0, 1], got {crop_fraction}")
    if not 0.0 <= offset_fraction < 1.0:
        raise SignalError(f"offset_fraction must be in [0, 1), got {offset_fraction}")
    n = arr.size
    crop_len = _round_half_up(crop_fraction * n)
    if crop_len < 2:
        raise SignalError(f"crop of {crop_len} samples is degenerate (need >= 2)")
    start = _round_half_up(offset_fraction * (n - crop_len))
    return resample(arr[start : start + crop_len], target_len)
