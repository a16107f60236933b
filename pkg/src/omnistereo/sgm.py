"""Semi-global aggregation on spherical cost volumes, depth extraction, metrics.

Per path direction the standard normalized recurrence is applied:

    L(p, n) = C(p, n) + min(L(q, n), L(q, n+-1) + P1, min_k L(q, k) + P2)
                      - min_k L(q, k)

with q the predecessor pixel along the path. Horizontal (and diagonal) paths
wrap in theta when requested. For wrapped horizontal paths every pixel's path
starts one full revolution earlier with L = C, so the definition has no
distinguished seam column and the aggregation commutes with column rotation
exactly. Invalid cells contribute the range maximum (1) inside paths and stay
flagged invalid. All arithmetic is float64 in a fixed order, so results are
bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cost import CostVolume
from .sweep import inverse_depth

__all__ = [
    "SgmParams", "InverseDepthMap", "DepthMetrics", "sgm_aggregate", "wta",
    "error_map", "compute_metrics", "PATH_DIRECTIONS_4", "PATH_DIRECTIONS_8",
]

PATH_DIRECTIONS_4 = ("right", "left", "down", "up")
PATH_DIRECTIONS_8 = PATH_DIRECTIONS_4 + ("downright", "downleft", "upright", "upleft")

INVALID_COST = 1.0


@dataclass(frozen=True)
class SgmParams:
    p1: float = 0.1
    p2: float = 12.0
    paths: int = 8
    wrap_horizontal: bool = True

    def __post_init__(self):
        if not (0.0 <= self.p1 <= self.p2):
            raise ValueError("penalties must satisfy 0 <= P1 <= P2")
        if self.paths not in (4, 8):
            raise ValueError("paths must be 4 or 8")


@dataclass
class InverseDepthMap:
    """Winner sphere indices with their inverse depths and metric depths."""

    index: np.ndarray
    inv_depth: np.ndarray
    depth: np.ndarray
    mask: np.ndarray


@dataclass
class DepthMetrics:
    pct_gt1: float
    pct_gt3: float
    pct_gt5: float
    mae: float
    rms: float

    def to_dict(self):
        return {">1": self.pct_gt1, ">3": self.pct_gt3, ">5": self.pct_gt5,
                "mae": self.mae, "rms": self.rms}


def _step(C_cur, e_prev, p1, p2, start_mask=None):
    """One DP step; e_prev is the normalized previous state (same shape as C_cur)."""
    m = e_prev.copy()
    m[..., :-1] = np.minimum(m[..., :-1], e_prev[..., 1:] + p1)
    m[..., 1:] = np.minimum(m[..., 1:], e_prev[..., :-1] + p1)
    np.minimum(m, p2, out=m)
    L = C_cur + m
    if start_mask is not None and np.any(start_mask):
        L[start_mask] = C_cur[start_mask]
    e = L - L.min(axis=-1, keepdims=True)
    return L, e


def _aggregate_horizontal(C, p1, p2, reverse, wrap):
    """C is (H, W, N); returns the per-direction aggregated volume."""
    H, W, N = C.shape
    out = np.empty_like(C)
    if wrap:
        # every column's path wraps the full ring once; advance all rings in
        # lockstep by rolling the state one column per step
        shift = -1 if reverse else 1
        L = C.copy()
        e = L - L.min(axis=-1, keepdims=True)
        for _ in range(W - 1):
            e = np.roll(e, shift, axis=1)
            L, e = _step(C, e, p1, p2)
        return L
    cols = range(W - 1, -1, -1) if reverse else range(W)
    e = None
    for w in cols:
        if e is None:
            L = C[:, w].copy()
            e = L - L.min(axis=-1, keepdims=True)
        else:
            L, e = _step(C[:, w], e, p1, p2)
        out[:, w] = L
    return out


def _aggregate_vertical(C, p1, p2, reverse):
    H, W, N = C.shape
    out = np.empty_like(C)
    rows = range(H - 1, -1, -1) if reverse else range(H)
    e = None
    for h in rows:
        if e is None:
            L = C[h].copy()
            e = L - L.min(axis=-1, keepdims=True)
        else:
            L, e = _step(C[h], e, p1, p2)
        out[h] = L
    return out


def _aggregate_diagonal(C, p1, p2, down, right, wrap):
    """Diagonal paths march across rows, shifting one column per row."""
    H, W, N = C.shape
    out = np.empty_like(C)
    rows = range(H) if down else range(H - 1, -1, -1)
    shift = 1 if right else -1
    e = None
    for h in rows:
        if e is None:
            L = C[h].copy()
            e = L - L.min(axis=-1, keepdims=True)
        else:
            e = np.roll(e, shift, axis=0)
            start = None
            if not wrap:
                start = np.zeros(W, dtype=bool)
                start[0 if right else W - 1] = True
            L, e = _step(C[h], e, p1, p2, start_mask=start)
        out[h] = L
    return out


def _aggregate_one(C, params: SgmParams, direction):
    p1, p2, wrap = params.p1, params.p2, params.wrap_horizontal
    if direction == "right":
        return _aggregate_horizontal(C, p1, p2, reverse=False, wrap=wrap)
    if direction == "left":
        return _aggregate_horizontal(C, p1, p2, reverse=True, wrap=wrap)
    if direction == "down":
        return _aggregate_vertical(C, p1, p2, reverse=False)
    if direction == "up":
        return _aggregate_vertical(C, p1, p2, reverse=True)
    if direction == "downright":
        return _aggregate_diagonal(C, p1, p2, down=True, right=True, wrap=wrap)
    if direction == "downleft":
        return _aggregate_diagonal(C, p1, p2, down=True, right=False, wrap=wrap)
    if direction == "upright":
        return _aggregate_diagonal(C, p1, p2, down=False, right=True, wrap=wrap)
    if direction == "upleft":
        return _aggregate_diagonal(C, p1, p2, down=False, right=False, wrap=wrap)
    raise ValueError(f"unknown path direction {direction!r}")


def sgm_aggregate(volume: CostVolume, params: SgmParams | None = None,
                  directions=None) -> CostVolume:
    """Sum of per-direction DP volumes; invalid cells traversed at cost 1.

    ``directions`` overrides the path set (used by the oracle tests); by
    default it follows ``params.paths``. Summation order is fixed.
    """
    params = params or SgmParams()
    N = volume.data.shape[0]
    if N < 2:
        raise ValueError("cost volume needs at least 2 spheres for aggregation")
    if directions is None:
        directions = PATH_DIRECTIONS_8 if params.paths == 8 else PATH_DIRECTIONS_4
    C = np.where(volume.mask, volume.data, INVALID_COST).astype(np.float64)
    C = np.ascontiguousarray(C.transpose(1, 2, 0))  # (H, W, N)
    total = np.zeros_like(C)
    for d in directions:
        total += _aggregate_one(C, params, d)
    return CostVolume(data=total.transpose(2, 0, 1), mask=volume.mask.copy(),
                      grid=volume.grid)


def wta(volume: CostVolume) -> InverseDepthMap:
    """Winner-takes-all: per-pixel argmin over valid cells, ties to smaller n."""
    data = np.where(volume.mask, volume.data, np.inf)
    idx = np.argmin(data, axis=0)
    valid = volume.mask.any(axis=0)
    index = np.where(valid, idx, 0).astype(np.int32)
    inv = np.asarray(inverse_depth(index, volume.grid), dtype=float)
    return InverseDepthMap(index=index, inv_depth=inv, depth=1.0 / inv, mask=valid)


def error_map(pred: InverseDepthMap, gt: InverseDepthMap, n_spheres: int):
    """Index error scaled to a 0..100 range: (100/N) * |n_pred - n_gt|.

    Returns (errors, mask); invalid where either side is invalid.
    """
    if pred.index.shape != gt.index.shape:
        raise ValueError("depth maps differ in size")
    e = (100.0 / n_spheres) * np.abs(pred.index.astype(np.int64) - gt.index.astype(np.int64))
    return e.astype(float), pred.mask & gt.mask


def compute_metrics(errors, mask=None) -> DepthMetrics:
    """Outlier percentages (strictly greater), MAE and RMS over valid pixels."""
    errors = np.asarray(errors, dtype=float)
    vals = errors[mask] if mask is not None else errors.ravel()
    if vals.size == 0:
        raise ValueError("no valid pixels to evaluate")
    return DepthMetrics(
        pct_gt1=float(100.0 * np.mean(vals > 1.0)),
        pct_gt3=float(100.0 * np.mean(vals > 3.0)),
        pct_gt5=float(100.0 * np.mean(vals > 5.0)),
        mae=float(np.mean(vals)),
        rms=float(np.sqrt(np.mean(vals * vals))),
    )
