"""Pairwise matching costs on spherical images and cost-volume fusion.

The sphere wraps horizontally, so cost windows are circular in theta and
clamped in phi: rows within half a window of the top/bottom borders are
invalid. Costs are mapped to [0, 1] with 0 for a perfect match.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from .sweep import SphereGrid, SphericalImage, warp

__all__ = [
    "CostMap", "CostVolume", "PairSelection", "normalize_image", "zncc_cost",
    "fuse", "build_cost_volume", "fuse_pair_volumes", "load_external_cost_maps",
]

VARIANCE_FLOOR = 1e-12


@dataclass
class CostMap:
    data: np.ndarray
    mask: np.ndarray


@dataclass
class CostVolume:
    """Fused matching costs, n-major: data[n, row, col]."""

    data: np.ndarray
    mask: np.ndarray
    grid: SphereGrid

    def __post_init__(self):
        if self.data.shape != self.mask.shape or self.data.ndim != 3:
            raise ValueError("cost volume needs matching (N, H, W) data and mask")


@dataclass
class PairSelection:
    """Unordered camera pairs considered for matching, with an overlap gate."""

    pairs: list
    min_overlap: float = 0.05

    def __post_init__(self):
        norm = []
        for i, j in self.pairs:
            if i == j:
                raise ValueError("camera pairs must be distinct")
            norm.append((min(i, j), max(i, j)))
        if len(set(norm)) != len(norm):
            raise ValueError("duplicate camera pair")
        self.pairs = norm

    @classmethod
    def all_pairs(cls, n_cameras, min_overlap=0.05):
        return cls(list(combinations(range(n_cameras), 2)), min_overlap)


def normalize_image(data, mask=None):
    """Zero-mean/unit-variance over valid pixels.

    Returns (normalized, degenerate): a constant image cannot be normalized
    and comes back as zeros with the flag set. Invalid pixels are zeroed.
    """
    data = np.asarray(data, dtype=float)
    if mask is None:
        mask = np.ones(data.shape, dtype=bool)
    vals = data[mask]
    if vals.size == 0:
        raise ValueError("cannot normalize an image with no valid pixels")
    mean = vals.mean()
    var = vals.var()
    if var < VARIANCE_FLOOR:
        return np.zeros_like(data), True
    out = np.where(mask, (data - mean) / np.sqrt(var), 0.0)
    return out, False


def _box_sum_wrapped(arr, r):
    """Windowed sums over (2r+1)^2 boxes: circular in columns, 'valid' in rows.

    arr is (H, W); output is (H - 2r, W) float64. Sums accumulate over the
    same relative offsets in the same order for every pixel, so the result
    commutes exactly with column rotation (prefix-sum tricks would not).
    """
    H, W = arr.shape
    arr = np.asarray(arr, dtype=np.float64)
    horiz = arr.copy()
    for d in range(1, r + 1):
        horiz += np.roll(arr, d, axis=1)
        horiz += np.roll(arr, -d, axis=1)
    out = horiz[r: H - r].copy()
    for d in range(1, r + 1):
        out += horiz[r - d: H - r - d]
        out += horiz[r + d: H - r + d]
    return out


def zncc_cost(a: SphericalImage, b: SphericalImage, window: int = 9) -> CostMap:
    """Windowed zero-mean normalized cross-correlation cost, (1 - zncc) / 2.

    A pixel is valid only if the full window is valid in both images and both
    patch variances clear the texture floor.
    """
    if a.data.shape != b.data.shape:
        raise ValueError("spherical images differ in size")
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be an odd integer >= 3")
    H, W = a.data.shape
    if W < window:
        raise ValueError("image width must be at least the window size")
    r = window // 2
    if H < window:
        return CostMap(np.zeros((H, W)), np.zeros((H, W), dtype=bool))
    M = float(window * window)
    joint = a.mask & b.mask
    bad = (~joint).astype(np.float64)

    s_a = _box_sum_wrapped(a.data, r)
    s_b = _box_sum_wrapped(b.data, r)
    s_aa = _box_sum_wrapped(a.data * a.data, r)
    s_bb = _box_sum_wrapped(b.data * b.data, r)
    s_ab = _box_sum_wrapped(a.data * b.data, r)
    n_bad = _box_sum_wrapped(bad, r)

    mu_a = s_a / M
    mu_b = s_b / M
    var_a = s_aa / M - mu_a * mu_a
    var_b = s_bb / M - mu_b * mu_b
    cov = s_ab / M - mu_a * mu_b
    ok = (n_bad < 0.5) & (var_a >= VARIANCE_FLOOR) & (var_b >= VARIANCE_FLOOR)
    with np.errstate(divide="ignore", invalid="ignore"):
        zncc = cov / np.sqrt(var_a * var_b)
    zncc = np.clip(zncc, -1.0, 1.0)
    core = np.where(ok, (1.0 - zncc) / 2.0, 0.0)

    data = np.zeros((H, W))
    mask = np.zeros((H, W), dtype=bool)
    data[r: H - r] = core
    mask[r: H - r] = ok
    return CostMap(data, mask)


def fuse(maps) -> CostMap:
    """Per-pixel mean over the maps valid at that pixel.

    Contributions are summed in sorted value order, which makes the result
    independent of the argument order down to the last bit.
    """
    maps = list(maps)
    if not maps:
        raise ValueError("nothing to fuse")
    shape = maps[0].data.shape
    for m in maps:
        if m.data.shape != shape:
            raise ValueError("cost maps differ in size")
    stack = np.stack([np.where(m.mask, m.data, 0.0) for m in maps])
    counts = np.sum([m.mask for m in maps], axis=0)
    stack.sort(axis=0, kind="stable")
    total = stack.sum(axis=0)
    any_valid = counts > 0
    data = np.divide(total, counts, out=np.zeros(shape, dtype=float), where=any_valid)
    return CostMap(data, any_valid)


def build_cost_volume(images, intrinsics, rig_frame, grid: SphereGrid,
                      cost_fn=None, pairs: PairSelection | None = None,
                      image_masks=None, window: int = 9) -> CostVolume:
    """Warp, match and fuse all selected camera pairs over all spheres.

    ``cost_fn(a, b) -> CostMap`` defaults to the windowed ZNCC cost. Pairs
    whose warped overlap at a sphere falls below the selection threshold are
    skipped for that sphere.
    """
    n_cams = len(images)
    if n_cams < 2:
        raise ValueError("need at least two cameras to build a cost volume")
    if pairs is None:
        pairs = PairSelection.all_pairs(n_cams)
    if cost_fn is None:
        def cost_fn(x, y):
            return zncc_cost(x, y, window)
    if image_masks is None:
        image_masks = [None] * n_cams
    used = sorted({i for pr in pairs.pairs for i in pr})
    for i in used:
        if i >= n_cams:
            raise ValueError(f"pair references camera {i} but only {n_cams} images given")

    data = np.zeros((grid.n_spheres, grid.height, grid.width), dtype=np.float32)
    mask = np.zeros((grid.n_spheres, grid.height, grid.width), dtype=bool)
    npix = float(grid.height * grid.width)
    for n in range(grid.n_spheres):
        warped = {}
        for i in used:
            warped[i] = warp(images[i], intrinsics[i], rig_frame.cam_from_rig[i], n,
                             grid, image_mask=image_masks[i], camera_id=i)
        slice_maps = []
        for (i, j) in pairs.pairs:
            overlap = np.count_nonzero(warped[i].mask & warped[j].mask) / npix
            if overlap < pairs.min_overlap:
                continue
            try:
                slice_maps.append(cost_fn(warped[i], warped[j]))
            except Exception as exc:
                raise RuntimeError(f"cost computation failed for pair ({i},{j}) "
                                   f"at sphere {n}: {exc}") from exc
        if slice_maps:
            fused = fuse(slice_maps)
            data[n] = fused.data.astype(np.float32)
            mask[n] = fused.mask
    return CostVolume(data=data, mask=mask, grid=grid)


def load_external_cost_maps(path, grid: SphereGrid | None = None):
    """Load per-pair cost volumes written by an external cost function.

    ``path`` is a directory of ``pair_<i>_<j>.ocsv`` files (or one such file);
    each holds the full (N, H, W) stack of cost maps for that camera pair.
    Returns {(i, j): (data float32, mask bool)}.
    """
    from . import formats  # local import; formats depends on this module's types
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("pair_*_*.ocsv"))
        if not files:
            raise formats.FormatError(f"no pair_<i>_<j>.ocsv files in {p}")
    elif p.is_file():
        files = [p]
    else:
        raise FileNotFoundError(f"no such cost-map source: {p}")
    out = {}
    for f in files:
        parts = f.stem.split("_")
        if len(parts) != 3 or not (parts[1].isdigit() and parts[2].isdigit()):
            raise formats.FormatError(f"cannot parse camera pair from file name {f.name!r}")
        key = (int(parts[1]), int(parts[2]))
        data, mask = formats.read_ocsv(f)
        if grid is not None:
            want = (grid.n_spheres, grid.height, grid.width)
            if data.shape != want:
                raise formats.FormatError(
                    f"{f.name}: volume shape {data.shape} does not match grid {want}")
        vals = data[mask]
        if vals.size and (vals.min() < 0.0 or vals.max() > 1.0):
            raise formats.FormatError(f"{f.name}: valid costs outside [0, 1]")
        out[key] = (data, mask)
    return out


def fuse_pair_volumes(pair_volumes, grid: SphereGrid) -> CostVolume:
    """Fuse externally computed per-pair volumes {(i, j): (data, mask)}."""
    if not pair_volumes:
        raise ValueError("no pair volumes given")
    shape = (grid.n_spheres, grid.height, grid.width)
    for key, (d, m) in pair_volumes.items():
        if d.shape != shape or m.shape != shape:
            raise ValueError(f"pair {key} volume shape {d.shape} does not match grid {shape}")
    data = np.zeros(shape, dtype=np.float32)
    mask = np.zeros(shape, dtype=bool)
    items = [pair_volumes[k] for k in sorted(pair_volumes)]
    for n in range(grid.n_spheres):
        fused = fuse([CostMap(d[n].astype(np.float64), m[n]) for d, m in items])
        data[n] = fused.data.astype(np.float32)
        mask[n] = fused.mask
    return CostVolume(data=data, mask=mask, grid=grid)
