"""End-to-end orchestration: sweep, cost volume, depth, panorama, point cloud."""

from __future__ import annotations

import numpy as np

from .camera import bilinear_sample, fov_mask, project
from .cost import CostVolume, PairSelection, build_cost_volume, normalize_image
from .sgm import InverseDepthMap, SgmParams, sgm_aggregate, wta
from .sweep import RigFrame, SphereGrid, warp

__all__ = [
    "normalize_inputs", "sweep_all", "zncc_volume", "depth_from_volume",
    "render_panorama", "point_cloud",
]


def normalize_inputs(images, intrinsics):
    """Per-image zero-mean/unit-variance over the FOV-valid pixels."""
    out = []
    for img, intr in zip(images, intrinsics):
        norm, _ = normalize_image(img, fov_mask(intr))
        out.append(norm)
    return out


def sweep_all(images, intrinsics, rig_frame: RigFrame, grid: SphereGrid):
    """Yield (camera index, sphere index, SphericalImage) over all pairs."""
    for n in range(grid.n_spheres):
        for i, img in enumerate(images):
            yield i, n, warp(img, intrinsics[i], rig_frame.cam_from_rig[i], n, grid,
                             camera_id=i)


def zncc_volume(images, intrinsics, rig_frame, grid, window=9,
                pairs: PairSelection | None = None, normalize=True) -> CostVolume:
    if normalize:
        images = normalize_inputs(images, intrinsics)
    return build_cost_volume(images, intrinsics, rig_frame, grid,
                             pairs=pairs, window=window)


def depth_from_volume(volume: CostVolume, params: SgmParams | None = None,
                      aggregate=True) -> InverseDepthMap:
    if aggregate:
        volume = sgm_aggregate(volume, params)
    return wta(volume)


def render_panorama(depth: InverseDepthMap, images, intrinsics,
                    rig_frame: RigFrame, grid: SphereGrid):
    """Reproject estimated 3D points into the nearest input camera.

    For finite-depth pixels the camera closest to the 3D point is sampled;
    pixels at infinity use the camera viewing that direction most frontally.
    Returns (panorama, mask); invalid where the depth is invalid or the chosen
    camera cannot see the point.
    """
    dirs = grid.ray_grid()
    pts = dirs * depth.depth[..., None]
    n_cams = len(images)
    metric = np.empty((n_cams,) + depth.depth.shape)
    at_inf = depth.index == 0
    for i in range(n_cams):
        cp = rig_frame.cam_from_rig[i]
        center = cp.center()
        dist = np.linalg.norm(pts - center, axis=-1)
        Xc = pts @ cp.R.T + cp.t
        psi = np.arctan2(np.hypot(Xc[..., 0], Xc[..., 1]), Xc[..., 2])
        metric[i] = np.where(at_inf, psi, dist)
    chosen = np.argmin(metric, axis=0)

    pano = np.zeros(depth.depth.shape)
    ok = np.zeros(depth.depth.shape, dtype=bool)
    for i in range(n_cams):
        sel = (chosen == i) & depth.mask
        if not np.any(sel):
            continue
        cp = rig_frame.cam_from_rig[i]
        Xc = pts[sel] @ cp.R.T + cp.t
        px, pvalid = project(Xc, intrinsics[i])
        vals, svalid = bilinear_sample(images[i], fov_mask(intrinsics[i]), px)
        good = pvalid & svalid
        idx = np.flatnonzero(sel.ravel())[good]
        pano.ravel()[idx] = vals[good]
        ok.ravel()[idx] = True
    return pano, ok


def point_cloud(depth: InverseDepthMap, grid: SphereGrid, intensity=None):
    """3D points in the rig frame for valid, finite-depth pixels.

    Infinity-index pixels are excluded. Returns (points (M, 3), intensity (M,)).
    """
    dirs = grid.ray_grid()
    sel = depth.mask & (depth.index > 0) & np.isfinite(depth.depth)
    pts = dirs[sel] * depth.depth[sel][:, None]
    if intensity is None:
        inten = np.zeros(pts.shape[0])
    else:
        inten = np.asarray(intensity, dtype=float)[sel]
    return pts, inten
