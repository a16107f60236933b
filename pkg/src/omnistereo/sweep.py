"""Rig-centered spherical coordinate system and sweep warping.

Input fisheye images are resampled onto concentric spheres around the rig
origin; sphere radii are uniform in inverse depth with index 0 at infinity.
Spherical pixel centers follow the half-pixel convention: column w maps to
theta = -pi + (w + 0.5) * 2pi / W (wrapping), row 0 is the top (phi_max).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .camera import FisheyeIntrinsics, bilinear_sample, fov_mask, project
from .pose import Pose

__all__ = [
    "SphereGrid", "RigFrame", "SphericalImage", "ray_dir", "inverse_depth",
    "build_rig_frame", "warp", "warp_rays",
]

INFINITY_INV_DEPTH = 2.0 ** -23


@dataclass(frozen=True)
class SphereGrid:
    """Resolution and geometry of the spherical sweep."""

    width: int
    height: int
    n_spheres: int
    d_min: float
    phi_min: float = -np.pi / 4.0
    phi_max: float = np.pi / 4.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.n_spheres < 1:
            raise ValueError("grid dimensions must be >= 1")
        if self.d_min <= 0:
            raise ValueError("minimum depth must be positive")
        if not (-np.pi / 2.0 <= self.phi_min < self.phi_max <= np.pi / 2.0):
            raise ValueError("phi range must satisfy -pi/2 <= phi_min < phi_max <= pi/2")

    def thetas(self):
        w = np.arange(self.width)
        return -np.pi + (w + 0.5) * (2.0 * np.pi / self.width)

    def phis(self):
        h = np.arange(self.height)
        return self.phi_max - (h + 0.5) * ((self.phi_max - self.phi_min) / self.height)

    def ray_grid(self):
        """Unit directions, shape (height, width, 3)."""
        th = self.thetas()[None, :]
        ph = self.phis()[:, None]
        return ray_dir(th, ph)

    def to_dict(self):
        return {
            "width": self.width, "height": self.height, "n_spheres": self.n_spheres,
            "d_min": self.d_min, "phi_min": self.phi_min, "phi_max": self.phi_max,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(width=int(d["width"]), height=int(d["height"]),
                   n_spheres=int(d["n_spheres"]), d_min=float(d["d_min"]),
                   phi_min=float(d["phi_min"]), phi_max=float(d["phi_max"]))


def ray_dir(theta, phi):
    """Unit direction of spherical angles: (cos phi cos theta, sin phi, cos phi sin theta)."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    cp = np.cos(phi)
    return np.stack(np.broadcast_arrays(cp * np.cos(theta), np.sin(phi) * np.ones_like(theta),
                                        cp * np.sin(theta)), axis=-1)


def inverse_depth(n, grid: SphereGrid):
    """Inverse depth of sphere n: uniform spacing with sphere 0 at infinity."""
    n = np.asarray(n)
    if np.any(n < 0) or np.any(n >= grid.n_spheres):
        raise ValueError(f"sphere index out of range [0, {grid.n_spheres})")
    if grid.n_spheres == 1:
        return np.where(n == 0, INFINITY_INV_DEPTH, np.nan)[()] if n.ndim else INFINITY_INV_DEPTH
    d = n / (grid.d_min * (grid.n_spheres - 1))
    d = np.where(n == 0, INFINITY_INV_DEPTH, d)
    return float(d) if d.ndim == 0 else d


@dataclass(frozen=True)
class RigFrame:
    """Rig coordinate frame: origin/orientation in world plus per-camera transforms."""

    origin: np.ndarray              # rig origin in the world (camera-0) frame
    rotation: np.ndarray            # world-from-rig rotation, columns = rig axes
    cam_from_rig: list              # Pose mapping rig coordinates to each camera


@dataclass
class SphericalImage:
    """One camera resampled onto one sweep sphere."""

    data: np.ndarray
    mask: np.ndarray
    camera_id: int = -1
    sphere_index: int = -1

    def __post_init__(self):
        if self.data.shape != self.mask.shape:
            raise ValueError("data and mask shapes differ")


def build_rig_frame(cam_poses) -> RigFrame:
    """Rig frame from world-to-camera poses.

    Origin is the centroid of camera centers; y is the least-squares plane
    normal oriented toward the mean camera up direction; x is the projection
    of camera 0's optical axis onto that plane.
    """
    centers = np.stack([p.center() for p in cam_poses])
    origin = centers.mean(axis=0)
    V = centers - origin
    R0 = cam_poses[0].R
    up_mean = -np.mean(np.stack([p.R[1, :] for p in cam_poses]), axis=0)

    if len(cam_poses) == 1 or float(np.max(np.linalg.norm(V, axis=1))) < 1e-12:
        warnings.warn("camera centers are coincident; rig frame falls back to camera-0 axes")
        R_rig = R0.T
    else:
        U, S, Vt = np.linalg.svd(V)
        if S[1] < 1e-9 * max(S[0], 1e-30):
            # centers are collinear: pick the plane containing the mean up axis
            b = Vt[0]
            y = up_mean - (up_mean @ b) * b
            if np.linalg.norm(y) < 1e-12:
                y = np.cross(b, [1.0, 0.0, 0.0])
                if np.linalg.norm(y) < 1e-6:
                    y = np.cross(b, [0.0, 1.0, 0.0])
        else:
            y = Vt[2]
        y = y / np.linalg.norm(y)
        if y @ up_mean < 0.0:
            y = -y
        f0 = R0[2, :]  # camera-0 optical axis in world coordinates
        x = f0 - (f0 @ y) * y
        if np.linalg.norm(x) < 1e-9:
            x = R0[0, :] - (R0[0, :] @ y) * y
        x = x / np.linalg.norm(x)
        z = np.cross(x, y)
        R_rig = np.stack([x, y, z], axis=1)

    cam_from_rig = []
    for p in cam_poses:
        R = p.R @ R_rig
        t = p.R @ origin + p.t
        cam_from_rig.append(Pose.from_matrix(np.block([
            [R, t[:, None]], [np.zeros(3), 1.0]])))
    return RigFrame(origin=origin, rotation=R_rig, cam_from_rig=cam_from_rig)


def warp_rays(image, intr: FisheyeIntrinsics, cam_from_rig: Pose, inv_depth, rays,
              image_mask=None):
    """Resample the fisheye image at rig-frame points rays/inv_depth.

    Returns (values, mask): per-ray bilinear samples, invalid where the
    projection leaves the FOV or the 2x2 sampling neighborhood is not fully
    valid.
    """
    pts = rays / float(inv_depth)
    X = pts @ cam_from_rig.R.T + cam_from_rig.t
    px, pvalid = project(X, intr)
    mask = fov_mask(intr) if image_mask is None else (fov_mask(intr) & image_mask)
    values, svalid = bilinear_sample(image, mask, px)
    ok = pvalid & svalid
    return np.where(ok, values, 0.0), ok


def warp(image, intr: FisheyeIntrinsics, cam_from_rig: Pose, n, grid: SphereGrid,
         image_mask=None, camera_id=-1) -> SphericalImage:
    """Warp one fisheye image onto sweep sphere ``n``."""
    if image.shape != (intr.height, intr.width):
        raise ValueError("image size does not match the intrinsics")
    d = inverse_depth(int(n), grid)
    data, mask = warp_rays(image, intr, cam_from_rig, d, grid.ray_grid(), image_mask)
    return SphericalImage(data=data, mask=mask, camera_id=camera_id, sphere_index=int(n))
