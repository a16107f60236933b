"""Analytic synthetic scenes and calibration targets for testing the pipeline.

Scenes are closed-form: ray/surface intersections and procedural textures are
evaluated exactly through the fisheye model, so rendered images, ground-truth
depth and corner observations all come from the same geometry with no
renderer in the loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibration import CheckerboardSpec, ObservationSet
from .camera import FisheyeIntrinsics, fov_mask, project, unproject
from .pose import Pose
from .sgm import InverseDepthMap
from .sweep import SphereGrid, inverse_depth

__all__ = [
    "default_intrinsics", "square_rig", "ConcentricScene", "SphereScene",
    "render_fisheye", "gt_depth_map", "generate_calibration_set", "add_observation_noise",
]


def default_intrinsics(width=800, height=768, fov_deg=220.0, focal=190.0,
                       cx=None, cy=None, c=1.0, d=0.0, e=0.0):
    """Equidistant-like polynomial lens (series of rho*cot(rho/f))."""
    f = float(focal)
    poly = np.array([f, 0.0, -1.0 / (3.0 * f), 0.0, -1.0 / (45.0 * f ** 3),
                     0.0, -2.0 / (945.0 * f ** 5)])
    return FisheyeIntrinsics(
        poly=poly, c=c, d=d, e=e,
        cx=(width - 1) / 2.0 if cx is None else cx,
        cy=(height - 1) / 2.0 if cy is None else cy,
        width=width, height=height, fov_deg=fov_deg)


def square_rig(side=0.3, y_offsets=(0.0, 0.0, 0.0, 0.0)):
    """Four outward-facing cameras on a square, like a roof-mounted rig.

    Camera i sits at yaw 90*i degrees and radius side/sqrt(2), optical axis
    pointing outward; camera y is world-down. Returns world-to-camera poses.
    """
    poses = []
    radius = side / np.sqrt(2.0)
    for i in range(4):
        yaw = np.pi / 2.0 * i
        cdir = np.array([np.cos(yaw), 0.0, np.sin(yaw)])
        center = radius * cdir + np.array([0.0, y_offsets[i], 0.0])
        z = cdir
        y = np.array([0.0, -1.0, 0.0])
        x = np.cross(y, z)
        R_wc = np.stack([x, y, z], axis=1)
        R = R_wc.T
        poses.append(Pose.from_matrix(np.block([
            [R, (-R @ center)[:, None]], [np.zeros(3), 1.0]])))
    return poses


def _surface_texture(points, scale=1.0):
    """Aperiodic multi-octave field in [0, 1].

    Phase-modulated sinusoids at incommensurate frequencies: locally rich
    texture without the global periodicity that would create repeated-pattern
    false matches between depth hypotheses.
    """
    x = points[..., 0] / scale
    y = points[..., 1] / scale
    z = points[..., 2] / scale
    v = (0.40 * np.sin(2.13 * x + 1.7 * np.sin(1.31 * z + 0.9) + 0.8 * y)
         + 0.35 * np.sin(5.71 * z + 1.9 * np.sin(1.87 * x) + 1.1)
         + 0.30 * np.sin(9.43 * x + 7.9 * z + 1.5 * np.sin(2.77 * y + 0.3))
         + 0.25 * np.sin(16.97 * z + 13.1 * x + 2.0 * np.sin(3.53 * x + 1.2))
         + 0.20 * np.sin(27.11 * x + 21.3 * z + 0.7 * np.sin(5.19 * z)))
    return 0.5 + 0.5 * np.tanh(0.9 * v)


def _sky_texture(dirs):
    """Angular texture for points at infinity, fine enough to be matchable."""
    theta = np.arctan2(dirs[..., 2], dirs[..., 0])
    phi = np.arcsin(np.clip(dirs[..., 1], -1.0, 1.0))
    v = (0.45 * np.sin(23.0 * theta + 2.3 * np.sin(5.1 * phi + 0.4))
         + 0.35 * np.sin(41.0 * phi + 1.7 * np.sin(7.3 * theta))
         + 0.30 * np.sin(36.57 * theta + 29.3 * phi + 1.1)
         + 0.20 * np.sin(11.31 * theta - 16.7 * phi + 0.6))
    return 0.5 + 0.45 * np.tanh(0.9 * v)


DEFAULT_RINGS = ((3.98, 0.99), (5.04, 1.69), (6.3, 2.67), (8.4, 4.37),
                 (10.8, 6.62), (15.12, 10.79), (25.2, 20.41),
                 (37.8, 33.44), (75.6, 71.73))


@dataclass(frozen=True)
class ConcentricScene:
    """Ground plane, concentric cylindrical wall rings, and a textured sky.

    Rings are (radius, top_y) pairs standing on the ground; taller rings at
    larger radii step the depth outward like an amphitheater, so occlusion
    boundaries stay small in inverse-depth index. Texture feature size scales
    with each surface's distance to keep everything resolvable.
    """

    ground_y: float = -1.6
    rings: tuple = DEFAULT_RINGS
    texture_scale: float = 1.0

    @classmethod
    def scaled(cls, scale, ground_y=-1.6):
        """Uniformly scaled copy of the default scene (geometry and texture)."""
        return cls(ground_y=ground_y * scale,
                   rings=tuple((r * scale, t * scale) for r, t in DEFAULT_RINGS),
                   texture_scale=scale)

    def distances(self, origin, dirs):
        """Distance along each ray to the nearest surface; inf for sky."""
        t, _ = self._trace(origin, dirs)
        return t

    def _trace(self, origin, dirs):
        origin = np.asarray(origin, dtype=float)
        dirs = np.asarray(dirs, dtype=float)
        dx, dy, dz = dirs[..., 0], dirs[..., 1], dirs[..., 2]
        ox, oy, oz = origin

        t = np.full(dirs.shape[:-1], np.inf)
        surf = np.full(dirs.shape[:-1], -1, dtype=np.int8)  # -1 sky, 0 ground, 1+ rings
        with np.errstate(divide="ignore", invalid="ignore"):
            tg = (self.ground_y - oy) / dy
        hit_g = (dy < 0.0) & (tg > 0.0)
        t = np.where(hit_g, tg, t)
        surf = np.where(hit_g, np.int8(0), surf)

        a = dx * dx + dz * dz
        b = 2.0 * (ox * dx + oz * dz)
        rr = ox * ox + oz * oz
        for idx, (radius, top) in enumerate(self.rings):
            c = rr - radius * radius
            disc = b * b - 4.0 * a * c
            with np.errstate(divide="ignore", invalid="ignore"):
                tw = (-b + np.sqrt(np.maximum(disc, 0.0))) / (2.0 * a)
            yw = oy + tw * dy
            hit = ((a > 1e-15) & (disc > 0.0) & (tw > 0.0) & (tw < t)
                   & (yw >= self.ground_y - 1e-9) & (yw <= top))
            t = np.where(hit, tw, t)
            surf = np.where(hit, np.int8(idx + 1), surf)
        return t, surf

    def shade(self, origin, dirs, t):
        """Painted texture per surface; feature size grows with ring radius so the
        texture frequency stays comparable across the spherical images."""
        origin = np.asarray(origin, dtype=float)
        dirs = np.asarray(dirs, dtype=float)
        _, surf = self._trace(origin, dirs)
        finite = np.isfinite(t)
        pts = origin + dirs * np.where(finite, t, 1.0)[..., None]
        out = _sky_texture(dirs)
        ground_scale = 0.8 * self.texture_scale
        out = np.where(surf == 0, _surface_texture(pts, ground_scale), out)
        for idx, (radius, _) in enumerate(self.rings):
            sel = surf == idx + 1
            if np.any(sel):
                scale = 0.35 * radius * self.texture_scale
                out = np.where(sel, _surface_texture(pts, scale), out)
        return out


@dataclass(frozen=True)
class SphereScene:
    """Texture painted on a single sphere centered at the world origin."""

    radius: float = np.inf

    def distances(self, origin, dirs):
        origin = np.asarray(origin, dtype=float)
        dirs = np.asarray(dirs, dtype=float)
        if not np.isfinite(self.radius):
            return np.full(dirs.shape[:-1], np.inf)
        b = 2.0 * (dirs @ origin)
        c = float(origin @ origin) - self.radius ** 2
        disc = np.maximum(b * b - 4.0 * c, 0.0)
        return (-b + np.sqrt(disc)) / 2.0

    def texture(self, dirs):
        theta = np.arctan2(dirs[..., 2], dirs[..., 0])
        phi = np.arcsin(np.clip(dirs[..., 1], -1.0, 1.0))
        return (0.5 + 0.22 * np.sin(4.0 * theta) * np.cos(3.0 * phi)
                + 0.18 * np.cos(6.0 * theta + 1.0) * np.sin(2.0 * phi + 0.4))

    def shade(self, origin, dirs, t):
        origin = np.asarray(origin, dtype=float)
        if not np.isfinite(self.radius):
            return self.texture(dirs)
        pts = origin + dirs * t[..., None]
        n = pts / np.linalg.norm(pts, axis=-1, keepdims=True)
        return self.texture(n)


def render_fisheye(scene, intr: FisheyeIntrinsics, pose_world_cam: Pose):
    """Render the scene into a fisheye image: (image in [0,1], validity mask)."""
    u, v = np.meshgrid(np.arange(intr.width), np.arange(intr.height))
    rays_cam, valid = unproject(np.stack([u, v], axis=-1).astype(float), intr)
    R = pose_world_cam.R
    center = pose_world_cam.center()
    rays_w = rays_cam @ R  # R^T applied to each ray
    t = scene.distances(center, rays_w)
    img = scene.shade(center, rays_w, t)
    img = np.where(valid, img, 0.0)
    return img, valid & fov_mask(intr)


def gt_depth_map(scene, grid: SphereGrid, origin=(0.0, 0.0, 0.0)) -> InverseDepthMap:
    """Exact inverse-depth indices of the scene on the sphere grid."""
    dirs = grid.ray_grid()
    t = scene.distances(np.asarray(origin, dtype=float), dirs)
    n = np.zeros(t.shape, dtype=np.int32)
    finite = np.isfinite(t)
    scalev = grid.d_min * (grid.n_spheres - 1)
    idx = np.rint(np.divide(scalev, t, out=np.zeros_like(t), where=finite))
    n[finite] = np.clip(idx[finite], 0, grid.n_spheres - 1).astype(np.int32)
    inv = inverse_depth(n, grid)
    return InverseDepthMap(index=n, inv_depth=inv, depth=1.0 / inv,
                           mask=np.ones(t.shape, dtype=bool))


# ---------------------------------------------------------------------------
# synthetic checkerboard captures

def _board_pose_world(yaw, dist, tilt, roll, height, board: CheckerboardSpec):
    """Board-to-world pose of a board centered at the given polar placement."""
    cdir = np.array([np.cos(yaw), 0.0, np.sin(yaw)])
    center = dist * cdir + np.array([0.0, height, 0.0])
    z = -cdir  # normal faces the rig
    yv = np.array([0.0, 1.0, 0.0])
    x = np.cross(yv, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z], axis=1)
    tilt_rot = Pose(np.array([tilt, 0.0, roll]), np.zeros(3)).R
    R = R @ tilt_rot
    half = np.array([(board.cols - 1) * board.square_m / 2.0,
                     (board.rows - 1) * board.square_m / 2.0, 0.0])
    t = center - R @ half
    return Pose.from_matrix(np.block([[R, t[:, None]], [np.zeros(3), 1.0]]))


def generate_calibration_set(intrinsics, cam_poses, board: CheckerboardSpec,
                             n_boards=12, seed=0, min_corners=6):
    """Project a ring of checkerboards into all cameras.

    Returns (ObservationSet, {capture: board-to-world Pose}). Only corners
    that project validly are recorded; records with fewer than ``min_corners``
    are dropped.
    """
    rng = np.random.default_rng(seed)
    obs = ObservationSet()
    gt_boards = {}
    pts = board.corner_points()
    ids = np.arange(board.corner_count)
    for k in range(n_boards):
        yaw = 2.0 * np.pi * k / n_boards + rng.uniform(-0.05, 0.05)
        dist = 1.5 + 0.35 * (k % 3) + rng.uniform(0.0, 0.1)
        tilt = rng.uniform(-0.25, 0.25)
        roll = rng.uniform(-0.3, 0.3)
        height = rng.uniform(-0.2, 0.2)
        bpose = _board_pose_world(yaw, dist, tilt, roll, height, board)
        gt_boards[k] = bpose
        Xw = bpose.apply(pts)
        for i, (intr, cpose) in enumerate(zip(intrinsics, cam_poses)):
            Xc = cpose.apply(Xw)
            px, valid = project(Xc, intr)
            if np.count_nonzero(valid) >= min_corners:
                obs.add(i, k, ids[valid], px[valid])
    return obs, gt_boards


def add_observation_noise(obs: ObservationSet, sigma_px, seed=0):
    """Fresh ObservationSet with i.i.d. Gaussian pixel noise added."""
    rng = np.random.default_rng(seed)
    noisy = ObservationSet()
    for (i, k), (ids, pix) in obs.items():
        noisy.add(i, k, ids, pix + rng.normal(0.0, sigma_px, size=pix.shape))
    return noisy
