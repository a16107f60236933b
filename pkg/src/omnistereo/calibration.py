"""Multi-camera rig calibration from checkerboard corner observations.

Board poses per (camera, capture) are fitted on unprojected rays, the rig is
chained along a spanning tree of pairwise relative poses, and everything is
refined jointly by Levenberg-Marquardt on the pixel reprojection error with
camera 0 fixed as the gauge.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .camera import FisheyeIntrinsics, project_with_jacobians, unproject
from .lm import LMConfig, lm_solve
from .pose import (Pose, compose, invert, relative_pose, rotate_point_jacobian,
                   rotation_from_axis_angle)

__all__ = [
    "CheckerboardSpec", "ObservationSet", "RigCalibration", "CalibrationReport",
    "DegenerateGeometryError", "estimate_board_pose", "init_rig", "build_ba_problem",
    "bundle_adjust", "calibrate_rig",
]


class DegenerateGeometryError(ValueError):
    pass


@dataclass(frozen=True)
class CheckerboardSpec:
    """Interior-corner grid of a physical checkerboard."""

    cols: int
    rows: int
    square_m: float

    def __post_init__(self):
        if self.cols < 2 or self.rows < 2:
            raise ValueError("checkerboard needs at least 2x2 interior corners")
        if self.square_m <= 0:
            raise ValueError("square size must be positive")

    @property
    def corner_count(self):
        return self.cols * self.rows

    def corner_points(self):
        """Corner id p -> 3D point in the board frame (z = 0 plane), row-major."""
        c, r = np.meshgrid(np.arange(self.cols), np.arange(self.rows))
        pts = np.stack([c.ravel() * self.square_m, r.ravel() * self.square_m,
                        np.zeros(self.corner_count)], axis=-1)
        return pts


class ObservationSet:
    """Corner observations keyed by (camera index, capture index)."""

    def __init__(self):
        self._records = {}

    def add(self, camera, capture, ids, pixels):
        ids = np.asarray(ids, dtype=int).reshape(-1)
        pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
        if ids.size != pixels.shape[0]:
            raise ValueError("ids and pixels length mismatch")
        if ids.size < 6:
            raise ValueError(f"record ({camera},{capture}) has {ids.size} corners, need >= 6")
        if np.unique(ids).size != ids.size:
            raise ValueError(f"record ({camera},{capture}) has duplicate corner ids")
        self._records[(int(camera), int(capture))] = (ids, pixels)

    def __len__(self):
        return len(self._records)

    def __contains__(self, key):
        return key in self._records

    def get(self, camera, capture):
        return self._records[(camera, capture)]

    def items(self):
        return sorted(self._records.items())

    def cameras(self):
        return sorted({i for i, _ in self._records})

    def captures(self):
        return sorted({k for _, k in self._records})

    def captures_of(self, camera):
        return sorted(k for i, k in self._records if i == camera)


@dataclass
class CalibrationReport:
    rmse_px: float
    per_camera_rmse_px: dict
    iterations: int
    converged: bool
    initial_rmse_px: float


@dataclass
class RigCalibration:
    """Per-camera intrinsics and world-to-camera poses (camera 0 = world)."""

    intrinsics: list
    poses: list
    report: CalibrationReport


# ---------------------------------------------------------------------------
# board pose from rays

def _frontalizing_rotation(mean_dir):
    """Rotation taking mean_dir to the +z axis."""
    z = np.array([0.0, 0.0, 1.0])
    v = np.cross(mean_dir, z)
    s = np.linalg.norm(v)
    c = float(mean_dir @ z)
    if s < 1e-12:
        return np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx * ((1 - c) / (s * s))


def _nearest_rotation(M):
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def _weak_perspective_candidates(board_xy, m):
    """Scaled-orthographic pose candidates for a planar target.

    Solves m ~ G @ (x, y) + b linearly, then lifts the 2x2 block G to the two
    rotation/translation candidates consistent with it.
    """
    n = board_xy.shape[0]
    A = np.concatenate([board_xy, np.ones((n, 1))], axis=1)
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] < 1e-9 * sv[0]:
        raise DegenerateGeometryError("board corners are collinear or otherwise degenerate")
    sol, *_ = np.linalg.lstsq(A, m, rcond=None)
    G = sol[:2].T          # 2x2
    b = sol[2]             # 2
    g1, g2 = G[0], G[1]
    p = float(g1 @ g1)
    q = float(g2 @ g2)
    w = float(g1 @ g2)
    disc = max((p + q) ** 2 - 4.0 * (p * q - w * w), 0.0)
    s2 = 0.5 * ((p + q) + np.sqrt(disc))
    if s2 < 1e-12:
        raise DegenerateGeometryError("weak-perspective scale collapsed to zero")
    s = np.sqrt(s2)
    alpha = np.sqrt(max(1.0 - p / s2, 0.0))
    if alpha > 1e-12:
        beta = -w / (s2 * alpha)
    else:
        beta = np.sqrt(max(1.0 - q / s2, 0.0))
    out = []
    for sign in (1.0, -1.0):
        r1 = np.array([g1[0] / s, g1[1] / s, sign * alpha])
        r2 = np.array([g2[0] / s, g2[1] / s, sign * beta])
        R = _nearest_rotation(np.stack([r1, r2, np.cross(r1, r2)]))
        t = np.array([b[0] / s, b[1] / s, 1.0 / s])
        out.append((R, t))
    return out


def estimate_board_pose(ids, pixels, board: CheckerboardSpec, intr: FisheyeIntrinsics,
                        config: LMConfig | None = None) -> Pose:
    """Board-to-camera pose from one record of corner observations.

    Corners are unprojected to unit rays; a weak-perspective solve in a
    frontalized frame provides the initialization, refined by LM on the
    chordal form of the angular residual (unit(R X + t) - ray).
    """
    ids = np.asarray(ids, dtype=int)
    pixels = np.asarray(pixels, dtype=float)
    if ids.size < 6:
        raise ValueError("need at least 6 corners")
    all_pts = board.corner_points()
    if ids.min() < 0 or ids.max() >= board.corner_count:
        raise ValueError("corner id outside the board grid")
    X = all_pts[ids]
    rays, valid = unproject(pixels, intr)
    if not np.all(valid):
        rays = rays[valid]
        X = X[valid]
        if X.shape[0] < 6:
            raise ValueError("fewer than 6 corners inside the FOV")
    mean_dir = rays.mean(axis=0)
    nrm = np.linalg.norm(mean_dir)
    if nrm < 1e-9:
        raise DegenerateGeometryError("observed rays have no common viewing direction")
    Q = _frontalizing_rotation(mean_dir / nrm)
    rf = rays @ Q.T
    if np.any(rf[:, 2] < 1e-3):
        raise DegenerateGeometryError("board spans more than a hemisphere of rays")
    m = rf[:, :2] / rf[:, 2:3]

    best = None
    for R, t in _weak_perspective_candidates(X[:, :2], m):
        Rc = Q.T @ R
        tc = Q.T @ t
        pred = X @ Rc.T + tc
        pred = pred / np.linalg.norm(pred, axis=-1, keepdims=True)
        err = float(np.sum((pred - rays) ** 2))
        if best is None or err < best[0]:
            best = (err, Rc, tc)
    pose0 = Pose.from_matrix(np.block([[best[1], best[2][:, None]], [np.zeros(3), 1.0]]))

    def fun(x):
        r_vec, t_vec = x[:3], x[3:]
        R = rotation_from_axis_angle(r_vec)
        Z = X @ R.T + t_vec
        nz = np.linalg.norm(Z, axis=-1, keepdims=True)
        u = Z / nz
        res = (u - rays).ravel()
        du_dZ = (np.eye(3)[None] - u[:, :, None] * u[:, None, :]) / nz[:, :, None]
        dZ = np.empty((X.shape[0], 3, 6))
        dZ[:, :, :3] = rotate_point_jacobian(r_vec, X)
        dZ[:, :, 3:] = np.eye(3)[None]
        J = (du_dZ @ dZ).reshape(-1, 6)
        return res, J

    # 6-parameter problem: tight tolerances are cheap and keep chained rig
    # initialization well below the accuracy of the later joint refinement
    cfg = config or LMConfig(ftol=1e-15, gtol=1e-12)
    result = lm_solve(fun, np.concatenate([pose0.r, pose0.t]), cfg)
    return Pose(result.x[:3], result.x[3:])


# ---------------------------------------------------------------------------
# rig initialization

def _chordal_mean_pose(poses):
    Rs = np.stack([p.R for p in poses])
    ts = np.stack([p.t for p in poses])
    return Pose.from_matrix(np.block([
        [_nearest_rotation(Rs.mean(axis=0)), ts.mean(axis=0)[:, None]],
        [np.zeros(3), 1.0],
    ]))


def init_rig(obs: ObservationSet, board_poses: dict):
    """Initial camera and board poses in the camera-0 frame.

    board_poses maps (camera, capture) -> board-to-camera Pose. Camera poses
    are chained along a minimum spanning tree over cameras (edge weight
    1/#shared captures), relative poses averaged over parallel edges.
    Returns (camera_poses list indexed by camera id, {capture: board pose}).
    """
    cams = obs.cameras()
    if cams[0] != 0:
        raise ValueError("camera 0 must be present (it defines the gauge)")
    shared = {}
    for (i, k) in board_poses:
        for (j, k2) in board_poses:
            if k2 == k and j > i:
                shared.setdefault((i, j), []).append(k)
    edges = {}
    for (i, j), ks in shared.items():
        rels = [relative_pose(board_poses[(j, k)], board_poses[(i, k)]) for k in ks]
        edges[(i, j)] = (1.0 / len(ks), _chordal_mean_pose(rels))

    cam_pose = {0: Pose.identity()}
    remaining = set(cams) - {0}
    while remaining:
        best = None
        for (i, j), (wgt, rel) in edges.items():
            if i in cam_pose and j in remaining:
                cand = (wgt, j, compose(rel, cam_pose[i]))
            elif j in cam_pose and i in remaining:
                cand = (wgt, i, compose(invert(rel), cam_pose[j]))
            else:
                continue
            if best is None or cand[0] < best[0]:
                best = cand
        if best is None:
            missing = sorted(remaining)
            raise ValueError(
                f"camera graph is disconnected: cameras {missing} share no captures "
                f"with the calibrated component")
        cam_pose[best[1]] = best[2]
        remaining.discard(best[1])

    boards = {}
    for k in obs.captures():
        seen = sorted(i for (i, kk) in board_poses if kk == k)
        if not seen:
            continue
        i = seen[0]
        boards[k] = compose(invert(cam_pose[i]), board_poses[(i, k)])
    return [cam_pose[i] for i in cams], boards


# ---------------------------------------------------------------------------
# joint bundle adjustment

@dataclass
class _ParamLayout:
    cams: list
    captures: list
    n_coef: int
    refine_intrinsics: bool
    poly_scale: np.ndarray        # per-camera (n_coef,) scale factors
    size: int = field(init=False)

    def __post_init__(self):
        n_pose = 6 * (len(self.cams) - 1) + 6 * len(self.captures)
        n_intr = len(self.cams) * ((self.n_coef - 1) + 5) if self.refine_intrinsics else 0
        self.size = n_pose + n_intr

    def cam_slice(self, idx):
        # idx is the position in self.cams; camera 0 has no pose parameters
        if idx == 0:
            return None
        base = 6 * (idx - 1)
        return slice(base, base + 6)

    def board_slice(self, pos):
        base = 6 * (len(self.cams) - 1) + 6 * pos
        return slice(base, base + 6)

    def intr_slice(self, idx):
        if not self.refine_intrinsics:
            return None
        per = (self.n_coef - 1) + 5
        base = 6 * (len(self.cams) - 1) + 6 * len(self.captures) + per * idx
        return slice(base, base + per)


def _pack(layout, cam_poses, board_poses, intrinsics):
    x = np.zeros(layout.size)
    for idx, cam in enumerate(layout.cams):
        sl = layout.cam_slice(idx)
        if sl is not None:
            x[sl] = np.concatenate([cam_poses[idx].r, cam_poses[idx].t])
    for pos, k in enumerate(layout.captures):
        x[layout.board_slice(pos)] = np.concatenate([board_poses[k].r, board_poses[k].t])
    if layout.refine_intrinsics:
        free = [j for j in range(layout.n_coef) if j != 1]
        for idx, intr in enumerate(intrinsics):
            sl = layout.intr_slice(idx)
            vec = np.concatenate([
                intr.poly[free] * layout.poly_scale[idx][free],
                [intr.c, intr.d, intr.e, intr.cx, intr.cy],
            ])
            x[sl] = vec
    return x


def _unpack(layout, x, intrinsics0):
    # raw (r, t, R) triples: no canonical wrapping of the rotation vector, the
    # optimizer must see derivatives at the literal parameter values
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite parameter vector")
    cam_poses = []
    for idx in range(len(layout.cams)):
        sl = layout.cam_slice(idx)
        if sl is None:
            cam_poses.append((np.zeros(3), np.zeros(3), np.eye(3)))
        else:
            v = x[sl]
            cam_poses.append((v[:3], v[3:], rotation_from_axis_angle(v[:3])))
    board_poses = {}
    for pos, k in enumerate(layout.captures):
        v = x[layout.board_slice(pos)]
        board_poses[k] = (v[:3], v[3:], rotation_from_axis_angle(v[:3]))
    intrinsics = []
    if layout.refine_intrinsics:
        free = [j for j in range(layout.n_coef) if j != 1]
        for idx, intr0 in enumerate(intrinsics0):
            v = x[layout.intr_slice(idx)]
            poly = np.array(intr0.poly, dtype=float)
            poly[free] = v[: len(free)] / layout.poly_scale[idx][free]
            c, d, e, cx, cy = v[len(free):]
            intrinsics.append(replace(intr0, poly=poly, c=c, d=d, e=e, cx=cx, cy=cy))
    else:
        intrinsics = list(intrinsics0)
    return cam_poses, board_poses, intrinsics


def build_ba_problem(obs: ObservationSet, board: CheckerboardSpec, intrinsics: list,
                     cam_poses: list, board_poses: dict,
                     refine_intrinsics: bool = True, huber_px: float | None = None):
    """Assemble the joint reprojection problem for the LM solver.

    Returns (fun, x0, layout) with ``fun(x) -> (residuals, jacobian)``.
    Polynomial coefficients enter the parameter vector scaled by
    fov_radius^j so all intrinsic parameters share a comparable magnitude.
    """
    cams = obs.cameras()
    captures = obs.captures()
    if len(cam_poses) != len(cams):
        raise ValueError("one initial pose per camera required")
    n_coef = intrinsics[0].poly.size
    if any(i.poly.size != n_coef for i in intrinsics):
        raise ValueError("all cameras must share the polynomial degree")
    poly_scale = np.stack([intr.fov_radius ** np.arange(n_coef) for intr in intrinsics])
    layout = _ParamLayout(cams, captures, n_coef, refine_intrinsics, poly_scale)
    corner_pts = board.corner_points()
    free_coef = [j for j in range(n_coef) if j != 1]

    blocks = []
    row = 0
    for (i, k), (ids, pix) in obs.items():
        blocks.append((cams.index(i), captures.index(k), ids, pix, row))
        row += 2 * ids.size
    n_res = row

    def fun(x):
        try:
            cam_p, board_p, intr_list = _unpack(layout, x, intrinsics)
        except ValueError:
            return np.full(n_res, np.inf), np.zeros((n_res, layout.size))
        r = np.zeros(n_res)
        J = np.zeros((n_res, layout.size))
        for (idx, pos, ids, pix, base) in blocks:
            k = captures[pos]
            X = corner_pts[ids]
            rk, tk, Rk = board_p[k]
            ri, ti, Ri = cam_p[idx]
            Y = X @ Rk.T + tk
            Z = Y @ Ri.T + ti
            try:
                px, _, dZ, dPoly, dAff = project_with_jacobians(Z, intr_list[idx])
            except (ValueError, RuntimeError):
                return np.full(n_res, np.inf), np.zeros((n_res, layout.size))
            res = (pix - px)
            P = ids.size
            rows = slice(base, base + 2 * P)
            if huber_px is not None:
                s = np.linalg.norm(res, axis=-1)
                wgt = np.sqrt(np.minimum(1.0, huber_px / np.maximum(s, 1e-12)))
            else:
                wgt = np.ones(P)
            r[rows] = (res * wgt[:, None]).ravel()
            dscale = -wgt[:, None, None]
            sl = layout.cam_slice(idx)
            if sl is not None:
                dZi = np.empty((P, 3, 6))
                dZi[:, :, :3] = rotate_point_jacobian(ri, Y)
                dZi[:, :, 3:] = np.eye(3)[None]
                J[rows, sl] = (dscale * (dZ @ dZi)).reshape(2 * P, 6)
            dZk = np.empty((P, 3, 6))
            dZk[:, :, :3] = np.einsum("ab,pbc->pac", Ri, rotate_point_jacobian(rk, X))
            dZk[:, :, 3:] = Ri[None]
            J[rows, layout.board_slice(pos)] = (dscale * (dZ @ dZk)).reshape(2 * P, 6)
            if layout.refine_intrinsics:
                dp = dPoly[:, :, free_coef] / layout.poly_scale[idx][None, None, free_coef]
                J[rows, layout.intr_slice(idx)] = (
                    dscale * np.concatenate([dp, dAff], axis=-1)).reshape(2 * P, -1)
        return r, J

    x0 = _pack(layout, cam_poses, board_poses, intrinsics)
    return fun, x0, layout


def bundle_adjust(obs: ObservationSet, board: CheckerboardSpec, intrinsics: list,
                  cam_poses: list, board_poses: dict, config: LMConfig | None = None,
                  refine_intrinsics: bool = True, huber_px: float | None = None) -> RigCalibration:
    """Jointly refine camera poses, board poses and (optionally) intrinsics.

    Minimizes the squared pixel reprojection error of all corner observations
    with camera 0 fixed to the identity. ``huber_px`` enables IRLS Huber
    weighting (default is the plain squared error).
    """
    fun, x0, layout = build_ba_problem(obs, board, intrinsics, cam_poses, board_poses,
                                       refine_intrinsics, huber_px)
    r0, _ = fun(x0)
    initial_rmse = float(np.sqrt(np.mean(np.sum(r0.reshape(-1, 2) ** 2, axis=-1))))
    result = lm_solve(fun, x0, config or LMConfig())
    cam_raw, board_raw, intr_list = _unpack(layout, result.x, intrinsics)
    cam_p = [Pose(r, t) for (r, t, _) in cam_raw]

    r_fin, _ = fun(result.x)
    per_cam_res = {}
    row = 0
    for (i, k), (ids, pix) in obs.items():
        per_cam_res.setdefault(i, []).append(r_fin[row: row + 2 * ids.size].reshape(-1, 2))
        row += 2 * ids.size
    per_cam_rmse = {
        i: float(np.sqrt(np.mean(np.sum(np.concatenate(v) ** 2, axis=-1))))
        for i, v in per_cam_res.items()
    }
    rmse = float(np.sqrt(np.mean(np.sum(r_fin.reshape(-1, 2) ** 2, axis=-1))))
    report = CalibrationReport(rmse, per_cam_rmse, result.iterations, result.converged,
                               initial_rmse)
    return RigCalibration(intr_list, cam_p, report)


def calibrate_rig(obs: ObservationSet, board: CheckerboardSpec, intrinsics: list,
                  config: LMConfig | None = None, refine_intrinsics: bool = True,
                  huber_px: float | None = None) -> RigCalibration:
    """Full pipeline: per-record board poses, rig initialization, bundle adjustment."""
    board_poses = {}
    for (i, k), (ids, pix) in obs.items():
        board_poses[(i, k)] = estimate_board_pose(ids, pix, board, intrinsics[i])
    cam_poses, boards_world = init_rig(obs, board_poses)
    return bundle_adjust(obs, board, intrinsics, cam_poses, boards_world, config,
                         refine_intrinsics=refine_intrinsics, huber_px=huber_px)
