"""Rigid-body poses as axis-angle rotation + translation, with composition algebra.

A pose maps points from its source frame into its target frame:
``X_target = R(r) @ X_source + t``. The rotation vector ``r`` is a unit axis
scaled by the angle in radians, kept in the canonical range ``|r| in [0, pi]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_EPS = 1e-12


def skew(v):
    """3x3 cross-product matrix [v]x so that skew(v) @ w == cross(v, w)."""
    v = np.asarray(v, dtype=float)
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def rotation_from_axis_angle(r):
    """Rodrigues formula. Small angles use the series expansion of sin/cos terms."""
    r = np.asarray(r, dtype=float)
    theta = float(np.linalg.norm(r))
    K = skew(r)
    if theta < 1e-8:
        # sin(t)/t ~ 1 - t^2/6, (1-cos(t))/t^2 ~ 1/2 - t^2/24
        a = 1.0 - theta * theta / 6.0
        b = 0.5 - theta * theta / 24.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def axis_angle_from_rotation(R):
    """Inverse of Rodrigues, returning |r| in [0, pi].

    Near angle pi the skew-symmetric part vanishes, so the axis is recovered
    from the symmetric part instead.
    """
    R = np.asarray(R, dtype=float)
    tr = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(tr))
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-8:
        # r ~ w/2 to first order
        return 0.5 * w
    if np.pi - theta > 1e-6:
        return (theta / (2.0 * np.sin(theta))) * w
    # theta ~ pi: axis from the dominant column of R + I, sign from w
    B = R + np.eye(3)
    col = int(np.argmax(np.diag(B)))
    axis = B[:, col]
    axis = axis / np.linalg.norm(axis)
    # keep whatever sign information survives in w
    if np.dot(axis, w) < 0.0:
        axis = -axis
    return theta * axis


def _canonical_rotvec(r):
    r = np.asarray(r, dtype=float).reshape(3)
    theta = float(np.linalg.norm(r))
    if theta <= np.pi:
        return r
    axis = r / theta
    theta = np.remainder(theta, 2.0 * np.pi)
    if theta > np.pi:
        theta = 2.0 * np.pi - theta
        axis = -axis
    return theta * axis


@dataclass(frozen=True)
class Pose:
    """Axis-angle rotation vector plus translation, immutable."""

    r: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = _canonical_rotvec(self.r)
        t = np.asarray(self.t, dtype=float).reshape(3).copy()
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("pose parameters must be finite")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)

    @property
    def R(self):
        return rotation_from_axis_angle(self.r)

    def matrix(self):
        """4x4 homogeneous transform."""
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M):
        M = np.asarray(M, dtype=float)
        return cls(axis_angle_from_rotation(M[:3, :3]), M[:3, 3])

    def apply(self, points):
        """Transform points of shape (..., 3)."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.R.T + self.t

    def center(self):
        """Origin of the target frame expressed in the source frame (-R^T t)."""
        return -(self.R.T @ self.t)


def compose(a: Pose, b: Pose) -> Pose:
    """Pose whose transform is M(a) @ M(b): apply b first, then a."""
    Ra, Rb = a.R, b.R
    return Pose(axis_angle_from_rotation(Ra @ Rb), Ra @ b.t + a.t)


def invert(a: Pose) -> Pose:
    Rt = a.R.T
    return Pose(-a.r, -(Rt @ a.t))


def relative_pose(theta_jk: Pose, theta_ik: Pose) -> Pose:
    """Transform mapping frame i to frame j given both poses of a shared target k."""
    return compose(theta_jk, invert(theta_ik))


def rotation_distance(a: Pose, b: Pose) -> float:
    """Geodesic angle between the rotations of two poses, in radians."""
    R = a.R @ b.R.T
    return float(np.linalg.norm(axis_angle_from_rotation(R)))


def rotation_jacobian(r):
    """Derivatives dR/dr_i of the rotation matrix, shape (3, 3, 3).

    Uses the compact closed form of Gallego & Yezzi; the i-th slice is
    the 3x3 matrix dR/dr_i.
    """
    r = np.asarray(r, dtype=float)
    theta2 = float(r @ r)
    R = rotation_from_axis_angle(r)
    out = np.empty((3, 3, 3))
    if theta2 < 1e-20:
        for i in range(3):
            e = np.zeros(3)
            e[i] = 1.0
            out[i] = skew(e)
        return out
    I = np.eye(3)
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1.0
        v = r[i] * r + np.cross(r, (I - R) @ e)
        out[i] = (skew(v) / theta2) @ R
    return out


def rotate_point_jacobian(r, points):
    """d(R(r) @ X)/dr for points of shape (..., 3); returns (..., 3, 3).

    Output slice [..., :, i] is the derivative of the rotated point with
    respect to r_i.
    """
    pts = np.asarray(points, dtype=float)
    dR = rotation_jacobian(r)  # (3, 3, 3), i-th slice dR/dr_i
    # (..., 3)(j) contributions: J[..., :, i] = dR[i] @ X
    return np.einsum("ijk,...k->...ji", dR, pts)
