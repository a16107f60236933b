"""Polynomial omnidirectional fisheye camera model.

The backward map is direct: a pixel is taken to the normalized image plane by
the inverse affine transform, and a point at radius ``rho`` from the
distortion center corresponds to the ray ``(x, y, g(rho))`` where ``g`` is the
stored polynomial. The forward map inverts the implied incidence-angle/radius
relation ``psi(rho) = atan2(rho, g(rho))`` with a bracketed Newton solve.

Conventions: camera frame has z along the optical axis, x right, y down.
``g(0) > 0`` so the optical axis unprojects to (0, 0, 1); lenses wider than
180 degrees have ``g`` going negative at large radii.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ProjectionError(RuntimeError):
    """Raised when the forward radius solve fails to converge."""

    def __init__(self, message, incidence_rad=None):
        super().__init__(message)
        self.incidence_rad = incidence_rad


_NEWTON_MAX_ITERS = 50
_NEWTON_TOL = 1e-12


@dataclass(frozen=True)
class FisheyeIntrinsics:
    """Polynomial fisheye intrinsics with affine pixel mapping.

    poly: ascending coefficients a0..ak of the ray z-component as a function
        of normalized-plane radius; a1 must be 0 and a0 > 0.
    c, d, e: affine stretch/skew (pixel = [[c, d], [e, 1]] @ xy + center).
    cx, cy: distortion center in pixels.
    width, height: image size in pixels.
    fov_deg: full field of view of the lens in degrees.
    """

    poly: np.ndarray
    c: float = 1.0
    d: float = 0.0
    e: float = 0.0
    cx: float = 0.0
    cy: float = 0.0
    width: int = 0
    height: int = 0
    fov_deg: float = 180.0
    # derived, filled in by __post_init__
    fov_radius: float = field(init=False, default=0.0)
    _rho_mono: float = field(init=False, default=0.0)
    _psi_mono: float = field(init=False, default=0.0)

    def __post_init__(self):
        poly = np.asarray(self.poly, dtype=float).reshape(-1).copy()
        if poly.size < 1 or not np.all(np.isfinite(poly)):
            raise ValueError("polynomial coefficients must be a finite, non-empty list")
        if poly.size >= 2 and poly[1] != 0.0:
            raise ValueError("coefficient a1 must be 0 (omnidirectional-model convention)")
        if poly[0] <= 0.0:
            raise ValueError(
                "coefficient a0 must be positive: this model uses z along the optical "
                "axis, so flipped-sign calibrations must be negated on input"
            )
        if not (0.0 < self.fov_deg < 360.0):
            raise ValueError("fov_deg must lie in (0, 360)")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        det = self.c - self.d * self.e
        if abs(det) < 1e-12:
            raise ValueError("affine transform is singular (c - d*e == 0)")
        poly.setflags(write=False)
        object.__setattr__(self, "poly", poly)

        psi_max = np.deg2rad(self.fov_deg) / 2.0
        rho_fov, rho_mono, psi_mono = _analyze_polynomial(poly, psi_max, self._plane_scale())
        # strict monotonicity of the angle-radius map at 1024 sampled radii
        rs = np.linspace(0.0, rho_fov, 1024)
        psis = np.arctan2(rs, _polyval(poly, rs))
        if np.any(np.diff(psis) <= 0.0):
            raise ValueError("incidence-angle/radius map is not strictly monotonic within the FOV")
        object.__setattr__(self, "fov_radius", float(rho_fov))
        object.__setattr__(self, "_rho_mono", float(rho_mono))
        object.__setattr__(self, "_psi_mono", float(psi_mono))

    def _plane_scale(self):
        # rough normalized-plane extent of the image, for bracketing the solve
        corners = np.array([[0.0, 0.0], [self.width, 0.0], [0.0, self.height],
                            [self.width, self.height]])
        xy = self.affine_inverse(corners)
        return float(np.max(np.hypot(xy[:, 0], xy[:, 1])))

    @property
    def half_fov_rad(self):
        return np.deg2rad(self.fov_deg) / 2.0

    def affine_apply(self, xy):
        xy = np.asarray(xy, dtype=float)
        u = self.c * xy[..., 0] + self.d * xy[..., 1] + self.cx
        v = self.e * xy[..., 0] + xy[..., 1] + self.cy
        return np.stack([u, v], axis=-1)

    def affine_inverse(self, uv):
        uv = np.asarray(uv, dtype=float)
        det = self.c - self.d * self.e
        du = uv[..., 0] - self.cx
        dv = uv[..., 1] - self.cy
        x = (du - self.d * dv) / det
        y = (-self.e * du + self.c * dv) / det
        return np.stack([x, y], axis=-1)


def _polyval(poly, rho):
    return np.polynomial.polynomial.polyval(rho, poly)


def _polyder_val(poly, rho):
    if len(poly) < 2:
        return np.zeros_like(np.asarray(rho, dtype=float))
    der = poly[1:] * np.arange(1, len(poly))
    return np.polynomial.polynomial.polyval(rho, der)


def _incidence(poly, rho):
    return np.arctan2(rho, _polyval(poly, rho))


def _analyze_polynomial(poly, psi_max, plane_scale):
    """Locate the FOV-boundary radius and the monotone extent of psi(rho).

    Returns (rho at psi_max, largest usable radius, psi at that radius).
    The grid is extended geometrically until psi reaches psi_max or
    monotonicity breaks; failing to reach psi_max is a construction error.
    """
    hi = max(plane_scale, 1.0)
    for _ in range(12):
        rs = np.linspace(0.0, hi, 4096)
        psis = _incidence(poly, rs)
        inc = np.diff(psis) > 0.0
        bad = np.flatnonzero(~inc)
        last = bad[0] if bad.size else rs.size - 1
        if psis[last] >= psi_max:
            break
        if bad.size:
            raise ValueError(
                f"polynomial cannot realize the stated FOV: angle-radius map stops "
                f"increasing at {np.rad2deg(psis[last]):.2f} deg (need {np.rad2deg(psi_max):.2f})"
            )
        hi *= 2.0
    else:
        raise ValueError("polynomial never reaches the stated half-FOV angle")
    k = int(np.searchsorted(psis[: last + 1], psi_max))
    rho_fov = _bisect_incidence(poly, psi_max, rs[max(k - 1, 0)], rs[min(k, last)])
    return rho_fov, rs[last], psis[last]


def _bisect_incidence(poly, psi_target, lo, hi):
    """Plain bisection on psi(rho) == psi_target; also the test oracle's method."""
    flo = _incidence(poly, lo) - psi_target
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = _incidence(poly, mid) - psi_target
        if fm == 0.0 or (hi - lo) < 1e-15 * max(1.0, hi):
            return mid
        if (fm > 0.0) == (flo > 0.0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def fov_radius(intr: FisheyeIntrinsics) -> float:
    """Normalized-plane radius at which the incidence angle equals fov/2."""
    return intr.fov_radius


def _solve_radius(intr, psi):
    """Vectorized bracketed Newton (bisection fallback) for psi(rho) = psi."""
    poly = intr.poly
    psi = np.asarray(psi, dtype=float)
    shape = psi.shape
    target = np.minimum(psi, intr._psi_mono).ravel()
    lo = np.zeros_like(target)
    hi = np.full_like(target, intr._rho_mono)
    rho = np.clip(intr.fov_radius * target / max(intr.half_fov_rad, 1e-12), lo, hi)
    active = np.ones(target.shape, dtype=bool)
    for _ in range(_NEWTON_MAX_ITERS):
        g = _polyval(poly, rho)
        f = np.arctan2(rho, g) - target
        pos = f > 0.0
        hi = np.where(active & pos, rho, hi)
        lo = np.where(active & ~pos, rho, lo)
        width = hi - lo
        active &= (width > _NEWTON_TOL) & (np.abs(f) > 1e-15)
        if not np.any(active):
            break
        gp = _polyder_val(poly, rho)
        denom = g - rho * gp
        dpsi = denom / (rho * rho + g * g)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(dpsi > 0.0, f / dpsi, np.inf)
        cand = rho - step
        inside = (cand > lo) & (cand < hi)
        rho = np.where(active, np.where(inside, cand, 0.5 * (lo + hi)), rho)
    else:
        g = _polyval(poly, rho)
        resid = np.abs(np.arctan2(rho, g) - target)
        worst = float(np.max(resid))
        if worst > 1e-9:
            bad = float(np.asarray(target).reshape(-1)[int(np.argmax(resid))])
            raise ProjectionError(
                f"radius solve did not converge (residual {worst:.3e} rad at "
                f"incidence {bad:.6f} rad)", incidence_rad=bad)
    return rho.reshape(shape)


def project(X, intr: FisheyeIntrinsics):
    """Project camera-frame points (..., 3) to pixels.

    Returns (pixels (..., 2), valid (...,)); valid is False when the incidence
    angle exceeds half the FOV or the pixel falls outside the image.
    """
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != 3:
        raise ValueError("points must have shape (..., 3)")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite point coordinates")
    r_xy = np.hypot(X[..., 0], X[..., 1])
    norm = np.hypot(r_xy, X[..., 2])
    if np.any(norm == 0.0):
        raise ValueError("cannot project the camera center (zero-norm point)")
    psi = np.arctan2(r_xy, X[..., 2])
    rho = _solve_radius(intr, psi)
    with np.errstate(invalid="ignore", divide="ignore"):
        ux = np.where(r_xy > 0.0, X[..., 0] / r_xy, 0.0)
        uy = np.where(r_xy > 0.0, X[..., 1] / r_xy, 0.0)
    xy = np.stack([rho * ux, rho * uy], axis=-1)
    px = intr.affine_apply(xy)
    in_fov = psi <= intr.half_fov_rad * (1.0 + 1e-12)
    in_img = (
        (px[..., 0] >= 0.0) & (px[..., 0] <= intr.width - 1.0)
        & (px[..., 1] >= 0.0) & (px[..., 1] <= intr.height - 1.0)
    )
    return px, in_fov & in_img & (psi <= intr._psi_mono)


def unproject(p, intr: FisheyeIntrinsics):
    """Back-project pixels (..., 2) to unit rays (..., 3).

    valid is False outside the FOV circle; the ray is still returned.
    """
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != 2:
        raise ValueError("pixels must have shape (..., 2)")
    if not np.all(np.isfinite(p)):
        raise ValueError("non-finite pixel coordinates")
    xy = intr.affine_inverse(p)
    rho = np.hypot(xy[..., 0], xy[..., 1])
    z = _polyval(intr.poly, rho)
    ray = np.stack([xy[..., 0], xy[..., 1], z], axis=-1)
    ray = ray / np.linalg.norm(ray, axis=-1, keepdims=True)
    valid = rho <= intr.fov_radius * (1.0 + 1e-12)
    return ray, valid


def project_with_jacobians(X, intr: FisheyeIntrinsics):
    """Forward projection plus analytic derivatives, for least-squares solvers.

    Returns (px, valid, dpx_dX, dpx_dpoly, dpx_daffine) with shapes
    (..., 2), (...,), (..., 2, 3), (..., 2, n_coef), (..., 2, 5); the affine
    parameter order is (c, d, e, cx, cy). Derivatives follow from implicit
    differentiation of the radius solve.
    """
    X = np.asarray(X, dtype=float)
    px, valid = project(X, intr)
    Zx, Zy, Zz = X[..., 0], X[..., 1], X[..., 2]
    r_xy = np.hypot(Zx, Zy)
    s2 = r_xy * r_xy + Zz * Zz
    psi = np.arctan2(r_xy, Zz)
    rho = _solve_radius(intr, psi)
    g = _polyval(intr.poly, rho)
    gp = _polyder_val(intr.poly, rho)
    denom = g - rho * gp  # (rho^2 + g^2) * dpsi/drho
    drho_dpsi = (rho * rho + g * g) / denom

    near_axis = r_xy < 1e-9 * np.maximum(np.abs(Zz), 1e-300)
    r_safe = np.where(near_axis, 1.0, r_xy)
    ux = np.where(near_axis, 0.0, Zx / r_safe)
    uy = np.where(near_axis, 0.0, Zy / r_safe)

    # dn/dZ = u2 (x) (drho/dpsi * dpsi/dZ) + rho * du2/dZ
    dpsi_dZ = np.stack([
        Zz * ux / s2,
        Zz * uy / s2,
        -r_xy / s2,
    ], axis=-1)
    drho_dZ = drho_dpsi[..., None] * dpsi_dZ
    dn_dZ = np.empty(X.shape[:-1] + (2, 3))
    dn_dZ[..., 0, :] = ux[..., None] * drho_dZ
    dn_dZ[..., 1, :] = uy[..., None] * drho_dZ
    rr = rho / r_safe
    dn_dZ[..., 0, 0] += rr * (1.0 - ux * ux)
    dn_dZ[..., 0, 1] += rr * (-ux * uy)
    dn_dZ[..., 1, 0] += rr * (-ux * uy)
    dn_dZ[..., 1, 1] += rr * (1.0 - uy * uy)
    # exact small-angle limit: n = a0 * (Zx, Zy) / Zz
    a0 = intr.poly[0]
    if np.any(near_axis):
        lim = np.zeros(X.shape[:-1] + (2, 3))
        with np.errstate(divide="ignore", invalid="ignore"):
            lim[..., 0, 0] = a0 / Zz
            lim[..., 1, 1] = a0 / Zz
            lim[..., 0, 2] = -a0 * Zx / (Zz * Zz)
            lim[..., 1, 2] = -a0 * Zy / (Zz * Zz)
        dn_dZ = np.where(near_axis[..., None, None], lim, dn_dZ)

    A = np.array([[intr.c, intr.d], [intr.e, 1.0]])
    dpx_dZ = np.einsum("ij,...jk->...ik", A, dn_dZ)

    # dn/da_j = u2 * rho^(j+1) / (g - rho g')
    j = np.arange(intr.poly.size)
    rho_pow = rho[..., None] ** (j + 1)
    drho_da = rho_pow / denom[..., None]
    dn_da = np.stack([ux[..., None] * drho_da, uy[..., None] * drho_da], axis=-2)
    dpx_dpoly = np.einsum("ij,...jk->...ik", A, dn_da)

    nx = rho * ux
    ny = rho * uy
    zeros = np.zeros_like(nx)
    ones = np.ones_like(nx)
    dpx_daff = np.stack([
        np.stack([nx, ny, zeros, ones, zeros], axis=-1),
        np.stack([zeros, zeros, nx, zeros, ones], axis=-1),
    ], axis=-2)
    return px, valid, dpx_dZ, dpx_dpoly, dpx_daff


def fov_mask(intr: FisheyeIntrinsics):
    """Boolean (height, width) mask of pixels inside the FOV circle."""
    u, v = np.meshgrid(np.arange(intr.width), np.arange(intr.height))
    xy = intr.affine_inverse(np.stack([u, v], axis=-1).astype(float))
    rho = np.hypot(xy[..., 0], xy[..., 1])
    return rho <= intr.fov_radius * (1.0 + 1e-12)


def bilinear_sample(image, mask, px):
    """Sample ``image`` at subpixel locations (..., 2) with conservative masking.

    A sample is valid only when the whole 2x2 neighborhood is inside the image
    and marked valid in ``mask``; invalid samples return 0.
    """
    image = np.asarray(image)
    H, W = image.shape
    u = px[..., 0]
    v = px[..., 1]
    finite = np.isfinite(u) & np.isfinite(v)
    u = np.where(finite, u, -1.0)
    v = np.where(finite, v, -1.0)
    x0 = np.floor(u).astype(int)
    y0 = np.floor(v).astype(int)
    inb = (x0 >= 0) & (x0 + 1 <= W - 1) & (y0 >= 0) & (y0 + 1 <= H - 1)
    x0c = np.clip(x0, 0, W - 2)
    y0c = np.clip(y0, 0, H - 2)
    fx = u - x0c
    fy = v - y0c
    m00 = mask[y0c, x0c]
    m10 = mask[y0c, x0c + 1]
    m01 = mask[y0c + 1, x0c]
    m11 = mask[y0c + 1, x0c + 1]
    ok = inb & finite & m00 & m10 & m01 & m11
    i00 = image[y0c, x0c]
    i10 = image[y0c, x0c + 1]
    i01 = image[y0c + 1, x0c]
    i11 = image[y0c + 1, x0c + 1]
    val = (i00 * (1 - fx) * (1 - fy) + i10 * fx * (1 - fy)
           + i01 * (1 - fx) * fy + i11 * fx * fy)
    return np.where(ok, val, 0.0), ok
