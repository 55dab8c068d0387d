"""Unified (MEI) central camera model.

Projection chain for a camera-frame point ``P``::

    P_s = P / |P|
    m   = (X_s / (Z_s + xi), Y_s / (Z_s + xi))
    m_d = (1 + k1 r^2 + k2 r^4) m,      r^2 = |m|^2
    uv  = K m_d - crop_offset

With ``xi = 0`` and ``k1 = k2 = 0`` this is the plain pinhole model; the
implementation divides by ``Z + xi |P|`` (algebraically identical) so the
reduction is exact in floating point as well.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

EPS_DENOM = 1e-8
HEMISPHERE_MARGIN_DEG = 5.0
MAX_ITER = 20
RESIDUAL_TOL = 1e-10

# cosine of the largest accepted incidence angle (90 deg + margin)
COS_LIMIT = math.cos(math.radians(90.0 + HEMISPHERE_MARGIN_DEG))


class NoConvergenceError(ArithmeticError):
    """Undistortion did not reach the residual tolerance."""

    def __init__(self, pixel, residual):
        super().__init__(f"undistortion did not converge at pixel {tuple(pixel)}; last residual {residual:.3e}")
        self.pixel = tuple(pixel)
        self.residual = residual


class OutOfDomainError(ValueError):
    """Pixel ray lies outside the projectable hemisphere."""


@dataclass(frozen=True)
class MeiCamera:
    xi: float
    k1: float
    k2: float
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    crop_offset: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("fx and fy must be positive")
        if self.xi < 0:
            raise ValueError("xi must be >= 0")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        object.__setattr__(self, "crop_offset", tuple(float(c) for c in self.crop_offset))

    @classmethod
    def pinhole(cls, fx, fy, cx, cy, width, height, crop_offset=(0.0, 0.0)) -> MeiCamera:
        return cls(0.0, 0.0, 0.0, fx, fy, cx, cy, width, height, crop_offset)

    @property
    def is_pinhole(self) -> bool:
        return self.xi == 0.0 and self.k1 == 0.0 and self.k2 == 0.0

    @property
    def intrinsic_matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def _params(self):
        return (self.xi, self.k1, self.k2, self.fx, self.fy, self.cx, self.cy,
                self.crop_offset[0], self.crop_offset[1])

    def project_points(self, points):
        """Batch projection. Returns ``(uv, valid, behind)`` for ``(N, 3)`` input.

        ``behind`` marks points outside the projectable hemisphere (and the
        origin); their ``uv`` is NaN. ``valid`` additionally requires the
        pixel to fall inside the (cropped) image.
        """
        pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        n = pts.shape[0]
        uv = np.empty((n, 2))
        valid = np.empty(n, dtype=np.uint8)
        behind = np.empty(n, dtype=np.uint8)
        kern = kernels.get_backend()
        kernels.run_chunked(
            kern.project_points, n, pts, *self._params(), float(self.width), float(self.height),
            COS_LIMIT, EPS_DENOM, uv, valid, behind,
        )
        return uv, valid.astype(bool), behind.astype(bool)

    def unproject_pixels(self, pixels, max_iter=MAX_ITER, tol=RESIDUAL_TOL):
        """Batch unprojection to unit rays.

        Returns ``(rays, status, residual)``; status 0 = ok, 1 = undistortion
        did not converge, 2 = outside the projectable hemisphere.
        """
        pix = np.ascontiguousarray(np.asarray(pixels, dtype=np.float64).reshape(-1, 2))
        n = pix.shape[0]
        rays = np.empty((n, 3))
        status = np.empty(n, dtype=np.int8)
        residual = np.empty(n)
        kern = kernels.get_backend()
        kernels.run_chunked(
            kern.unproject_pixels, n, pix, *self._params(), COS_LIMIT, int(max_iter), float(tol),
            rays, status, residual,
        )
        return rays, status, residual


@dataclass(frozen=True)
class ProjectionResult:
    pixel: tuple[float, float]
    valid: bool
    behind: bool


def project_mei(cam: MeiCamera, point) -> ProjectionResult:
    p = np.asarray(point, dtype=float)
    if not np.linalg.norm(p) > 0.0:
        raise ValueError("cannot project the camera centre")
    uv, valid, behind = cam.project_points(p[None])
    return ProjectionResult((float(uv[0, 0]), float(uv[0, 1])), bool(valid[0]), bool(behind[0]))


def unproject_mei(cam: MeiCamera, pixel) -> np.ndarray:
    """Unit ray through ``pixel``; raises on non-convergence or out-of-domain rays."""
    rays, status, residual = cam.unproject_pixels(np.asarray(pixel, dtype=float)[None])
    if status[0] == 1:
        raise NoConvergenceError(pixel, float(residual[0]))
    if status[0] == 2:
        raise OutOfDomainError(f"pixel {tuple(pixel)} is outside the projectable hemisphere")
    return rays[0]


@dataclass(frozen=True)
class RayGrid:
    """Frustum points for a strided pixel grid.

    ``points`` has shape ``(H_s, W_s, D, 3)``; ``valid`` is ``(H_s, W_s)``.
    Flattening with C order gives row-major (v, u) then depth ordering.
    """

    pixels: np.ndarray
    depths: np.ndarray
    rays: np.ndarray
    points: np.ndarray
    valid: np.ndarray


def strided_pixels(cam: MeiCamera, stride: int) -> np.ndarray:
    """Pixel centres ``(H_s, W_s, 2)`` of the strided grid, ``(u, v)`` order."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    us = np.arange(0, cam.width, stride, dtype=float)
    vs = np.arange(0, cam.height, stride, dtype=float)
    uu, vv = np.meshgrid(us, vs)
    return np.stack([uu, vv], axis=-1)


def generate_ray_grid(cam: MeiCamera, stride: int, depths) -> RayGrid:
    d = np.asarray(depths, dtype=float).ravel()
    if d.size == 0:
        raise ValueError("depth list is empty")
    if np.any(d <= 0) or np.any(np.diff(d) <= 0):
        raise ValueError("depths must be positive and strictly increasing")
    pix = strided_pixels(cam, stride)
    hs, ws = pix.shape[:2]
    rays, status, _ = cam.unproject_pixels(pix.reshape(-1, 2))
    valid = (status == 0).reshape(hs, ws)
    rays = rays.reshape(hs, ws, 3)
    points = rays[:, :, None, :] * d[None, None, :, None]
    return RayGrid(pix, d, rays, points, valid)


def default_depths(count=64, near=1.0, far=61.0) -> np.ndarray:
    return np.linspace(near, far, count)
