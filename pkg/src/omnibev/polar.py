"""BEV grid definitions and polar encodings."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import TWO_PI, CylindricalPoint, cart_to_cyl_array


@dataclass(frozen=True)
class BevGrid:
    """Cartesian or polar BEV rasterisation.

    Polar grids partition ``[0, rho_max) x [0, 2*pi)`` into ``n_theta``
    angular by ``n_rho`` radial bins; bin ``(t, r)`` has flat index
    ``t * n_rho + r``. Cartesian grids partition ``x_range x y_range`` into
    ``nx`` by ``ny`` cells with flat index ``ix * ny + iy``.
    """

    mode: str
    z_min: float
    z_max: float
    rho_max: Optional[float] = None
    n_theta: Optional[int] = None
    n_rho: Optional[int] = None
    x_range: Optional[tuple[float, float]] = None
    y_range: Optional[tuple[float, float]] = None
    nx: Optional[int] = None
    ny: Optional[int] = None

    def __post_init__(self):
        if self.mode == "polar":
            if self.n_theta is None or self.n_theta < 4:
                raise ValueError("polar grid needs n_theta >= 4")
            if self.n_rho is None or self.n_rho < 1:
                raise ValueError("polar grid needs n_rho >= 1")
            if self.rho_max is None or not self.rho_max > 0:
                raise ValueError("polar grid needs rho_max > 0")
        elif self.mode == "cartesian":
            if self.x_range is None or self.y_range is None or not self.nx or not self.ny:
                raise ValueError("cartesian grid needs x_range, y_range, nx, ny")
            if not (self.x_range[1] > self.x_range[0] and self.y_range[1] > self.y_range[0]):
                raise ValueError("cartesian ranges must be increasing")
            if self.nx < 1 or self.ny < 1:
                raise ValueError("cartesian bin counts must be >= 1")
        else:
            raise ValueError(f"unknown grid mode {self.mode!r}")
        if self.z_max < self.z_min:
            raise ValueError("z_max must be >= z_min")

    @classmethod
    def polar(cls, rho_max, n_theta, n_rho, z_min=-5.0, z_max=3.0) -> BevGrid:
        return cls("polar", z_min, z_max, rho_max=rho_max, n_theta=n_theta, n_rho=n_rho)

    @classmethod
    def cartesian(cls, x_range, y_range, nx, ny, z_min=-5.0, z_max=3.0) -> BevGrid:
        return cls("cartesian", z_min, z_max, x_range=tuple(x_range), y_range=tuple(y_range), nx=nx, ny=ny)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_theta, self.n_rho) if self.mode == "polar" else (self.nx, self.ny)

    @property
    def n_bins(self) -> int:
        a, b = self.shape
        return a * b

    @property
    def theta_step(self) -> float:
        return TWO_PI / self.n_theta

    @property
    def rho_step(self) -> float:
        return self.rho_max / self.n_rho

    def normalization_ranges(self):
        """(lo, hi) per axis used to normalise Cartesian coordinates."""
        if self.mode == "polar":
            r = self.rho_max
            return np.array([[-r, r], [-r, r], [self.z_min, self.z_max]])
        return np.array([list(self.x_range), list(self.y_range), [self.z_min, self.z_max]])

    def bin_centers(self) -> np.ndarray:
        """Ego-frame xy of every bin centre in flat-index order, shape ``(n_bins, 2)``."""
        if self.mode == "polar":
            t = (np.arange(self.n_theta) + 0.5) * self.theta_step
            r = (np.arange(self.n_rho) + 0.5) * self.rho_step
            tt, rr = np.meshgrid(t, r, indexing="ij")
            return np.stack([rr * np.cos(tt), rr * np.sin(tt)], axis=-1).reshape(-1, 2)
        dx = (self.x_range[1] - self.x_range[0]) / self.nx
        dy = (self.y_range[1] - self.y_range[0]) / self.ny
        xs = self.x_range[0] + (np.arange(self.nx) + 0.5) * dx
        ys = self.y_range[0] + (np.arange(self.ny) + 0.5) * dy
        xx, yy = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([xx, yy], axis=-1).reshape(-1, 2)


@dataclass(frozen=True)
class PolarEncoding:
    vector: tuple[float, float, float, float]
    clamped: bool = False


def _require_polar(grid: BevGrid):
    if grid.mode != "polar":
        raise ValueError("operation needs a polar grid")


def encode_polar_array(points, grid: BevGrid):
    """``[sin t, cos t, rho/rho_max, z_norm]`` for ``(N, 3)`` points.

    Radii beyond ``rho_max`` and heights outside the z slab are clamped;
    the second return value flags clamped rows.
    """
    _require_polar(grid)
    height = grid.z_max - grid.z_min
    if not height > 0:
        raise ValueError("z slab has zero height")
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    cyl = cart_to_cyl_array(p)
    rho_n = cyl[:, 0] / grid.rho_max
    z_n = (cyl[:, 2] - grid.z_min) / height
    clamped = (rho_n > 1.0) | (z_n < 0.0) | (z_n > 1.0)
    enc = np.stack(
        [np.sin(cyl[:, 1]), np.cos(cyl[:, 1]), np.minimum(rho_n, 1.0), np.clip(z_n, 0.0, 1.0)], axis=1
    )
    return enc, clamped


def encode_polar(point, grid: BevGrid) -> PolarEncoding:
    enc, clamped = encode_polar_array(np.asarray(point, dtype=float)[None], grid)
    return PolarEncoding(tuple(float(v) for v in enc[0]), bool(clamped[0]))


def polar_anchor_grid(grid: BevGrid, n_per_beam: int) -> list[CylindricalPoint]:
    """Bin-centre anchors on ``n_theta`` radial beams, beam-major order."""
    _require_polar(grid)
    if n_per_beam < 1:
        raise ValueError("n_per_beam must be >= 1")
    z = 0.5 * (grid.z_min + grid.z_max)
    out = []
    for j in range(grid.n_theta):
        theta = (j + 0.5) * grid.theta_step
        for i in range(n_per_beam):
            out.append(CylindricalPoint((i + 0.5) * grid.rho_max / n_per_beam, theta, z))
    return out


def bin_index(p: CylindricalPoint, grid: BevGrid):
    """``(theta_idx, rho_idx)`` of a cylindrical point, or ``None`` when out of range."""
    _require_polar(grid)
    if not (0.0 <= p.rho < grid.rho_max):
        return None
    t = min(int(math.floor(p.theta / grid.theta_step)), grid.n_theta - 1)
    r = min(int(math.floor(p.rho / grid.rho_step)), grid.n_rho - 1)
    return (max(t, 0), r)


def flat_bin_indices(points, grid: BevGrid) -> np.ndarray:
    """Flat bin index per ego-frame point ``(N, 3)``; ``-1`` for points outside the grid or z slab."""
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    in_z = (p[:, 2] >= grid.z_min) & (p[:, 2] <= grid.z_max)
    if grid.mode == "polar":
        cyl = cart_to_cyl_array(p)
        ok = in_z & (cyl[:, 0] < grid.rho_max)
        t = np.minimum(np.floor(cyl[:, 1] / grid.theta_step), grid.n_theta - 1).astype(np.int64)
        r = np.minimum(np.floor(cyl[:, 0] / grid.rho_step), grid.n_rho - 1).astype(np.int64)
        idx = t * grid.n_rho + r
    else:
        dx = (grid.x_range[1] - grid.x_range[0]) / grid.nx
        dy = (grid.y_range[1] - grid.y_range[0]) / grid.ny
        ix = np.floor((p[:, 0] - grid.x_range[0]) / dx)
        iy = np.floor((p[:, 1] - grid.y_range[0]) / dy)
        ok = in_z & (ix >= 0) & (ix < grid.nx) & (iy >= 0) & (iy < grid.ny)
        idx = np.where(ok, ix * grid.ny + iy, 0).astype(np.int64)
    return np.where(ok, idx, -1)
