"""Geometric cores of frustum lifting, BEV splatting, reference-point
projection and position-encoding inputs for distorted cameras."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .camera import MeiCamera, generate_ray_grid
from .geometry import Pose
from .polar import BevGrid, encode_polar_array, flat_bin_indices


@dataclass(frozen=True)
class FeatureCloud:
    points: np.ndarray  # (N, 3) ego frame, metres
    features: np.ndarray  # (N, C)
    camera_ids: np.ndarray  # (N,) int32

    def __post_init__(self):
        n = self.points.shape[0]
        if self.points.shape != (n, 3) or self.features.ndim != 2 or self.features.shape[0] != n:
            raise ValueError("points must be (N, 3) and features (N, C)")
        if self.camera_ids.shape != (n,):
            raise ValueError("camera_ids must be (N,)")

    def __len__(self):
        return self.points.shape[0]

    @property
    def channels(self) -> int:
        return self.features.shape[1]

    @classmethod
    def empty(cls, channels: int) -> FeatureCloud:
        return cls(np.zeros((0, 3)), np.zeros((0, channels)), np.zeros(0, dtype=np.int32))

    @classmethod
    def concat(cls, clouds) -> FeatureCloud:
        clouds = list(clouds)
        return cls(
            np.concatenate([c.points for c in clouds]),
            np.concatenate([c.features for c in clouds]),
            np.concatenate([c.camera_ids for c in clouds]),
        )


@dataclass(frozen=True)
class BevFeatureMap:
    grid: BevGrid
    data: np.ndarray  # (C, *grid.shape)


def lift_frustum(cam: MeiCamera, cam_pose: Pose, stride: int, depths, features, camera_id: int = 0) -> FeatureCloud:
    """Cast every strided pixel's distortion-aware ray to each depth.

    ``features`` is ``(H_s, W_s, C)`` over the strided grid; ``cam_pose``
    maps camera-frame points to the ego frame. Pixels without a valid ray
    are omitted; order is row-major (v, u) then depth.
    """
    grid = generate_ray_grid(cam, stride, depths)
    feats = np.asarray(features, dtype=float)
    hs, ws = grid.valid.shape
    if feats.ndim != 3 or feats.shape[:2] != (hs, ws):
        raise ValueError(f"features must have shape ({hs}, {ws}, C), got {feats.shape}")
    nd = grid.depths.size
    pts_cam = grid.points[grid.valid].reshape(-1, 3)
    pts_ego = cam_pose.apply(pts_cam) if len(pts_cam) else pts_cam
    f = np.repeat(feats[grid.valid], nd, axis=0)
    ids = np.full(len(pts_ego), camera_id, dtype=np.int32)
    return FeatureCloud(pts_ego, f, ids)


def splat(cloud: FeatureCloud, grid: BevGrid) -> BevFeatureMap:
    """Sum-pool point features into BEV bins.

    Each bin/channel sum is computed exactly and rounded once (the same
    result as ``math.fsum``), so the map is independent of point order,
    chunking and thread count.
    """
    c = cloud.channels
    bins = flat_bin_indices(cloud.points, grid)
    keep = np.flatnonzero(bins >= 0)
    feats = np.ascontiguousarray(cloud.features, dtype=np.float64)
    if not np.all(np.isfinite(feats[keep])):
        raise ValueError("features must be finite")
    order = keep[np.argsort(bins[keep], kind="stable")].astype(np.int64)
    counts = np.bincount(bins[keep], minlength=grid.n_bins)
    starts = np.zeros(grid.n_bins + 1, dtype=np.int64)
    np.cumsum(counts, out=starts[1:])
    out = np.zeros((grid.n_bins, c))
    kern = kernels.get_backend()
    kernels.run_chunked(kern.segment_fsum, c, feats, order, starts, out, min_chunk=1)
    return BevFeatureMap(grid, np.ascontiguousarray(out.T.reshape(c, *grid.shape)))


def project_reference_points(bev_points, cam: MeiCamera, cam_pose: Pose):
    """Project ego-frame reference points into the image.

    Returns ``(pixels, valid)``; nothing is dropped, invalid rows (behind
    the camera, at its centre, or off-image) carry ``valid = False``.
    """
    p = np.asarray(bev_points, dtype=float).reshape(-1, 3)
    p_cam = cam_pose.inverse().apply(p)
    uv, valid, _ = cam.project_points(p_cam)
    return uv, valid


def bev_query_points(grid: BevGrid, z_levels=None, n_levels: int = 4) -> np.ndarray:
    """Lift BEV bin centres to 3D at each z level, ``(n_bins * L, 3)``.

    Defaults to ``n_levels`` evenly spaced heights spanning the z slab.
    """
    if z_levels is None:
        z_levels = np.linspace(grid.z_min, grid.z_max, n_levels)
    z = np.asarray(z_levels, dtype=float)
    xy = grid.bin_centers()
    out = np.empty((xy.shape[0], z.size, 3))
    out[:, :, :2] = xy[:, None, :]
    out[:, :, 2] = z[None, :]
    return out.reshape(-1, 3)


@dataclass(frozen=True)
class PositionEncodingInputs:
    points: np.ndarray  # (H_s, W_s, D, 3) ego frame, NaN where invalid
    encodings: np.ndarray  # (H_s, W_s, D, 3 or 4)
    valid: np.ndarray  # (H_s, W_s)
    mode: str


def petr_pe_inputs(cam: MeiCamera, cam_pose: Pose, stride: int, depths, grid: BevGrid, mode: str = "cartesian"):
    """Normalised frustum coordinates fed to a 3D position encoder.

    ``cartesian`` maps each ego-frame frustum point to ``(x, y, z)`` scaled
    into ``[0, 1]`` by the grid ranges; ``polar`` emits the wrap-safe
    ``[sin, cos, rho_norm, z_norm]`` encoding.
    """
    if mode not in ("cartesian", "polar"):
        raise ValueError(f"unknown encoding mode {mode!r}")
    if mode == "polar" and grid.mode != "polar":
        raise ValueError("polar encoding needs a polar grid")
    rg = generate_ray_grid(cam, stride, depths)
    hs, ws, nd = rg.points.shape[:3]
    flat = cam_pose.apply(rg.points.reshape(-1, 3))
    mask = np.repeat(rg.valid.reshape(-1), nd)
    flat[~mask] = np.nan
    if mode == "cartesian":
        rng = grid.normalization_ranges()
        enc = (flat - rng[:, 0]) / (rng[:, 1] - rng[:, 0])
    else:
        enc = np.full((flat.shape[0], 4), np.nan)
        if mask.any():
            enc[mask] = encode_polar_array(flat[mask], grid)[0]
    return PositionEncodingInputs(
        flat.reshape(hs, ws, nd, 3), enc.reshape(hs, ws, nd, -1), rg.valid, mode
    )
