"""Virtual pinhole views synthesised from fisheye cameras.

Mount angles are expressed in the fisheye camera frame. Positive yaw turns
the optical axis toward the vehicle front; for a camera whose +x axis points
backward in the ego frame this is a rotation toward its -x axis. Negative
pitch tilts the axis downward (toward camera +y).
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import MeiCamera
from .geometry import Pose, Quaternion, rot_x, rot_y, wrap_angle

FORWARD_YAW_DEG = 30.0
BACKWARD_YAW_DEG = -46.0
PITCH_DEG = -4.0
VIRTUAL_SIZE = (704, 376)

REMAP_MAGIC = b"RMAP"
REMAP_VERSION = 1
REMAP_TEXT_HEADER = "# remap v1"


@dataclass(frozen=True)
class VirtualPinhole:
    name: str
    camera: MeiCamera  # pinhole-reduced
    yaw_deg: float
    pitch_deg: float
    mount: Pose  # virtual camera frame -> fisheye camera frame

    @property
    def optical_axis(self) -> np.ndarray:
        """Virtual optical axis expressed in the fisheye frame."""
        return self.mount.rotation.rotate([0.0, 0.0, 1.0])


def _yaw_sign(fisheye_pose: Pose) -> float:
    # ego-x component of the camera's +x axis
    return 1.0 if fisheye_pose.rotation.rotation_matrix()[0, 0] >= 0.0 else -1.0


def mount_rotation(yaw_deg: float, pitch_deg: float, yaw_sign: float = 1.0) -> np.ndarray:
    """Virtual-to-fisheye rotation: yaw about the camera vertical, then pitch about the virtual x axis."""
    # rot_x(negative) tilts +z toward +y (down in the camera frame)
    return rot_y(yaw_sign * math.radians(yaw_deg)) @ rot_x(math.radians(pitch_deg))


def make_virtual_cameras(
    fisheye: MeiCamera,
    fisheye_pose: Pose,
    front_focal: float,
    size=VIRTUAL_SIZE,
    yaws_deg=(FORWARD_YAW_DEG, BACKWARD_YAW_DEG),
    pitch_deg: float = PITCH_DEG,
    name: str = "fisheye",
) -> list[VirtualPinhole]:
    """Forward and backward virtual pinholes for one fisheye camera.

    The principal point sits at the image centre ``((w-1)/2, (h-1)/2)``.
    """
    if not front_focal > 0:
        raise ValueError("front_focal must be positive")
    w, h = size
    pin = MeiCamera.pinhole(front_focal, front_focal, (w - 1) / 2.0, (h - 1) / 2.0, w, h)
    sign = _yaw_sign(fisheye_pose)
    out = []
    for tag, yaw in zip(("forward", "backward"), yaws_deg):
        rot = mount_rotation(yaw, pitch_deg, sign)
        out.append(VirtualPinhole(f"{name}_{tag}", pin, float(yaw), float(pitch_deg), Pose(Quaternion.from_matrix(rot))))
    return out


@dataclass(frozen=True)
class RemapTable:
    """Source fisheye coordinates for every virtual pixel, NaN where invalid.

    ``map`` has shape ``(height, width, 2)`` holding ``(u_src, v_src)``.
    """

    map: np.ndarray

    @property
    def width(self) -> int:
        return self.map.shape[1]

    @property
    def height(self) -> int:
        return self.map.shape[0]

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.map[..., 0])

    def to_bytes(self) -> bytes:
        """Binary layout: ``RMAP`` | u32 version | u32 width | u32 height |
        float64 pairs ``(u_src, v_src)`` row-major, all little-endian."""
        head = REMAP_MAGIC + struct.pack("<III", REMAP_VERSION, self.width, self.height)
        return head + self.map.astype("<f8").tobytes(order="C")

    @classmethod
    def from_bytes(cls, buf: bytes) -> RemapTable:
        if buf[:4] != REMAP_MAGIC:
            raise ValueError("not a remap table (bad magic)")
        version, w, h = struct.unpack("<III", buf[4:16])
        if version != REMAP_VERSION:
            raise ValueError(f"unsupported remap version {version}")
        body = np.frombuffer(buf, dtype="<f8", offset=16)
        if body.size != w * h * 2:
            raise ValueError("remap body size does not match header")
        return cls(body.reshape(h, w, 2).astype(np.float64))

    def to_text(self) -> str:
        """Lossless text form: header line, size line, then one ``u_src v_src``
        pair per pixel in row-major order (``repr`` of float64, ``nan`` for invalid)."""
        lines = [REMAP_TEXT_HEADER, f"{self.width} {self.height}"]
        for u, v in self.map.reshape(-1, 2):
            lines.append(f"{float(u)!r} {float(v)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> RemapTable:
        lines = text.splitlines()
        if not lines or lines[0] != REMAP_TEXT_HEADER:
            raise ValueError("not a remap text table")
        w, h = (int(t) for t in lines[1].split())
        vals = np.array([[float(t) for t in ln.split()] for ln in lines[2:]], dtype=np.float64)
        if vals.shape != (w * h, 2):
            raise ValueError("remap text body size does not match header")
        return cls(vals.reshape(h, w, 2))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> RemapTable:
        return cls.from_bytes(Path(path).read_bytes())


def virtual_rays(virt: VirtualPinhole) -> np.ndarray:
    """Unit rays of every virtual pixel in the fisheye frame, ``(h, w, 3)``."""
    cam = virt.camera
    us = np.arange(cam.width, dtype=float)
    vs = np.arange(cam.height, dtype=float)
    uu, vv = np.meshgrid(us, vs)
    d = np.stack([(uu - cam.cx) / cam.fx, (vv - cam.cy) / cam.fy, np.ones_like(uu)], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return d @ virt.mount.rotation.rotation_matrix().T


def build_remap(fisheye: MeiCamera, virt: VirtualPinhole) -> RemapTable:
    rays = virtual_rays(virt)
    uv, valid, _ = fisheye.project_points(rays.reshape(-1, 3))
    uv[~valid] = np.nan
    return RemapTable(uv.reshape(virt.camera.height, virt.camera.width, 2))


def remap_image(image: np.ndarray, table: RemapTable, fill=0.0) -> np.ndarray:
    """Bilinear resampling of a source image (``(H, W)`` or ``(H, W, C)``) through a table."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    u = table.map[..., 0]
    v = table.map[..., 1]
    ok = table.valid & (u <= w - 1) & (v <= h - 1)
    u0 = np.clip(np.floor(np.where(ok, u, 0)), 0, max(w - 2, 0)).astype(int)
    v0 = np.clip(np.floor(np.where(ok, v, 0)), 0, max(h - 2, 0)).astype(int)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    a = np.where(ok, u - u0, 0.0)
    b = np.where(ok, v - v0, 0.0)
    if img.ndim == 3:
        a, b, ok = a[..., None], b[..., None], ok[..., None]
    out = (
        img[v0, u0] * (1 - a) * (1 - b)
        + img[v0, u1] * a * (1 - b)
        + img[v1, u0] * (1 - a) * b
        + img[v1, u1] * a * b
    )
    return np.where(ok, out, fill)


def fov_coverage(cameras, azimuth_bins: int) -> np.ndarray:
    """Which cameras see the horizontal ego ray at each azimuth bin centre.

    ``cameras`` is a sequence of ``(camera, pose)`` with ``pose`` mapping
    camera to ego frame; any object with ``project_points`` returning
    ``(uv, valid, behind)`` works as a camera. Returns a bool array
    ``(azimuth_bins, n_cameras)``; bin ``i`` is centred at
    ``(i + 0.5) * 2*pi / azimuth_bins`` measured from ego +x toward +y.
    """
    if azimuth_bins < 4:
        raise ValueError("azimuth_bins must be >= 4")
    az = azimuth_centers(azimuth_bins)
    dirs = np.stack([np.cos(az), np.sin(az), np.zeros_like(az)], axis=1)
    out = np.zeros((azimuth_bins, len(cameras)), dtype=bool)
    for j, (cam, pose) in enumerate(cameras):
        # directions only: rotate, ignore the mount translation
        d_cam = dirs @ pose.rotation.rotation_matrix()
        _, valid, _ = cam.project_points(d_cam)
        out[:, j] = valid
    return out


def azimuth_centers(azimuth_bins: int) -> np.ndarray:
    return wrap_angle((np.arange(azimuth_bins) + 0.5) * (2 * math.pi / azimuth_bins))


def virtual_ego_pose(fisheye_pose: Pose, virt: VirtualPinhole) -> Pose:
    """Virtual camera to ego transform."""
    return fisheye_pose @ virt.mount
