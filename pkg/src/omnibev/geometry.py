"""Rigid transforms, quaternions and cylindrical coordinates.

Frame conventions used throughout the package:

* ego frame: right-handed, x forward, y left, z up
* camera frame: z forward (optical axis), x right, y down
* cylindrical angle ``theta = atan2(y, x)`` wrapped to ``[0, 2*pi)``; the
  origin maps to ``theta = 0``

A :class:`Pose` named ``a_to_b`` maps points expressed in frame ``a`` into
frame ``b``: ``p_b = R @ p_a + t``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Quaternion:
    """Unit rotation quaternion ``w + xi + yj + zk`` (Hamilton convention)."""

    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        for name in ("w", "x", "y", "z"):
            object.__setattr__(self, name, float(getattr(self, name)))
        n = math.sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)
        if not n > 0.0 or not math.isfinite(n):
            raise ValueError("quaternion must have finite non-zero norm")
        if n != 1.0:
            object.__setattr__(self, "w", self.w / n)
            object.__setattr__(self, "x", self.x / n)
            object.__setattr__(self, "y", self.y / n)
            object.__setattr__(self, "z", self.z / n)

    @classmethod
    def identity(cls) -> Quaternion:
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_axis_angle(cls, axis: Iterable[float], angle: float) -> Quaternion:
        a = np.asarray(axis, dtype=float)
        a = a / np.linalg.norm(a)
        s = math.sin(0.5 * angle)
        return cls(math.cos(0.5 * angle), a[0] * s, a[1] * s, a[2] * s)

    @classmethod
    def from_yaw(cls, yaw: float) -> Quaternion:
        return cls(math.cos(0.5 * yaw), 0.0, 0.0, math.sin(0.5 * yaw))

    @classmethod
    def from_matrix(cls, m) -> Quaternion:
        """Shepperd's method; ``m`` must be a proper rotation matrix."""
        m = np.asarray(m, dtype=float)
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        if tr > 0.0:
            s = 2.0 * math.sqrt(tr + 1.0)
            q = (0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            q = ((m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
        elif m[1, 1] > m[2, 2]:
            s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
            q = ((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s)
        else:
            s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
            q = ((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s)
        return cls(*q).canonicalize()

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w, self.x, self.y, self.z)

    def canonicalize(self) -> Quaternion:
        """Pick the double-cover representative with ``w >= 0``."""
        if self.w < 0.0:
            return Quaternion(-self.w, -self.x, -self.y, -self.z)
        return self

    def conjugate(self) -> Quaternion:
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def __mul__(self, other: Quaternion) -> Quaternion:
        a, b = self, other
        return Quaternion(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )

    def rotation_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def rotate(self, v) -> np.ndarray:
        """Rotate a 3-vector by ``q v q*`` without forming the matrix."""
        v = np.asarray(v, dtype=float)
        u = np.array([self.x, self.y, self.z])
        t = 2.0 * np.cross(u, v)
        return v + self.w * t + np.cross(u, t)

    def angle(self) -> float:
        """Rotation angle in ``[0, pi]``."""
        return 2.0 * math.atan2(math.sqrt(self.x**2 + self.y**2 + self.z**2), abs(self.w))

    def yaw(self) -> float:
        """Heading of the rotated x axis in the xy plane, in ``(-pi, pi]``."""
        w, x, y, z = self.w, self.x, self.y, self.z
        return math.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))


@dataclass(frozen=True)
class Pose:
    rotation: Quaternion = Quaternion()
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        t = tuple(float(c) for c in self.translation)
        if len(t) != 3:
            raise ValueError("translation must have 3 components")
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @classmethod
    def from_matrix(cls, m) -> Pose:
        """From a 4x4 or 3x4 homogeneous matrix."""
        m = np.asarray(m, dtype=float)
        return cls(Quaternion.from_matrix(m[:3, :3]), tuple(m[:3, 3]))

    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation.rotation_matrix()
        out[:3, 3] = self.translation
        return out

    def inverse(self) -> Pose:
        inv = self.rotation.conjugate()
        t = -inv.rotate(self.translation)
        return Pose(inv, tuple(t))

    def __matmul__(self, other: Pose) -> Pose:
        return compose(self, other)

    def apply(self, points) -> np.ndarray:
        """Transform one point ``(3,)`` or a batch ``(N, 3)``."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.rotation_matrix().T + np.asarray(self.translation)


def compose(a: Pose, b: Pose) -> Pose:
    """Pose applying ``b`` first, then ``a``."""
    rot = a.rotation * b.rotation
    t = a.rotation.rotate(b.translation) + np.asarray(a.translation)
    return Pose(rot, tuple(t))


@dataclass(frozen=True)
class CylindricalPoint:
    rho: float
    theta: float
    z: float

    def __post_init__(self):
        if self.rho < 0.0:
            raise ValueError(f"rho must be >= 0, got {self.rho}")


def wrap_angle(theta):
    """Wrap angles to ``[0, 2*pi)``; works on scalars and arrays."""
    w = np.mod(theta, TWO_PI)
    # fmod can round up to exactly 2*pi for tiny negative inputs
    w = np.where(w >= TWO_PI, 0.0, w)
    return float(w) if np.ndim(w) == 0 else w


def cart_to_cyl(p) -> CylindricalPoint:
    x, y, z = (float(c) for c in p)
    rho = math.hypot(x, y)
    theta = 0.0 if rho == 0.0 else wrap_angle(math.atan2(y, x))
    return CylindricalPoint(rho, theta, z)


def cyl_to_cart(p: CylindricalPoint) -> np.ndarray:
    return np.array([p.rho * math.cos(p.theta), p.rho * math.sin(p.theta), p.z])


def cart_to_cyl_array(points) -> np.ndarray:
    """Batch version of :func:`cart_to_cyl`; returns ``(N, 3)`` of rho, theta, z."""
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    rho = np.hypot(p[:, 0], p[:, 1])
    theta = np.where(rho == 0.0, 0.0, wrap_angle(np.arctan2(p[:, 1], p[:, 0])))
    return np.stack([rho, theta, p[:, 2]], axis=1)


def cyl_to_cart_array(cyl) -> np.ndarray:
    c = np.asarray(cyl, dtype=float).reshape(-1, 3)
    return np.stack([c[:, 0] * np.cos(c[:, 1]), c[:, 0] * np.sin(c[:, 1]), c[:, 2]], axis=1)


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
