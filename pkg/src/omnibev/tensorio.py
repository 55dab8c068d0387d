"""Flat binary bundles of named arrays.

Layout (little-endian throughout)::

    magic      4 bytes   b"OBVB"
    version    u32       1
    count      u32       number of arrays
    then per array:
      name_len u16, name (utf-8)
      dtype    1 byte    'f' float32 | 'd' float64 | 'i' int32 | 'q' int64 | 'B' uint8
      ndim     u8
      dims     ndim x u64
      body     row-major (C order) element data

Feature clouds hold ``points`` (N, 3) f64, ``features`` (N, C) f64 and
``camera_ids`` (N,) i32; BEV maps hold ``data`` (C, A, B) f64 plus a
``grid`` array describing the grid (see :func:`grid_to_array`).
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .polar import BevGrid
from .view_transform import BevFeatureMap, FeatureCloud

MAGIC = b"OBVB"
VERSION = 1
_TAGS = {"f": "<f4", "d": "<f8", "i": "<i4", "q": "<i8", "B": "u1"}
_TAG_OF = {np.dtype(v).str: k for k, v in _TAGS.items()}


def dumps(arrays: dict) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        a = np.asarray(arr)
        if a.dtype == np.bool_:
            a = a.astype(np.uint8)
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        tag = _TAG_OF.get(a.dtype.str)
        if tag is None:
            raise TypeError(f"unsupported dtype {a.dtype} for {name!r}")
        key = name.encode("utf-8")
        out.append(struct.pack("<H", len(key)) + key)
        out.append(tag.encode("ascii") + struct.pack("<B", a.ndim))
        out.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        out.append(np.ascontiguousarray(a).tobytes())
    return b"".join(out)


def loads(buf: bytes) -> dict:
    if buf[:4] != MAGIC:
        raise ValueError("not an array bundle (bad magic)")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise ValueError(f"unsupported bundle version {version}")
    pos = 12
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        tag = chr(buf[pos])
        ndim = buf[pos + 1]
        pos += 2
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        dt = np.dtype(_TAGS[tag])
        n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        out[name] = np.frombuffer(buf, dtype=dt, count=n, offset=pos).reshape(shape).copy()
        pos += n * dt.itemsize
    if pos != len(buf):
        raise ValueError("trailing bytes after last array")
    return out


def save(path, arrays: dict) -> None:
    Path(path).write_bytes(dumps(arrays))


def load(path) -> dict:
    return loads(Path(path).read_bytes())


def grid_to_array(grid: BevGrid) -> np.ndarray:
    """``[mode, z_min, z_max, a, b, c, d, e]`` with mode 0 = polar
    (``rho_max, n_theta, n_rho``) and 1 = cartesian (``x0, x1, y0, y1, nx, ny``)."""
    if grid.mode == "polar":
        return np.array([0, grid.z_min, grid.z_max, grid.rho_max, grid.n_theta, grid.n_rho, 0, 0, 0], dtype=float)
    return np.array([1, grid.z_min, grid.z_max, *grid.x_range, *grid.y_range, grid.nx, grid.ny], dtype=float)


def grid_from_array(a) -> BevGrid:
    a = [float(v) for v in a]
    if a[0] == 0:
        return BevGrid.polar(a[3], int(a[4]), int(a[5]), a[1], a[2])
    return BevGrid.cartesian((a[3], a[4]), (a[5], a[6]), int(a[7]), int(a[8]), a[1], a[2])


def cloud_arrays(cloud: FeatureCloud) -> dict:
    return {
        "points": cloud.points.astype(np.float64),
        "features": cloud.features.astype(np.float64),
        "camera_ids": cloud.camera_ids.astype(np.int32),
    }


def cloud_from_arrays(d: dict) -> FeatureCloud:
    return FeatureCloud(d["points"], d["features"], d["camera_ids"])


def bev_arrays(bev: BevFeatureMap) -> dict:
    return {"grid": grid_to_array(bev.grid), "data": bev.data.astype(np.float64)}


def bev_from_arrays(d: dict) -> BevFeatureMap:
    return BevFeatureMap(grid_from_array(d["grid"]), d["data"])
