"""Deterministic synthetic source tree for tests and demos.

Sequence ``seq_a`` (train) drives 9 frames along +x at 40 m spacing
(320 m). Frame 2 has no pose, frame 3 lacks ``image_02``, frame 5 has
``image_03`` 50 ms out of sync and frame 7 has no LiDAR scan. With the
default settings this yields 2 scenes and 5 samples (frames 0, 1, 4 and
6, 8). Seven objects are labelled: five static (one never hit by LiDAR) and
two dynamic.
"""
from __future__ import annotations

import datetime as _dt
import struct
import zlib
from pathlib import Path

import numpy as np

from ..camera import MeiCamera
from ..geometry import Pose, Quaternion
from .kitti360 import CAMERA_SENSORS

SEQUENCE = "seq_a"
N_FRAMES = 9
SPACING_M = 40.0
T0 = _dt.datetime(2013, 5, 28, 8, 46, 2, tzinfo=_dt.timezone.utc)

KITTI_FISHEYE = MeiCamera(2.2134, 0.01680, 1.6549, 1336.32, 1335.79, 716.94, 705.76, 1400, 1400)
KITTI_PINHOLE = dict(f=552.554261, cx=682.049453, cy=238.769549, width=1408, height=376)

# camera -> ego rotations (columns are camera x, y, z in the ego frame)
_CAM_AXES = {
    "image_00": ((0, -1, 0), (0, 0, -1), (1, 0, 0)),
    "image_01": ((0, -1, 0), (0, 0, -1), (1, 0, 0)),
    "image_02": ((1, 0, 0), (0, 0, -1), (0, 1, 0)),
    "image_03": ((-1, 0, 0), (0, 0, -1), (0, -1, 0)),
}
_CAM_POS = {
    "image_00": (1.55, 0.25, 1.60),
    "image_01": (1.55, -0.35, 1.60),
    "image_02": (0.80, 1.00, 1.55),
    "image_03": (0.80, -1.00, 1.55),
}
VELO_POS = (0.80, 0.0, 1.73)

# key, label, centre (world), size (w, l, h), yaw, interior points per frame
STATIC_OBJECTS = (
    ("26_1", "car", (20.0, 4.0, 0.8), (1.8, 4.2, 1.5), 0.1, 12),
    ("17_2", "pole", (100.0, -5.0, 2.0), (0.3, 0.3, 4.0), 0.0, 6),
    ("20_3", "trafficSign", (170.0, 6.0, 2.5), (0.6, 0.2, 0.8), 1.2, 6),
    ("39_4", "box", (250.0, 3.0, 0.5), (0.8, 0.8, 1.0), 0.4, 8),
    ("26_5", "car", (60.0, -8.0, 0.8), (1.8, 4.2, 1.5), -0.3, 0),  # never observed
)


def _dynamic_tracks():
    # key, label, size, frame -> (centre, yaw)
    ped = {f: ((40.0 * f + 10.0, 2.0 + 0.1 * f, 0.9), 0.5) for f in range(N_FRAMES)}
    car = {f: ((40.0 * f + 15.0, -3.5, 0.8), 0.0) for f in range(4, N_FRAMES)}
    return (("24_7", "person", (0.7, 0.7, 1.8), ped), ("26_8", "car", (1.8, 4.5, 1.5), car))


def _ts(us: int) -> str:
    t = T0 + _dt.timedelta(microseconds=us)
    return t.strftime("%Y-%m-%d %H:%M:%S.") + f"{t.microsecond:06d}000"


def _fmt(vals) -> str:
    return " ".join(repr(float(v)) for v in vals)


def _tiny_png() -> bytes:
    def chunk(kind, data):
        return struct.pack(">I", len(data)) + kind + data + struct.pack(">I", zlib.crc32(kind + data))
    ihdr = struct.pack(">IIBBBBB", 1, 1, 8, 0, 0, 0, 0)
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr) + chunk(b"IDAT", zlib.compress(b"\x00\x80")) + chunk(b"IEND", b"")


def cam_to_ego(sensor: str) -> Pose:
    R = np.array(_CAM_AXES[sensor], dtype=float).T
    return Pose(Quaternion.from_matrix(R), _CAM_POS[sensor])


def ego_pose(frame: int) -> Pose:
    return Pose(Quaternion.from_yaw(0.0), (SPACING_M * frame, 0.0, 0.0))


def _box_xml(tag, key, label, center, size, yaw, frame, dynamic):
    w, l, h = size
    R = Quaternion.from_yaw(yaw).rotation_matrix() @ np.diag([l, w, h])
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = center
    sem, inst = key.split("_")
    verts = [[sx, sy, sz] for sx in (-0.5, 0.5) for sy in (-0.5, 0.5) for sz in (-0.5, 0.5)]
    return (
        f"<{tag}>\n"
        f"  <transform type_id=\"opencv-matrix\"><rows>4</rows><cols>4</cols><dt>d</dt>"
        f"<data>{_fmt(T.ravel())}</data></transform>\n"
        f"  <vertices type_id=\"opencv-matrix\"><rows>8</rows><cols>3</cols><dt>f</dt>"
        f"<data>{_fmt(np.ravel(verts))}</data></vertices>\n"
        f"  <semanticId>{sem}</semanticId><instanceId>{inst}</instanceId>\n"
        f"  <label>{label}</label><timestamp>{frame}</timestamp><dynamic>{int(dynamic)}</dynamic>\n"
        f"</{tag}>\n"
    )


def _points_in_box(rng, center, size, yaw, n):
    w, l, h = size
    local = (rng.random((n, 3)) - 0.5) * 0.9 * np.array([l, w, h])
    R = Quaternion.from_yaw(yaw).rotation_matrix()
    return local @ R.T + np.asarray(center)


def write_fixture(root, seed: int = 0) -> Path:
    """Write the synthetic tree under ``root`` and return it."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    calib = root / "calibration"
    calib.mkdir(parents=True, exist_ok=True)

    lines = [f"{s}: {_fmt(cam_to_ego(s).matrix()[:3].ravel())}" for s in CAMERA_SENSORS]
    (calib / "calib_cam_to_pose.txt").write_text("\n".join(lines) + "\n")
    velo_to_ego = Pose(Quaternion.identity(), VELO_POS)
    cam0_to_velo = velo_to_ego.inverse() @ cam_to_ego("image_00")
    (calib / "calib_cam_to_velo.txt").write_text(_fmt(cam0_to_velo.matrix()[:3].ravel()) + "\n")
    p = KITTI_PINHOLE
    persp = []
    for idx, tx in (("00", 0.0), ("01", -0.331 * p["f"])):
        persp.append(f"S_rect_{idx}: {p['width']} {p['height']}")
        persp.append(f"R_rect_{idx}: {_fmt(np.eye(3).ravel())}")
        persp.append(f"P_rect_{idx}: {_fmt([p['f'], 0, p['cx'], tx, 0, p['f'], p['cy'], 0, 0, 0, 1, 0])}")
    (calib / "perspective.txt").write_text("\n".join(persp) + "\n")
    c = KITTI_FISHEYE
    for sensor in ("image_02", "image_03"):
        (calib / f"{sensor}.yaml").write_text(
            "%YAML:1.0\n---\nmodel_type: MEI\ncamera_name: " + sensor + "\n"
            f"image_width: {c.width}\nimage_height: {c.height}\n"
            f"mirror_parameters:\n   xi: {c.xi!r}\n"
            f"distortion_parameters:\n   k1: {c.k1!r}\n   k2: {c.k2!r}\n   p1: 0.0\n   p2: 0.0\n"
            f"projection_parameters:\n   gamma1: {c.fx!r}\n   gamma2: {c.fy!r}\n   u0: {c.cx!r}\n   v0: {c.cy!r}\n"
        )

    seq = SEQUENCE
    pose_dir = root / "data_poses" / seq
    (pose_dir / "oxts").mkdir(parents=True, exist_ok=True)
    frame_us = {f: f * 100_000 for f in range(N_FRAMES)}
    pose_lines = [f"{f} {_fmt(ego_pose(f).matrix()[:3].ravel())}" for f in range(N_FRAMES) if f != 2]
    (pose_dir / "poses.txt").write_text("\n".join(pose_lines) + "\n")
    (pose_dir / "oxts" / "timestamps.txt").write_text("".join(_ts(frame_us[f]) + "\n" for f in range(N_FRAMES)))

    png = _tiny_png()
    for sensor in CAMERA_SENSORS:
        d = root / "data_2d_raw" / seq / sensor
        (d / "data_rgb").mkdir(parents=True, exist_ok=True)
        stamps = []
        for f in range(N_FRAMES):
            offset = 50_000 if (sensor == "image_03" and f == 5) else 2_000
            stamps.append(_ts(frame_us[f] + offset))
            if sensor == "image_02" and f == 3:
                continue
            (d / "data_rgb" / f"{f:010d}.png").write_bytes(png)
        (d / "timestamps.txt").write_text("\n".join(stamps) + "\n")

    tracks = _dynamic_tracks()
    xml = ["<?xml version=\"1.0\"?>\n<opencv_storage>\n"]
    n = 0
    for key, label, center, size, yaw, _ in STATIC_OBJECTS:
        xml.append(_box_xml(f"object{n}", key, label, center, size, yaw, -1, False))
        n += 1
    for key, label, size, track in tracks:
        for f, (center, yaw) in sorted(track.items()):
            xml.append(_box_xml(f"object{n}", key, label, center, size, yaw, f, True))
            n += 1
    xml.append("</opencv_storage>\n")
    bdir = root / "data_3d_bboxes" / "train"
    bdir.mkdir(parents=True, exist_ok=True)
    (bdir / f"{seq}.xml").write_text("".join(xml))

    vdir = root / "data_3d_raw" / seq / "velodyne_points"
    (vdir / "data").mkdir(parents=True, exist_ok=True)
    (vdir / "timestamps.txt").write_text("".join(_ts(frame_us[f] + 1_000) + "\n" for f in range(N_FRAMES)))
    for f in range(N_FRAMES):
        if f == 7:
            continue
        world_to_velo = (ego_pose(f) @ velo_to_ego).inverse()
        ego_xy = np.array([SPACING_M * f, 0.0])
        chunks = [np.column_stack([rng.uniform(-30, 30, 200) + ego_xy[0], rng.uniform(-15, 15, 200), np.zeros(200)])]
        for _, _, center, size, yaw, npts in STATIC_OBJECTS:
            if npts and np.hypot(center[0] - ego_xy[0], center[1]) < 100.0:
                chunks.append(_points_in_box(rng, center, size, yaw, npts))
        for _, _, size, track in tracks:
            if f in track:
                center, yaw = track[f]
                chunks.append(_points_in_box(rng, center, size, yaw, 10))
        pts = world_to_velo.apply(np.concatenate(chunks))
        # ground points sit at z=0 world: keep them out of boxes by a small drop
        pts[:200, 2] -= 0.05
        arr = np.column_stack([pts, np.ones(len(pts))]).astype("<f4")
        arr.tofile(vdir / "data" / f"{f:010d}.bin")
    return root
