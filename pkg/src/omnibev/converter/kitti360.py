"""Readers for a KITTI-360 style source tree.

Expected layout under ``root``::

    calibration/calib_cam_to_pose.txt       image_0X: 12 floats (3x4, camera -> ego)
    calibration/calib_cam_to_velo.txt       12 floats (3x4, image_00 -> velodyne)
    calibration/perspective.txt             P_rect_0X / R_rect_0X / S_rect_0X (pinholes)
    calibration/image_02.yaml, image_03.yaml   MEI parameters (OpenCV YAML)
    data_poses/<seq>/poses.txt              frame + 12 floats (3x4, ego -> world)
    data_poses/<seq>/oxts/timestamps.txt    one timestamp per frame index
    data_2d_raw/<seq>/image_0X/timestamps.txt
    data_2d_raw/<seq>/image_0X/data_rgb/<frame:010d>.png
    data_3d_raw/<seq>/velodyne_points/timestamps.txt
    data_3d_raw/<seq>/velodyne_points/data/<frame:010d>.bin   float32 x y z intensity
    data_3d_bboxes/train/<seq>.xml          (or .../val/<seq>.xml)

Timestamps are ``YYYY-MM-DD HH:MM:SS.fffffffff`` and are converted to
integer microseconds.
"""
from __future__ import annotations

import datetime as _dt
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..camera import MeiCamera
from ..geometry import Pose, Quaternion
from .records import Box3D

CAMERA_SENSORS = ("image_00", "image_01", "image_02", "image_03")
LIDAR_SENSOR = "velodyne"
FISHEYE_SENSORS = ("image_02", "image_03")

CHANNELS = {
    "image_00": "CAM_FRONT_LEFT",
    "image_01": "CAM_FRONT_RIGHT",
    "image_02": "CAM_LEFT_FISHEYE",
    "image_03": "CAM_RIGHT_FISHEYE",
    "velodyne": "LIDAR_TOP",
}


class SourceError(Exception):
    """Unreadable or malformed source file; ``path`` names it."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = Path(path)


@dataclass(frozen=True)
class SourceObject:
    key: str  # stable object identity within the sequence
    label: str
    box: Box3D  # world frame
    dynamic: bool
    frame: int  # -1 for static objects


@dataclass
class Calibration:
    cam_to_ego: dict  # sensor -> Pose
    cameras: dict  # sensor -> MeiCamera
    velo_to_ego: Pose


@dataclass
class SourceSequence:
    name: str
    poses: dict  # frame -> Pose (ego -> world)
    pose_times: dict  # frame -> microseconds
    sensor_times: dict  # sensor -> {frame: microseconds}
    sensor_files: dict  # sensor -> {frame: path relative to root}
    objects: list = field(default_factory=list)
    split: str = "train"

    @property
    def frames(self) -> list[int]:
        return sorted(self.poses)

    def lidar_path(self, frame: int):
        return self.sensor_files.get(LIDAR_SENSOR, {}).get(frame)


def parse_timestamp(text: str) -> int:
    """``2013-05-28 08:46:02.904730624`` -> microseconds since the epoch (UTC)."""
    text = text.strip()
    date_part, _, frac = text.partition(".")
    base = _dt.datetime.strptime(date_part, "%Y-%m-%d %H:%M:%S").replace(tzinfo=_dt.timezone.utc)
    frac = (frac + "000000")[:6]
    return int(base.timestamp()) * 1_000_000 + int(frac)


def _floats(path, tokens, count):
    try:
        vals = [float(t) for t in tokens]
    except ValueError as exc:
        raise SourceError(path, f"non-numeric value ({exc})") from None
    if len(vals) != count:
        raise SourceError(path, f"expected {count} values, got {len(vals)}")
    return vals


def _pose_from_3x4(vals) -> Pose:
    m = np.asarray(vals, dtype=float).reshape(3, 4)
    return Pose.from_matrix(m)


def read_poses(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise SourceError(path, "pose file missing")
    poses = {}
    for ln, line in enumerate(path.read_text().splitlines(), 1):
        toks = line.split()
        if not toks:
            continue
        try:
            frame = int(toks[0])
        except ValueError:
            raise SourceError(path, f"line {ln}: bad frame index {toks[0]!r}") from None
        poses[frame] = _pose_from_3x4(_floats(path, toks[1:], 12))
    return poses


def read_timestamps(path) -> dict:
    path = Path(path)
    if not path.exists():
        return {}
    out = {}
    for i, line in enumerate(path.read_text().splitlines()):
        if line.strip():
            try:
                out[i] = parse_timestamp(line)
            except ValueError:
                raise SourceError(path, f"line {i + 1}: bad timestamp {line!r}") from None
    return out


def _read_keyed_matrices(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise SourceError(path, "calibration file missing")
    out = {}
    for line in path.read_text().splitlines():
        if ":" not in line:
            continue
        key, _, rest = line.partition(":")
        out[key.strip()] = rest.split()
    return out


def read_mei_yaml(path) -> MeiCamera:
    """OpenCV-style MEI calibration YAML (``%YAML:1.0`` header tolerated)."""
    path = Path(path)
    if not path.exists():
        raise SourceError(path, "calibration file missing")
    text = "\n".join(ln for ln in path.read_text().splitlines() if not ln.startswith("%YAML"))
    try:
        d = yaml.safe_load(text)
        mirror, dist, proj = d["mirror_parameters"], d["distortion_parameters"], d["projection_parameters"]
        return MeiCamera(
            float(mirror["xi"]), float(dist["k1"]), float(dist["k2"]),
            float(proj["gamma1"]), float(proj["gamma2"]), float(proj["u0"]), float(proj["v0"]),
            int(d["image_width"]), int(d["image_height"]),
        )
    except (KeyError, TypeError, ValueError, yaml.YAMLError) as exc:
        raise SourceError(path, f"malformed MEI calibration ({exc})") from None


def read_calibration(root, sensors=CAMERA_SENSORS) -> Calibration:
    """Extrinsics and intrinsics; every camera in ``sensors`` must be fully calibrated."""
    calib = Path(root) / "calibration"
    c2p_path = calib / "calib_cam_to_pose.txt"
    c2p = _read_keyed_matrices(c2p_path)
    cam_to_ego = {}
    for sensor in CAMERA_SENSORS:
        if sensor in c2p:
            cam_to_ego[sensor] = _pose_from_3x4(_floats(c2p_path, c2p[sensor], 12))
    if "image_00" not in cam_to_ego:
        raise SourceError(c2p_path, "no image_00 entry")

    c2v_path = calib / "calib_cam_to_velo.txt"
    if not c2v_path.exists():
        raise SourceError(c2v_path, "calibration file missing")
    cam0_to_velo = _pose_from_3x4(_floats(c2v_path, c2v_path.read_text().split(), 12))
    velo_to_ego = cam_to_ego["image_00"] @ cam0_to_velo.inverse()

    cameras = {}
    persp_path = calib / "perspective.txt"
    needs_persp = any(s in sensors for s in ("image_00", "image_01"))
    if needs_persp and not persp_path.exists():
        raise SourceError(persp_path, "calibration file missing")
    if persp_path.exists():
        persp = _read_keyed_matrices(persp_path)
        for sensor in ("image_00", "image_01"):
            idx = sensor[-2:]
            if f"P_rect_{idx}" not in persp:
                continue
            P = np.asarray(_floats(persp_path, persp[f"P_rect_{idx}"], 12)).reshape(3, 4)
            w, h = (int(float(t)) for t in persp.get(f"S_rect_{idx}", ["1408", "376"]))
            cameras[sensor] = MeiCamera.pinhole(P[0, 0], P[1, 1], P[0, 2], P[1, 2], w, h)
            if f"R_rect_{idx}" in persp and sensor in cam_to_ego:
                r_rect = np.asarray(_floats(persp_path, persp[f"R_rect_{idx}"], 9)).reshape(3, 3)
                # rectified frame = R_rect @ raw frame
                cam_to_ego[sensor] = cam_to_ego[sensor] @ Pose(Quaternion.from_matrix(r_rect.T))
    for sensor in FISHEYE_SENSORS:
        y = calib / f"{sensor}.yaml"
        if y.exists():
            cameras[sensor] = read_mei_yaml(y)
        elif sensor in sensors:
            raise SourceError(y, "calibration file missing")
    for sensor in sensors:
        if sensor in CAMERA_SENSORS and sensor not in cameras:
            raise SourceError(persp_path, f"no intrinsics for {sensor}")
        if sensor in CAMERA_SENSORS and sensor not in cam_to_ego:
            raise SourceError(c2p_path, f"no {sensor} entry")
    return Calibration(cam_to_ego, cameras, velo_to_ego)


def _opencv_matrix(node, path):
    try:
        rows = int(node.find("rows").text)
        cols = int(node.find("cols").text)
        data = [float(t) for t in node.find("data").text.split()]
    except (AttributeError, ValueError):
        raise SourceError(path, f"malformed matrix <{node.tag}>") from None
    if len(data) != rows * cols:
        raise SourceError(path, f"matrix <{node.tag}> has wrong element count")
    return np.asarray(data).reshape(rows, cols)


def box_from_transform(transform, vertices, label) -> Box3D:
    """World box from a scaled 4x4 transform and local mesh vertices."""
    full = transform[:3, :3]
    scale = np.linalg.norm(full, axis=0)
    rot = full / scale
    if np.linalg.det(rot) < 0:
        raise ValueError("box transform is a reflection")
    if vertices is None:
        vertices = np.array([[sx, sy, sz] for sx in (-0.5, 0.5) for sy in (-0.5, 0.5) for sz in (-0.5, 0.5)])
    lo, hi = vertices.min(axis=0), vertices.max(axis=0)
    ext = (hi - lo) * scale
    center = full @ ((lo + hi) / 2.0) + transform[:3, 3]
    # local x = length, local y = width
    return Box3D(tuple(center), (ext[1], ext[0], ext[2]), Quaternion.from_matrix(rot), label)


def read_bboxes(path) -> list[SourceObject]:
    path = Path(path)
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        raise SourceError(path, f"malformed XML ({exc})") from None
    out = []
    for child in root:
        tnode = child.find("transform")
        if tnode is None:
            continue
        transform = _opencv_matrix(tnode, path)
        vnode = child.find("vertices")
        vertices = _opencv_matrix(vnode, path) if vnode is not None else None
        try:
            label = child.find("label").text.strip()
            ts = int(child.find("timestamp").text)
            dyn_node = child.find("dynamic")
            dynamic = bool(int(dyn_node.text)) if dyn_node is not None else ts >= 0
            sem = child.find("semanticId")
            inst = child.find("instanceId")
            if sem is not None and inst is not None:
                key = f"{int(sem.text)}_{int(inst.text)}"
            else:
                key = child.find("index").text.strip()
            box = box_from_transform(transform, vertices, label)
        except (AttributeError, ValueError) as exc:
            raise SourceError(path, f"malformed object <{child.tag}> ({exc})") from None
        out.append(SourceObject(key, label, box, dynamic, ts if dynamic else -1))
    return out


def read_lidar(path) -> np.ndarray:
    """Velodyne scan as ``(N, 3)`` float64 in the sensor frame."""
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % 4:
        raise SourceError(path, "point file size is not a multiple of 16 bytes")
    return raw.reshape(-1, 4)[:, :3].astype(np.float64)


def list_sequences(root) -> list[str]:
    d = Path(root) / "data_poses"
    if not d.exists():
        return []
    return sorted(p.name for p in d.iterdir() if p.is_dir())


def read_sequence(root, name: str, sensors) -> SourceSequence:
    root = Path(root)
    poses = read_poses(root / "data_poses" / name / "poses.txt")
    ts_path = root / "data_poses" / name / "oxts" / "timestamps.txt"
    if not ts_path.exists():
        raise SourceError(ts_path, "pose timestamp file missing")
    pose_times = read_timestamps(ts_path)
    sensor_times, sensor_files = {}, {}
    for sensor in sensors:
        if sensor == LIDAR_SENSOR:
            base = root / "data_3d_raw" / name / "velodyne_points"
            data_dir, ext = base / "data", ".bin"
        else:
            base = root / "data_2d_raw" / name / sensor
            data_dir, ext = base / "data_rgb", ".png"
        sensor_times[sensor] = read_timestamps(base / "timestamps.txt")
        files = {}
        if data_dir.exists():
            for p in sorted(data_dir.iterdir()):
                if p.suffix == ext and p.stem.isdigit():
                    files[int(p.stem)] = p.relative_to(root).as_posix()
        sensor_files[sensor] = files
    objects, split = [], "train"
    for candidate in ("train", "val"):
        xml = root / "data_3d_bboxes" / candidate / f"{name}.xml"
        if xml.exists():
            objects, split = read_bboxes(xml), candidate
            break
    return SourceSequence(name, poses, pose_times, sensor_times, sensor_files, objects, split)
