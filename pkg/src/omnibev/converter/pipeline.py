"""Source sequence -> tokenised record set."""
from __future__ import annotations

import datetime as _dt
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..geometry import Pose
from . import kitti360
from .classes import EVAL_CLASSES, NUSCENES_DETECTION_CLASSES, all_categories, map_classes
from .records import VISIBILITY_LEVELS, Box3D, RecordSet, make_token, visibility_token

DEFAULT_SENSORS = ("image_00", "image_01", "image_02", "image_03", "velodyne")


@dataclass(frozen=True)
class ConverterSettings:
    window_m: float = 200.0
    d_max: float = 80.0
    min_pts: int = 1
    sync_tol: float = 0.010  # seconds
    sensors: tuple = DEFAULT_SENSORS
    splits: dict = field(default_factory=dict)  # split name -> sequence names


def partition_scenes(frames, positions, window_m: float = 200.0) -> list[list[int]]:
    """Split a trajectory into scene spans by cumulative arc length.

    A final window shorter than ``window_m / 2`` merges into the previous
    span. Returns lists of frame ids; spans are contiguous and disjoint.
    """
    frames = list(frames)
    if not frames:
        return []
    if window_m <= 0:
        raise ValueError("window_m must be positive")
    pos = np.asarray(positions, dtype=float).reshape(len(frames), 3)
    seg = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    total = float(arc[-1])
    if total == 0.0:
        return [frames]
    window_idx = np.floor(arc / window_m).astype(np.int64)
    spans: list[list[int]] = []
    starts: list[int] = []
    for f, k in zip(frames, window_idx):
        if not starts or k != starts[-1]:
            spans.append([])
            starts.append(int(k))
        spans[-1].append(f)
    tail = total - starts[-1] * window_m
    if len(spans) > 1 and tail < window_m / 2.0:
        spans[-2].extend(spans.pop())
    return spans


def identify_keyframes(seq: kitti360.SourceSequence, sensors=DEFAULT_SENSORS, sync_tol: float = 0.010) -> list[int]:
    """Frames with a registered pose and every sensor present within ``sync_tol`` seconds."""
    tol_us = sync_tol * 1e6
    out = []
    for frame in seq.frames:
        t_ref = seq.pose_times.get(frame)
        if t_ref is None:
            continue
        ok = True
        for sensor in sensors:
            t = seq.sensor_times.get(sensor, {}).get(frame)
            if t is None or frame not in seq.sensor_files.get(sensor, {}) or abs(t - t_ref) > tol_us:
                ok = False
                break
        if ok:
            out.append(frame)
    return out


@dataclass(frozen=True)
class AttachedBox:
    index: int  # position in the input list
    box: Box3D  # ego frame
    num_lidar_pts: int


def assign_static_objects(boxes, ego_pose: Pose, lidar_points_ego, d_max: float = 80.0, min_pts: int = 1):
    """Attach globally labelled boxes to one sample.

    A box is kept when its centre lies within ``d_max`` of the ego origin
    and at least ``min_pts`` LiDAR points fall inside it. ``ego_pose`` maps
    ego to world; kept boxes are returned in the ego frame.
    """
    world_to_ego = ego_pose.inverse()
    pts = np.zeros((0, 3)) if lidar_points_ego is None else np.asarray(lidar_points_ego, dtype=float).reshape(-1, 3)
    origin = np.asarray(ego_pose.translation)
    out = []
    for i, box in enumerate(boxes):
        if np.linalg.norm(np.asarray(box.center) - origin) > d_max:
            continue
        ego_box = box.transformed(world_to_ego, "ego")
        n = int(ego_box.contains(pts).sum()) if len(pts) else 0
        if n >= min_pts:
            out.append(AttachedBox(i, ego_box, n))
    return out


@dataclass
class AnnotationSpec:
    instance_key: str
    category: str
    box: Box3D  # global frame
    num_lidar_pts: int


@dataclass
class SampleSpec:
    frame: int
    timestamp: int
    ego_pose: Pose
    sensor_data: dict  # sensor -> (relative path, timestamp)
    annotations: list = field(default_factory=list)


@dataclass
class SceneSpec:
    sequence: str
    split: str
    index: int
    samples: list


def _rot(q):
    return [q.w, q.x, q.y, q.z]


def _vec(v):
    return [float(c) for c in v]


def emit_recordset(scenes, calibration: kitti360.Calibration | None, sensors=DEFAULT_SENSORS) -> RecordSet:
    """Build the tokenised tables. Tokens are content hashes, so identical
    input yields identical output."""
    rs = RecordSet()
    T = rs.tables

    for i, cat in enumerate(all_categories()):
        T["category"].append({
            "token": make_token("category", cat),
            "name": cat,
            "description": "detection class" if cat in EVAL_CLASSES else "extension category",
            "extension": cat not in NUSCENES_DETECTION_CLASSES,
            "index": i,
        })
    for tok, level, desc in VISIBILITY_LEVELS:
        T["visibility"].append({"token": tok, "level": level, "description": desc})

    calib_tokens = {}
    for sensor in sensors:
        channel = kitti360.CHANNELS.get(sensor, sensor.upper())
        sensor_tok = make_token("sensor", channel)
        modality = "lidar" if sensor == kitti360.LIDAR_SENSOR else "camera"
        T["sensor"].append({"token": sensor_tok, "channel": channel, "modality": modality})
        if calibration is None:
            continue
        if modality == "lidar":
            pose, intr, model = calibration.velo_to_ego, [], None
        else:
            pose = calibration.cam_to_ego[sensor]
            cam = calibration.cameras.get(sensor)
            intr = cam.intrinsic_matrix.tolist() if cam else []
            model = None if cam is None else {
                "type": "pinhole" if cam.is_pinhole else "mei",
                "xi": cam.xi, "k1": cam.k1, "k2": cam.k2,
                "width": cam.width, "height": cam.height,
            }
        row = {
            "sensor_token": sensor_tok,
            "translation": _vec(pose.translation),
            "rotation": _rot(pose.rotation),
            "camera_intrinsic": intr,
        }
        if model is not None:
            row["camera_model"] = model
        row["token"] = make_token("calibrated_sensor", channel, repr(sorted(row.items())))
        T["calibrated_sensor"].append(row)
        calib_tokens[sensor] = row["token"]

    logs = {}
    for scene in scenes:
        if not scene.samples:
            continue
        seq = scene.sequence
        log_tok = make_token("log", seq)
        if seq not in logs:
            date = _dt.datetime.fromtimestamp(scene.samples[0].timestamp / 1e6, _dt.timezone.utc).date().isoformat()
            logs[seq] = {"token": log_tok, "logfile": seq, "vehicle": "kitti360", "date_captured": date,
                         "location": "karlsruhe"}
            T["log"].append(logs[seq])
        samples = sorted(scene.samples, key=lambda s: s.timestamp)
        scene_tok = make_token("scene", seq, samples[0].frame)
        sample_toks = [make_token("sample", seq, s.frame) for s in samples]
        T["scene"].append({
            "token": scene_tok,
            "log_token": log_tok,
            "nbr_samples": len(samples),
            "first_sample_token": sample_toks[0],
            "last_sample_token": sample_toks[-1],
            "name": f"{seq}-{scene.index:03d}",
            "description": f"frames {samples[0].frame}-{samples[-1].frame}",
            "split": scene.split,
        })
        sd_prev: dict = {}
        instances: dict = {}
        for k, s in enumerate(samples):
            T["sample"].append({
                "token": sample_toks[k],
                "timestamp": s.timestamp,
                "scene_token": scene_tok,
                "prev": sample_toks[k - 1] if k > 0 else "",
                "next": sample_toks[k + 1] if k + 1 < len(samples) else "",
            })
            ego_tok = make_token("ego_pose", seq, s.frame)
            T["ego_pose"].append({
                "token": ego_tok,
                "timestamp": s.timestamp,
                "translation": _vec(s.ego_pose.translation),
                "rotation": _rot(s.ego_pose.rotation),
            })
            for sensor in sensors:
                if sensor not in s.sensor_data:
                    continue
                rel, ts = s.sensor_data[sensor]
                tok = make_token("sample_data", seq, s.frame, sensor)
                cam = calibration.cameras.get(sensor) if calibration else None
                row = {
                    "token": tok,
                    "sample_token": sample_toks[k],
                    "ego_pose_token": ego_tok,
                    "calibrated_sensor_token": calib_tokens.get(sensor, ""),
                    "timestamp": ts,
                    "fileformat": Path(rel).suffix.lstrip("."),
                    "is_key_frame": True,
                    "height": cam.height if cam else 0,
                    "width": cam.width if cam else 0,
                    "filename": rel,
                    "prev": sd_prev.get(sensor, ""),
                    "next": "",
                }
                if sensor in sd_prev:
                    prev_row = T["sample_data"][sd_prev[sensor + "#row"]]
                    prev_row["next"] = tok
                sd_prev[sensor] = tok
                sd_prev[sensor + "#row"] = len(T["sample_data"])
                T["sample_data"].append(row)
            for ann in s.annotations:
                instances.setdefault(ann.instance_key, (ann.category, []))[1].append((sample_toks[k], ann))

        for key in sorted(instances):
            category, chain = instances[key]
            inst_tok = make_token("instance", scene_tok, key)
            ann_toks = [make_token("sample_annotation", stok, key) for stok, _ in chain]
            for j, (stok, ann) in enumerate(chain):
                b = ann.box
                T["sample_annotation"].append({
                    "token": ann_toks[j],
                    "sample_token": stok,
                    "instance_token": inst_tok,
                    "visibility_token": visibility_token(b.visibility),
                    "attribute_tokens": [],
                    "translation": _vec(b.center),
                    "size": _vec(b.size),
                    "rotation": _rot(b.orientation),
                    "prev": ann_toks[j - 1] if j > 0 else "",
                    "next": ann_toks[j + 1] if j + 1 < len(chain) else "",
                    "num_lidar_pts": int(ann.num_lidar_pts),
                    "num_radar_pts": 0,
                })
            T["instance"].append({
                "token": inst_tok,
                "category_token": make_token("category", category),
                "nbr_annotations": len(chain),
                "first_annotation_token": ann_toks[0],
                "last_annotation_token": ann_toks[-1],
            })
    rs.validate()
    return rs


def build_scenes(root, seq: kitti360.SourceSequence, calibration: kitti360.Calibration,
                 settings: ConverterSettings) -> list[SceneSpec]:
    """Keyframes, scene spans and per-sample annotations for one sequence."""
    root = Path(root)
    keyframes = set(identify_keyframes(seq, settings.sensors, settings.sync_tol))
    frames = seq.frames
    positions = [seq.poses[f].translation for f in frames]
    spans = partition_scenes(frames, positions, settings.window_m)

    static = [(o, map_classes(o.label)[0]) for o in seq.objects if not o.dynamic]
    dynamic: dict = {}
    for o in seq.objects:
        if o.dynamic:
            dynamic.setdefault(o.frame, []).append((o, map_classes(o.label)[0]))

    scenes = []
    for idx, span in enumerate(spans):
        samples = []
        for frame in span:
            if frame not in keyframes:
                continue
            ego = seq.poses[frame]
            lidar_rel = seq.lidar_path(frame)
            pts = None
            if lidar_rel is not None:
                pts = calibration.velo_to_ego.apply(kitti360.read_lidar(root / lidar_rel))
            anns = []
            attached = assign_static_objects([o.box for o, _ in static], ego, pts, settings.d_max, settings.min_pts)
            for a in attached:
                obj, cat = static[a.index]
                anns.append(AnnotationSpec(obj.key, cat, obj.box, a.num_lidar_pts))
            for obj, cat in dynamic.get(frame, []):
                n = 0
                if pts is not None and len(pts):
                    n = int(obj.box.transformed(ego.inverse(), "ego").contains(pts).sum())
                anns.append(AnnotationSpec(obj.key, cat, obj.box, n))
            sensor_data = {s: (seq.sensor_files[s][frame], seq.sensor_times[s][frame]) for s in settings.sensors}
            samples.append(SampleSpec(frame, seq.pose_times[frame], ego, sensor_data, anns))
        if samples:
            scenes.append(SceneSpec(seq.name, seq.split, idx, samples))
    return scenes


def convert_tree(src_root, settings: ConverterSettings = ConverterSettings()) -> RecordSet:
    src_root = Path(src_root)
    names = kitti360.list_sequences(src_root)
    split_of = {}
    for split, seqs in settings.splits.items():
        for s in seqs:
            split_of[s] = split
    if settings.splits:
        names = [n for n in names if n in split_of]
    if not names:
        return emit_recordset([], None, settings.sensors)
    calibration = kitti360.read_calibration(src_root, settings.sensors)
    scenes = []
    for name in names:
        seq = kitti360.read_sequence(src_root, name, settings.sensors)
        if name in split_of:
            seq.split = split_of[name]
        scenes.extend(build_scenes(src_root, seq, calibration, settings))
    return emit_recordset(scenes, calibration, settings.sensors)


def summary(rs: RecordSet) -> str:
    c = rs.counts()
    return f"{c['scene']} scenes, {c['sample']} samples, {c['sample_annotation']} annotations"


def yaw_of(rotation) -> float:
    w, x, y, z = rotation
    return math.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
