"""Toolkit configuration: one YAML file, SI units, unknown keys rejected.

Example::

    frames:
      ego_forward: x            # x | -x | y | -y
    cameras:
      image_02:
        model: mei              # mei | pinhole
        xi: 2.2134
        k1: 0.0168
        k2: 1.6549
        fx: 1336.32
        fy: 1335.79
        cx: 716.94
        cy: 705.76
        width: 1400
        height: 1400
        cam_to_ego:
          rotation: [w, x, y, z]      # or matrix: 3x4 / 4x4 rows
          translation: [0.8, 1.0, 1.55]
    grid:
      mode: polar
      rho_max: 51.2
      n_theta: 64
      n_rho: 32
      z_min: -5.0
      z_max: 3.0
    depth: {count: 64, near: 1.0, far: 61.0}     # or values: [...]
    lift: {stride: 16, channels: 8}
    converter: {window_m: 200, d_max: 80, min_pts: 1, sync_tol: 0.010}
    rectify: {fisheyes: [image_02, image_03], front_camera: image_00}
    coverage: {azimuth_bins: 360}
    evaluation: {max_range: 50.0}
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .camera import MeiCamera, default_depths
from .converter.classes import EVAL_CLASSES
from .converter.pipeline import DEFAULT_SENSORS, ConverterSettings
from .evaluation.evaluate import EvalSettings
from .evaluation.metrics import DIST_THRESHOLDS, TP_THRESHOLD
from .evaluation.strata import ANGULAR_SECTORS, DISTANCE_BINS, FORWARD_AXES, StrataError, angular_strata, distance_strata
from .geometry import Pose, Quaternion
from .polar import BevGrid
from .rectification import BACKWARD_YAW_DEG, FORWARD_YAW_DEG, PITCH_DEG, VIRTUAL_SIZE


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


_SECTIONS = ("frames", "cameras", "grid", "depth", "lift", "converter", "rectify", "coverage", "evaluation")


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping")
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(map(str, extra))}")


def _num(d, key, where, default=None, positive=False, integer=False):
    if key not in d:
        if default is None:
            raise ConfigError(f"{where}.{key}: required")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {v!r}")
    if integer and (not float(v).is_integer()):
        raise ConfigError(f"{where}.{key}: expected an integer")
    if not math.isfinite(v):
        raise ConfigError(f"{where}.{key}: must be finite")
    if positive and v <= 0:
        raise ConfigError(f"{where}.{key}: must be positive")
    return int(v) if integer else float(v)


def _vector(d, key, n, where):
    v = d.get(key)
    if not isinstance(v, (list, tuple)) or len(v) != n:
        raise ConfigError(f"{where}.{key}: expected a list of {n} numbers")
    try:
        return tuple(float(x) for x in v)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{key}: expected numbers") from None


def _pose(d, where) -> Pose:
    _check_keys(d, ("rotation", "translation", "matrix"), where)
    if "matrix" in d:
        if "rotation" in d or "translation" in d:
            raise ConfigError(f"{where}: give either matrix or rotation/translation")
        m = np.asarray(d["matrix"], dtype=float)
        if m.shape not in ((3, 4), (4, 4)):
            raise ConfigError(f"{where}.matrix: expected 3x4 or 4x4")
        R = m[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or np.linalg.det(R) < 0:
            raise ConfigError(f"{where}.matrix: rotation block is not a proper rotation")
        return Pose.from_matrix(m)
    q = _vector(d, "rotation", 4, where)
    if abs(np.linalg.norm(q) - 1.0) > 1e-6:
        raise ConfigError(f"{where}.rotation: quaternion must be unit norm")
    return Pose(Quaternion(*q), _vector(d, "translation", 3, where))


@dataclass(frozen=True)
class CameraEntry:
    name: str
    camera: MeiCamera
    cam_to_ego: Pose


def _camera(name, d) -> CameraEntry:
    where = f"cameras.{name}"
    _check_keys(d, ("model", "xi", "k1", "k2", "fx", "fy", "cx", "cy", "width", "height",
                    "crop_offset", "cam_to_ego"), where)
    model = d.get("model", "mei")
    if model not in ("mei", "pinhole"):
        raise ConfigError(f"{where}.model: expected mei or pinhole")
    if model == "pinhole" and any(k in d for k in ("xi", "k1", "k2")):
        raise ConfigError(f"{where}: pinhole cameras take no xi/k1/k2")
    xi = _num(d, "xi", where) if model == "mei" else 0.0
    k1 = _num(d, "k1", where, 0.0) if model == "mei" else 0.0
    k2 = _num(d, "k2", where, 0.0) if model == "mei" else 0.0
    if xi < 0:
        raise ConfigError(f"{where}.xi: must be >= 0")
    crop = _vector(d, "crop_offset", 2, where) if "crop_offset" in d else (0.0, 0.0)
    cam = MeiCamera(
        xi, k1, k2,
        _num(d, "fx", where, positive=True), _num(d, "fy", where, positive=True),
        _num(d, "cx", where), _num(d, "cy", where),
        _num(d, "width", where, positive=True, integer=True), _num(d, "height", where, positive=True, integer=True),
        crop,
    )
    if "cam_to_ego" not in d:
        raise ConfigError(f"{where}.cam_to_ego: required")
    return CameraEntry(name, cam, _pose(d["cam_to_ego"], f"{where}.cam_to_ego"))


def _grid(d) -> BevGrid:
    where = "grid"
    mode = d.get("mode") if isinstance(d, dict) else None
    if mode == "polar":
        _check_keys(d, ("mode", "rho_max", "n_theta", "n_rho", "z_min", "z_max"), where)
        args = (_num(d, "rho_max", where, positive=True), _num(d, "n_theta", where, positive=True, integer=True),
                _num(d, "n_rho", where, positive=True, integer=True), _num(d, "z_min", where), _num(d, "z_max", where))
        build = BevGrid.polar
    elif mode == "cartesian":
        _check_keys(d, ("mode", "x_range", "y_range", "nx", "ny", "z_min", "z_max"), where)
        args = (_vector(d, "x_range", 2, where), _vector(d, "y_range", 2, where),
                _num(d, "nx", where, positive=True, integer=True), _num(d, "ny", where, positive=True, integer=True),
                _num(d, "z_min", where), _num(d, "z_max", where))
        build = BevGrid.cartesian
    else:
        raise ConfigError("grid.mode: expected polar or cartesian")
    try:
        return build(*args)
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from None


def _depths(d) -> np.ndarray:
    where = "depth"
    _check_keys(d, ("count", "near", "far", "values"), where)
    if "values" in d:
        if any(k in d for k in ("count", "near", "far")):
            raise ConfigError("depth: give either values or count/near/far")
        try:
            vals = np.asarray(d["values"], dtype=float)
        except (TypeError, ValueError):
            raise ConfigError("depth.values: expected numbers") from None
    else:
        count = _num(d, "count", where, 64, positive=True, integer=True)
        vals = default_depths(count, _num(d, "near", where, 1.0, positive=True), _num(d, "far", where, 61.0, positive=True))
    if vals.ndim != 1 or vals.size == 0 or np.any(vals <= 0) or np.any(np.diff(vals) <= 0):
        raise ConfigError("depth: values must be positive and strictly increasing")
    return vals


@dataclass(frozen=True)
class RectifySettings:
    fisheyes: tuple = ()
    front_camera: str | None = None
    front_focal: float | None = None
    size: tuple = VIRTUAL_SIZE
    forward_yaw_deg: float = FORWARD_YAW_DEG
    backward_yaw_deg: float = BACKWARD_YAW_DEG
    pitch_deg: float = PITCH_DEG


@dataclass(frozen=True)
class ToolkitConfig:
    ego_forward: str = "x"
    cameras: dict = field(default_factory=dict)  # name -> CameraEntry, in file order
    grid: BevGrid | None = None
    depths: np.ndarray = field(default_factory=default_depths)
    stride: int = 16
    channels: int = 8
    converter: ConverterSettings = field(default_factory=ConverterSettings)
    rectify: RectifySettings = field(default_factory=RectifySettings)
    azimuth_bins: int = 360
    evaluation: EvalSettings = field(default_factory=EvalSettings)

    def require_grid(self) -> BevGrid:
        if self.grid is None:
            raise ConfigError("grid: required for this command")
        return self.grid

    def front_focal(self) -> float:
        r = self.rectify
        if r.front_focal is not None:
            return r.front_focal
        if r.front_camera is None:
            raise ConfigError("rectify: set front_camera or front_focal")
        return self.cameras[r.front_camera].camera.fx


def _converter(d) -> ConverterSettings:
    where = "converter"
    _check_keys(d, ("window_m", "d_max", "min_pts", "sync_tol", "sensors", "splits"), where)
    sensors = tuple(d.get("sensors", DEFAULT_SENSORS))
    unknown = [s for s in sensors if s not in DEFAULT_SENSORS]
    if unknown:
        raise ConfigError(f"converter.sensors: unknown sensor(s) {', '.join(map(str, unknown))}")
    splits = d.get("splits", {})
    if not isinstance(splits, dict) or not all(isinstance(v, list) for v in splits.values()):
        raise ConfigError("converter.splits: expected split -> list of sequence names")
    seen = {}
    for split, seqs in splits.items():
        for s in seqs:
            if s in seen:
                raise ConfigError(f"converter.splits: sequence {s!r} in both {seen[s]!r} and {split!r}")
            seen[s] = split
    min_pts = _num(d, "min_pts", where, 1, integer=True)
    if min_pts < 0:
        raise ConfigError("converter.min_pts: must be >= 0")
    sync = _num(d, "sync_tol", where, 0.010)
    if sync < 0:
        raise ConfigError("converter.sync_tol: must be >= 0")
    return ConverterSettings(
        window_m=_num(d, "window_m", where, 200.0, positive=True),
        d_max=_num(d, "d_max", where, 80.0, positive=True),
        min_pts=min_pts,
        sync_tol=sync,
        sensors=sensors,
        splits={k: list(v) for k, v in splits.items()},
    )


def _evaluation(d, forward) -> EvalSettings:
    where = "evaluation"
    _check_keys(d, ("classes", "thresholds", "tp_threshold", "max_range", "split", "distance_bins", "sectors"), where)
    classes = tuple(d.get("classes", EVAL_CLASSES))
    bad = [c for c in classes if c not in EVAL_CLASSES]
    if bad:
        raise ConfigError(f"evaluation.classes: unknown class(es) {', '.join(map(str, bad))}")
    thresholds = tuple(float(t) for t in d.get("thresholds", DIST_THRESHOLDS))
    if not thresholds or any(t <= 0 for t in thresholds):
        raise ConfigError("evaluation.thresholds: must be positive")
    try:
        bins = d.get("distance_bins")
        if bins is None:
            dist = distance_strata(DISTANCE_BINS)
        else:
            dist = distance_strata(tuple((str(b[0]), float(b[1]), float(b[2])) for b in bins))
        sectors = d.get("sectors")
        if sectors is None:
            ang = angular_strata(ANGULAR_SECTORS)
        else:
            if not isinstance(sectors, dict):
                raise ConfigError("evaluation.sectors: expected name -> list of [lo, hi] degrees")
            ang = angular_strata(tuple((str(k), tuple(tuple(iv) for iv in v)) for k, v in sectors.items()))
    except StrataError as exc:
        raise ConfigError(f"evaluation: {exc}") from None
    except (TypeError, ValueError, IndexError):
        raise ConfigError("evaluation: malformed strata definition") from None
    return EvalSettings(
        classes=classes,
        thresholds=thresholds,
        tp_threshold=_num(d, "tp_threshold", where, TP_THRESHOLD, positive=True),
        max_range=_num(d, "max_range", where, 50.0, positive=True),
        ego_forward=forward,
        split=d.get("split"),
        distance=dist,
        angular=ang,
    )


def parse_config(doc) -> ToolkitConfig:
    if doc is None:
        doc = {}
    _check_keys(doc, _SECTIONS, "config")
    frames = doc.get("frames", {})
    _check_keys(frames, ("ego_forward",), "frames")
    forward = frames.get("ego_forward", "x")
    if forward not in FORWARD_AXES:
        raise ConfigError("frames.ego_forward: expected one of x, -x, y, -y")

    cams_doc = doc.get("cameras", {})
    if not isinstance(cams_doc, dict):
        raise ConfigError("cameras: expected a mapping")
    cameras = {}
    for name, entry in cams_doc.items():
        try:
            cameras[str(name)] = _camera(str(name), entry)
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"cameras.{name}: {exc}") from None

    grid = _grid(doc["grid"]) if "grid" in doc else None
    depths = _depths(doc.get("depth", {}))
    lift = doc.get("lift", {})
    _check_keys(lift, ("stride", "channels"), "lift")
    stride = _num(lift, "stride", "lift", 16, positive=True, integer=True)
    channels = _num(lift, "channels", "lift", 8, positive=True, integer=True)

    rect = doc.get("rectify", {})
    _check_keys(rect, ("fisheyes", "front_camera", "front_focal", "size", "forward_yaw_deg",
                       "backward_yaw_deg", "pitch_deg"), "rectify")
    fisheyes = tuple(rect.get("fisheyes", ()))
    for f in fisheyes:
        if f not in cameras:
            raise ConfigError(f"rectify.fisheyes: camera {f!r} is not defined")
    front = rect.get("front_camera")
    if front is not None and front not in cameras:
        raise ConfigError(f"rectify.front_camera: camera {front!r} is not defined")
    size = _vector(rect, "size", 2, "rectify") if "size" in rect else VIRTUAL_SIZE
    if min(size) < 1 or not all(float(s).is_integer() for s in size):
        raise ConfigError("rectify.size: expected two positive integers")
    rectify = RectifySettings(
        fisheyes=fisheyes,
        front_camera=front,
        front_focal=_num(rect, "front_focal", "rectify", positive=True) if "front_focal" in rect else None,
        size=(int(size[0]), int(size[1])),
        forward_yaw_deg=_num(rect, "forward_yaw_deg", "rectify", FORWARD_YAW_DEG),
        backward_yaw_deg=_num(rect, "backward_yaw_deg", "rectify", BACKWARD_YAW_DEG),
        pitch_deg=_num(rect, "pitch_deg", "rectify", PITCH_DEG),
    )

    cov = doc.get("coverage", {})
    _check_keys(cov, ("azimuth_bins",), "coverage")
    bins = _num(cov, "azimuth_bins", "coverage", 360, positive=True, integer=True)
    if bins < 4:
        raise ConfigError("coverage.azimuth_bins: must be >= 4")

    return ToolkitConfig(
        ego_forward=forward,
        cameras=cameras,
        grid=grid,
        depths=depths,
        stride=stride,
        channels=channels,
        converter=_converter(doc.get("converter", {})),
        rectify=rectify,
        azimuth_bins=bins,
        evaluation=_evaluation(doc.get("evaluation", {}), forward),
    )


def load_config(path) -> ToolkitConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    return parse_config(doc)
