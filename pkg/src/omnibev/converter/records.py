"""Boxes and the tokenised multi-table record set."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from ..geometry import Pose, Quaternion

TABLES = (
    "attribute",
    "calibrated_sensor",
    "category",
    "ego_pose",
    "instance",
    "log",
    "sample",
    "sample_annotation",
    "sample_data",
    "scene",
    "sensor",
    "visibility",
)

# table -> {field: referenced table}; list-valued fields hold several tokens
REFERENCES = {
    "scene": {"log_token": "log", "first_sample_token": "sample", "last_sample_token": "sample"},
    "sample": {"scene_token": "scene", "prev": "sample", "next": "sample"},
    "sample_data": {
        "sample_token": "sample",
        "ego_pose_token": "ego_pose",
        "calibrated_sensor_token": "calibrated_sensor",
        "prev": "sample_data",
        "next": "sample_data",
    },
    "sample_annotation": {
        "sample_token": "sample",
        "instance_token": "instance",
        "visibility_token": "visibility",
        "attribute_tokens": "attribute",
        "prev": "sample_annotation",
        "next": "sample_annotation",
    },
    "instance": {
        "category_token": "category",
        "first_annotation_token": "sample_annotation",
        "last_annotation_token": "sample_annotation",
    },
    "calibrated_sensor": {"sensor_token": "sensor"},
}

VISIBILITY_LEVELS = (
    ("1", "v0-40", "visibility of whole object is between 0 and 40%"),
    ("2", "v40-60", "visibility of whole object is between 40 and 60%"),
    ("3", "v60-80", "visibility of whole object is between 60 and 80%"),
    ("4", "v80-100", "visibility of whole object is between 80 and 100%"),
)


class IntegrityError(Exception):
    """A token reference does not resolve."""


def make_token(*parts) -> str:
    """Deterministic 32-hex token from the given content parts."""
    text = "\x1f".join(str(p) for p in parts)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:32]


def visibility_token(fraction: float) -> str:
    if fraction < 0.4:
        return "1"
    if fraction < 0.6:
        return "2"
    if fraction < 0.8:
        return "3"
    return "4"


@dataclass(frozen=True)
class Box3D:
    """Centre-size-quaternion box; ``size`` is ``(w, l, h)`` with ``l`` along the box x axis."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    orientation: Quaternion
    label: str
    velocity: Optional[tuple[float, float]] = None
    visibility: float = 1.0
    frame: str = "global"

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "size", tuple(float(c) for c in self.size))
        if len(self.size) != 3 or min(self.size) <= 0:
            raise ValueError(f"box size must be three positive values, got {self.size}")
        if self.velocity is not None:
            object.__setattr__(self, "velocity", tuple(float(c) for c in self.velocity))

    def rotation_matrix(self) -> np.ndarray:
        return self.orientation.rotation_matrix()

    def corners(self) -> np.ndarray:
        """Eight corners ``(8, 3)``."""
        w, l, h = self.size
        signs = np.array([[sx, sy, sz] for sx in (1, -1) for sy in (1, -1) for sz in (1, -1)], dtype=float)
        local = signs * np.array([l, w, h]) / 2.0
        return local @ self.rotation_matrix().T + np.asarray(self.center)

    def contains(self, points) -> np.ndarray:
        """Mask of points inside the box (boundary inclusive)."""
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        local = (p - np.asarray(self.center)) @ self.rotation_matrix()
        w, l, h = self.size
        half = np.array([l, w, h]) / 2.0
        return np.all(np.abs(local) <= half, axis=1)

    def transformed(self, pose: Pose, frame: str) -> Box3D:
        center = pose.apply(self.center)
        orient = (pose.rotation * self.orientation).canonicalize()
        vel = None
        if self.velocity is not None:
            vel = tuple(pose.rotation.rotate([self.velocity[0], self.velocity[1], 0.0])[:2])
        return replace(self, center=tuple(center), orientation=orient, velocity=vel, frame=frame)


@dataclass
class RecordSet:
    tables: dict = field(default_factory=lambda: {name: [] for name in TABLES})

    def __getitem__(self, name):
        return self.tables[name]

    def index(self, name) -> dict:
        return {row["token"]: row for row in self.tables[name]}

    def counts(self) -> dict:
        return {name: len(rows) for name, rows in self.tables.items()}

    def validate(self) -> None:
        """Raise :class:`IntegrityError` naming the first dangling token."""
        tokens = {}
        for name in TABLES:
            seen = set()
            for row in self.tables[name]:
                if row["token"] in seen:
                    raise IntegrityError(f"duplicate token {row['token']} in {name}")
                seen.add(row["token"])
            tokens[name] = seen
        for name, refs in REFERENCES.items():
            for row in self.tables[name]:
                for fld, target in refs.items():
                    value = row.get(fld, "")
                    values = value if isinstance(value, list) else [value]
                    for tok in values:
                        if fld in ("prev", "next") and tok == "":
                            continue
                        if tok not in tokens[target]:
                            raise IntegrityError(
                                f"{name}.{fld} of {row['token']} references missing {target} token {tok!r}"
                            )
        scenes = tokens["scene"]
        by_scene: dict = {}
        for row in self.tables["sample"]:
            if row["scene_token"] not in scenes:
                raise IntegrityError(f"sample {row['token']} has no scene")
            by_scene.setdefault(row["scene_token"], []).append(row)
        samples = self.index("sample")
        for scene in self.tables["scene"]:
            chain = []
            tok = scene["first_sample_token"]
            while tok:
                chain.append(samples[tok])
                tok = samples[tok]["next"]
            if len(chain) != len(by_scene.get(scene["token"], [])) or len(chain) != scene["nbr_samples"]:
                raise IntegrityError(f"sample chain of scene {scene['token']} is inconsistent")
            stamps = [s["timestamp"] for s in chain]
            if stamps != sorted(stamps):
                raise IntegrityError(f"samples of scene {scene['token']} are not timestamp ordered")

    def dumps_table(self, name) -> str:
        rows = sorted(self.tables[name], key=lambda r: r["token"])
        return json.dumps(rows, indent=1, sort_keys=True, ensure_ascii=True) + "\n"

    def write(self, out_dir) -> list[Path]:
        self.validate()
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for name in TABLES:
            p = out / f"{name}.json"
            p.write_text(self.dumps_table(name), encoding="utf-8")
            paths.append(p)
        return paths

    @classmethod
    def read(cls, in_dir) -> RecordSet:
        d = Path(in_dir)
        rs = cls()
        for name in TABLES:
            p = d / f"{name}.json"
            if not p.exists():
                raise FileNotFoundError(f"missing table file {p}")
            rs.tables[name] = json.loads(p.read_text(encoding="utf-8"))
        return rs
