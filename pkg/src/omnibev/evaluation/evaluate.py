"""Ground-truth / detection loading, full evaluation and report files.

Detection files use the nuScenes submission layout::

    {"meta": {...},
     "results": {sample_token: [{"sample_token", "translation", "size",
                                 "rotation", "velocity", "detection_name",
                                 "detection_score", "attribute_name"}, ...]}}

Coordinates are global; ``velocity`` is global (vx, vy) in m/s.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..converter.classes import EVAL_CLASSES
from ..converter.records import RecordSet
from ..geometry import Pose, Quaternion
from .metrics import DIST_THRESHOLDS, TP_METRICS, TP_THRESHOLD, EvalBox, match_and_ap, summarize
from .strata import Strata, angular_strata, distance_strata, split_by_stratum

MAX_VELOCITY_DT = 1.5  # seconds


class DetectionFormatError(ValueError):
    """Malformed detection file."""


class UnresolvedTokenError(KeyError):
    def __init__(self, tokens):
        self.tokens = sorted(tokens)
        super().__init__(f"{len(self.tokens)} sample token(s) not in record set: {', '.join(self.tokens[:10])}")


@dataclass(frozen=True)
class EvalSettings:
    classes: tuple = EVAL_CLASSES
    thresholds: tuple = DIST_THRESHOLDS
    tp_threshold: float = TP_THRESHOLD
    max_range: float = 50.0
    ego_forward: str = "x"
    split: str | None = None
    distance: Strata = field(default_factory=distance_strata)
    angular: Strata = field(default_factory=angular_strata)


def _ego_poses(rs: RecordSet) -> dict:
    """sample token -> ego pose (ego -> global), from the sample's LiDAR or first sample_data."""
    poses = rs.index("ego_pose")
    calib = rs.index("calibrated_sensor")
    sensors = rs.index("sensor")
    chosen: dict = {}
    for sd in sorted(rs["sample_data"], key=lambda r: r["token"]):
        cs = calib.get(sd["calibrated_sensor_token"])
        is_lidar = cs is not None and sensors[cs["sensor_token"]]["modality"] == "lidar"
        prev = chosen.get(sd["sample_token"])
        if prev is None or (is_lidar and not prev[0]):
            chosen[sd["sample_token"]] = (is_lidar, sd["ego_pose_token"])
    out = {}
    for tok, (_, ego_tok) in chosen.items():
        p = poses[ego_tok]
        out[tok] = Pose(Quaternion(*p["rotation"]), p["translation"])
    return out


def eval_samples(rs: RecordSet, split: str | None = None) -> list[str]:
    scenes = {s["token"] for s in rs["scene"] if split is None or s.get("split") == split}
    return sorted(s["token"] for s in rs["sample"] if s["scene_token"] in scenes)


def _velocity(ann, anns, samples) -> tuple:
    has_prev, has_next = ann["prev"] != "", ann["next"] != ""
    if not has_prev and not has_next:
        return (math.nan, math.nan)
    first = anns[ann["prev"]] if has_prev else ann
    last = anns[ann["next"]] if has_next else ann
    dt = 1e-6 * (samples[last["sample_token"]]["timestamp"] - samples[first["sample_token"]]["timestamp"])
    limit = MAX_VELOCITY_DT * (2.0 if has_prev and has_next else 1.0)
    if dt <= 0 or dt > limit:
        return (math.nan, math.nan)
    return ((last["translation"][0] - first["translation"][0]) / dt,
            (last["translation"][1] - first["translation"][1]) / dt)


def _to_ego(translation, pose: Pose | None):
    if pose is None:
        return (0.0, 0.0, 0.0)
    return tuple(pose.inverse().apply(translation))


def load_ground_truth(rs: RecordSet, settings: EvalSettings = EvalSettings()) -> list[EvalBox]:
    """Evaluation boxes for every annotation of an evaluation class."""
    samples = rs.index("sample")
    anns = rs.index("sample_annotation")
    inst = rs.index("instance")
    cats = rs.index("category")
    poses = _ego_poses(rs)
    keep = set(eval_samples(rs, settings.split))
    out = []
    for a in sorted(rs["sample_annotation"], key=lambda r: r["token"]):
        if a["sample_token"] not in keep:
            continue
        name = cats[inst[a["instance_token"]]["category_token"]]["name"]
        if name not in settings.classes:
            continue
        out.append(EvalBox(
            a["sample_token"], a["translation"], a["size"], a["rotation"], _velocity(a, anns, samples), name,
            ego_translation=_to_ego(a["translation"], poses.get(a["sample_token"])),
            num_pts=a.get("num_lidar_pts", -1),
        ))
    return out


def parse_detections(doc, rs: RecordSet, settings: EvalSettings = EvalSettings()) -> list[EvalBox]:
    """Validate a submission document and convert it to evaluation boxes."""
    if not isinstance(doc, dict) or not isinstance(doc.get("results"), dict):
        raise DetectionFormatError("detection file must be an object with a 'results' mapping")
    samples = rs.index("sample")
    unknown = [tok for tok in doc["results"] if tok not in samples]
    if unknown:
        raise UnresolvedTokenError(unknown)
    poses = _ego_poses(rs)
    out = []
    for tok in sorted(doc["results"]):
        for k, d in enumerate(doc["results"][tok]):
            where = f"results[{tok!r}][{k}]"
            try:
                if d.get("sample_token", tok) != tok:
                    raise DetectionFormatError(f"{where}: sample_token does not match its key")
                name = d["detection_name"]
                score = float(d["detection_score"])
                box = EvalBox(tok, d["translation"], d["size"], d["rotation"],
                              d.get("velocity", (math.nan, math.nan)), name, score,
                              ego_translation=_to_ego(d["translation"], poses.get(tok)))
            except (KeyError, TypeError, ValueError) as exc:
                if isinstance(exc, DetectionFormatError):
                    raise
                raise DetectionFormatError(f"{where}: {exc!r}") from None
            if name not in settings.classes:
                raise DetectionFormatError(f"{where}: unknown detection_name {name!r}")
            if not (0.0 <= score <= 1.0):
                raise DetectionFormatError(f"{where}: detection_score {score} outside [0, 1]")
            if len(box.translation) != 3 or len(box.size) != 3 or len(box.rotation) != 4 or len(box.velocity) != 2:
                raise DetectionFormatError(f"{where}: wrong vector length")
            if min(box.size) <= 0:
                raise DetectionFormatError(f"{where}: size must be positive")
            out.append(box)
    return out


def load_detections(path, rs: RecordSet, settings: EvalSettings = EvalSettings()) -> list[EvalBox]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DetectionFormatError(f"{path}: invalid JSON ({exc})") from None
    return parse_detections(doc, rs, settings)


def filter_boxes(boxes, settings: EvalSettings, is_gt: bool):
    out = [b for b in boxes if b.name in settings.classes and b.ego_dist < settings.max_range]
    if is_gt:
        out = [b for b in out if b.num_pts != 0]
    return out


def evaluate_boxes(dets, gts, settings: EvalSettings = EvalSettings()) -> dict:
    """Per-class results plus the averaged summary for already-filtered boxes."""
    results = {c: match_and_ap(dets, gts, c, settings.thresholds, settings.tp_threshold) for c in settings.classes}
    return {"results": results, "summary": summarize(results)}


def stratified_map(dets, gts, strata: Strata, settings: EvalSettings = EvalSettings()) -> dict:
    """mAP per stratum; each side is filtered by its own position."""
    d_split = split_by_stratum(dets, strata, settings.ego_forward)
    g_split = split_by_stratum(gts, strata, settings.ego_forward)
    out = {}
    for name in strata.names:
        ev = evaluate_boxes(d_split[name], g_split[name], settings)
        s = ev["summary"]
        out[name] = {
            "mAP": s.mAP if g_split[name] else None,  # undefined without ground truth
            "n_gt": len(g_split[name]),
            "n_det": len(d_split[name]),
            "per_class_ap": {c: r.mean_ap for c, r in ev["results"].items() if r.n_gt > 0},
        }
    return out


def evaluate(dets, gts, settings: EvalSettings = EvalSettings(), strata=("distance", "angular")) -> dict:
    """Full metrics report as a JSON-ready dict."""
    dets = filter_boxes(dets, settings, is_gt=False)
    gts = filter_boxes(gts, settings, is_gt=True)
    ev = evaluate_boxes(dets, gts, settings)
    s = ev["summary"]
    names = {"trans_err": "mATE", "scale_err": "mASE", "orient_err": "mAOE", "vel_err": "mAVE"}
    report = {
        "mAP": s.mAP,
        "NDS": s.nds,
        **{names[m]: s.tp[m] for m in TP_METRICS},
        "n_gt": len(gts),
        "n_det": len(dets),
        "per_class": {c: _finite(v) for c, v in s.per_class.items()},
        "strata": {},
    }
    for kind in strata:
        st = settings.distance if kind == "distance" else settings.angular
        report["strata"][kind] = stratified_map(dets, gts, st, settings)
    return report


def _finite(d):
    if isinstance(d, dict):
        return {k: _finite(v) for k, v in d.items()}
    if isinstance(d, float) and math.isnan(d):
        return None
    return d


def strata_table(report: dict, kind: str, label: str = "detections") -> str:
    """Flat CSV in the published layout: one row per method, mAP in percent."""
    strata = report["strata"][kind]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", *strata.keys()])
    w.writerow([label, *("-" if v["mAP"] is None else f"{100.0 * v['mAP']:.2f}" for v in strata.values())])
    return buf.getvalue()


def write_report(report: dict, out_dir, label: str = "detections") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "metrics.json"]
    paths[0].write_text(json.dumps(report, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    for kind in report["strata"]:
        p = out / f"table_{kind}.csv"
        p.write_text(strata_table(report, kind, label), encoding="utf-8")
        paths.append(p)
    return paths


def ground_truth_submission(rs: RecordSet, settings: EvalSettings = EvalSettings()) -> dict:
    """Submission document reproducing the ground truth with unit scores."""
    results: dict = {tok: [] for tok in eval_samples(rs, settings.split)}
    for g in load_ground_truth(rs, settings):
        vel = [0.0 if math.isnan(v) else v for v in g.velocity]
        results[g.sample_token].append({
            "sample_token": g.sample_token,
            "translation": list(g.translation),
            "size": list(g.size),
            "rotation": list(g.rotation),
            "velocity": vel,
            "detection_name": g.name,
            "detection_score": 1.0,
            "attribute_name": "",
        })
    return {"meta": {"use_camera": True, "use_lidar": False}, "results": results}

