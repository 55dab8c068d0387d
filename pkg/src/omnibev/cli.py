"""``omnibev`` command-line entry point.

Exit codes: 0 success, 1 validation, 2 I/O, 3 integrity. Failures print a
single line ``error:<kind>: <message>`` to stderr.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import kernels, tensorio
from .config import ConfigError, ToolkitConfig, load_config
from .converter.classes import UnmappedLabelError
from .converter.fixture import write_fixture
from .converter.kitti360 import SourceError
from .converter.pipeline import convert_tree, summary
from .converter.records import IntegrityError, RecordSet
from .evaluation.evaluate import (
    DetectionFormatError, UnresolvedTokenError, evaluate, load_detections, load_ground_truth, write_report,
)
from .rectification import azimuth_centers, build_remap, fov_coverage, make_virtual_cameras, virtual_ego_pose
from .view_transform import FeatureCloud, lift_frustum, petr_pe_inputs, splat

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_INTEGRITY = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, kind: str, code: int, message: str):
        super().__init__(message)
        self.kind = kind
        self.code = code


def _config(args) -> ToolkitConfig:
    if args.config is None:
        return ToolkitConfig()
    return load_config(args.config)


def _out(args) -> Path:
    if args.out is None:
        raise CliError("usage", EXIT_VALIDATION, "--out is required")
    return Path(args.out)


def _pose_dict(pose):
    return {"rotation": list(pose.rotation.as_tuple()), "translation": [float(t) for t in pose.translation]}


def _camera_dict(cam, pose, source=None):
    d = {
        "model": "pinhole" if cam.is_pinhole else "mei",
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "width": cam.width, "height": cam.height,
        "cam_to_ego": _pose_dict(pose),
    }
    if not cam.is_pinhole:
        d.update(xi=cam.xi, k1=cam.k1, k2=cam.k2)
    if source is not None:
        d["source"] = source
    return d


def virtual_rig(cfg: ToolkitConfig):
    """Pinholes from the config plus two virtual views per fisheye.

    Returns ``(entries, remaps)`` where entries are ``(name, camera, pose,
    source)`` and remaps map a virtual name to ``(fisheye, VirtualPinhole)``.
    """
    r = cfg.rectify
    if not r.fisheyes:
        raise ConfigError("rectify.fisheyes: no fisheye cameras configured")
    focal = cfg.front_focal()
    entries, remaps = [], {}
    for name, e in cfg.cameras.items():
        if name not in r.fisheyes:
            entries.append((name, e.camera, e.cam_to_ego, None))
    for name in r.fisheyes:
        e = cfg.cameras[name]
        virts = make_virtual_cameras(e.camera, e.cam_to_ego, focal, r.size,
                                     (r.forward_yaw_deg, r.backward_yaw_deg), r.pitch_deg, name)
        for v in virts:
            entries.append((v.name, v.camera, virtual_ego_pose(e.cam_to_ego, v), name))
            remaps[v.name] = (e.camera, v)
    return entries, remaps


def cmd_convert(args) -> int:
    cfg = _config(args)
    out = _out(args)
    src = Path(args.src)
    if not src.is_dir():
        raise CliError("io", EXIT_IO, f"{src}: source directory not found")
    rs = convert_tree(src, cfg.converter)
    rs.write(out)
    print(summary(rs))
    return EXIT_OK


def cmd_rectify(args) -> int:
    cfg = _config(args)
    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    entries, remaps = virtual_rig(cfg)
    for vname, (fisheye, virt) in remaps.items():
        table = build_remap(fisheye, virt)
        if args.text:
            (out / f"{vname}.remap.txt").write_text(table.to_text(), encoding="utf-8")
        else:
            table.save(out / f"{vname}.remap")
    rig = {name: _camera_dict(cam, pose, src) for name, cam, pose, src in entries}
    (out / "virtual_rig.json").write_text(json.dumps(rig, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"{len(remaps)} remap tables, {len(entries)} cameras")
    return EXIT_OK


def cmd_coverage(args) -> int:
    cfg = _config(args)
    out = _out(args)
    if args.rectified:
        entries, _ = virtual_rig(cfg)
        rig = [(name, cam, pose) for name, cam, pose, _ in entries]
    else:
        rig = [(name, e.camera, e.cam_to_ego) for name, e in cfg.cameras.items()]
    if not rig:
        raise ConfigError("cameras: none configured")
    cov = fov_coverage([(c, p) for _, c, p in rig], cfg.azimuth_bins)
    az = np.degrees(azimuth_centers(cfg.azimuth_bins))
    lines = ["azimuth_deg," + ",".join(n for n, _, _ in rig) + ",count"]
    for i in range(cfg.azimuth_bins):
        row = [repr(float(az[i]))] + [str(int(v)) for v in cov[i]] + [str(int(cov[i].sum()))]
        lines.append(",".join(row))
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"{cfg.azimuth_bins} azimuth bins, {len(rig)} cameras, {int((cov.sum(axis=1) == 0).sum())} uncovered")
    return EXIT_OK


def _selected_cameras(cfg, names):
    if not cfg.cameras:
        raise ConfigError("cameras: none configured")
    names = names or list(cfg.cameras)
    for n in names:
        if n not in cfg.cameras:
            raise ConfigError(f"camera {n!r} is not defined")
    return names


def cmd_lift(args) -> int:
    cfg = _config(args)
    out = _out(args)
    rng = np.random.default_rng(args.seed)
    clouds = []
    for cid, name in enumerate(_selected_cameras(cfg, args.camera)):
        e = cfg.cameras[name]
        hs = -(-e.camera.height // cfg.stride)
        ws = -(-e.camera.width // cfg.stride)
        feats = rng.standard_normal((hs, ws, cfg.channels))
        clouds.append(lift_frustum(e.camera, e.cam_to_ego, cfg.stride, cfg.depths, feats, cid))
    cloud = FeatureCloud.concat(clouds)
    tensorio.save(out, tensorio.cloud_arrays(cloud))
    print(f"{len(cloud)} points, {cloud.channels} channels")
    return EXIT_OK


def cmd_splat(args) -> int:
    cfg = _config(args)
    out = _out(args)
    grid = cfg.require_grid()
    try:
        cloud = tensorio.cloud_from_arrays(tensorio.load(args.cloud))
    except KeyError as exc:
        raise CliError("format", EXIT_VALIDATION, f"{args.cloud}: missing array {exc}") from None
    bev = splat(cloud, grid)
    tensorio.save(out, tensorio.bev_arrays(bev))
    print(f"bev {bev.data.shape[0]}x{bev.data.shape[1]}x{bev.data.shape[2]}")
    return EXIT_OK


def cmd_encode(args) -> int:
    cfg = _config(args)
    out = _out(args)
    grid = cfg.require_grid()
    mode = args.mode or ("polar" if grid.mode == "polar" else "cartesian")
    arrays = {"grid": tensorio.grid_to_array(grid)}
    for name in _selected_cameras(cfg, args.camera):
        e = cfg.cameras[name]
        pe = petr_pe_inputs(e.camera, e.cam_to_ego, cfg.stride, cfg.depths, grid, mode)
        arrays[f"{name}/points"] = pe.points
        arrays[f"{name}/encodings"] = pe.encodings
        arrays[f"{name}/valid"] = pe.valid
    tensorio.save(out, arrays)
    print(f"{mode} encodings for {(len(arrays) - 1) // 3} camera(s)")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    out = _out(args)
    rs_dir = Path(args.recordset)
    if not rs_dir.is_dir():
        raise CliError("io", EXIT_IO, f"{rs_dir}: record set directory not found")
    rs = RecordSet.read(rs_dir)
    rs.validate()
    settings = cfg.evaluation
    gts = load_ground_truth(rs, settings)
    dets = load_detections(args.detections, rs, settings)
    strata = (args.strata,) if args.strata else ("distance", "angular")
    report = evaluate(dets, gts, settings, strata)
    write_report(report, out, args.label)
    print(f"mAP {report['mAP']:.4f} NDS {report['NDS']:.4f}")
    return EXIT_OK


def cmd_fixture(args) -> int:
    out = _out(args)
    write_fixture(out, args.seed)
    print(f"fixture written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="omnibev", description="Fisheye-aware BEV detection toolkit.")
    p.add_argument("--threads", type=int, default=None, help="worker cap (default: available cores)")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", default=None, help="YAML configuration file")
        sp.add_argument("--out", default=None, help="output path")
        sp.add_argument("--threads", type=int, default=argparse.SUPPRESS, help=argparse.SUPPRESS)
        sp.set_defaults(func=fn)
        return sp

    sp = add("convert", cmd_convert, "convert a KITTI-360 style tree to nuScenes tables")
    sp.add_argument("src")
    sp = add("rectify", cmd_rectify, "build virtual pinhole remap tables and the rectified rig")
    sp.add_argument("--text", action="store_true", help="write remap tables as text")
    sp = add("coverage", cmd_coverage, "per-azimuth camera coverage table (CSV)")
    sp.add_argument("--rectified", action="store_true", help="use the rectified rig")
    sp = add("lift", cmd_lift, "lift random per-pixel features along camera rays")
    sp.add_argument("--camera", action="append", help="camera name (repeatable; default all)")
    sp.add_argument("--seed", type=int, default=0)
    sp = add("splat", cmd_splat, "sum-pool a feature cloud into the BEV grid")
    sp.add_argument("cloud")
    sp = add("encode", cmd_encode, "3D position-encoding inputs per camera")
    sp.add_argument("--camera", action="append")
    sp.add_argument("--mode", choices=("polar", "cartesian"), default=None)
    sp = add("evaluate", cmd_evaluate, "score detections against a record set")
    sp.add_argument("detections")
    sp.add_argument("recordset")
    sp.add_argument("--strata", choices=("distance", "angular"), default=None)
    sp.add_argument("--label", default="detections", help="row label in the strata tables")
    sp = add("fixture", cmd_fixture, "write the synthetic source tree")
    sp.add_argument("--seed", type=int, default=0)
    return p


def _fail(kind: str, code: int, message: str) -> int:
    print(f"error:{kind}: {' '.join(str(message).split())}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise CliError("usage", EXIT_VALIDATION, "--threads must be >= 1")
            kernels.set_threads(args.threads)
        return args.func(args)
    except CliError as exc:
        return _fail(exc.kind, exc.code, str(exc))
    except (ConfigError, UnmappedLabelError) as exc:
        return _fail("config" if isinstance(exc, ConfigError) else "label", EXIT_VALIDATION, exc.args[0])
    except UnresolvedTokenError as exc:
        return _fail("token", EXIT_VALIDATION, exc.args[0])
    except DetectionFormatError as exc:
        return _fail("format", EXIT_VALIDATION, exc)
    except IntegrityError as exc:
        return _fail("integrity", EXIT_INTEGRITY, exc)
    except SourceError as exc:
        return _fail("source", EXIT_IO, exc)
    except OSError as exc:
        return _fail("io", EXIT_IO, f"{exc.filename or ''}: {exc.strerror or exc}")
    except ValueError as exc:
        return _fail("value", EXIT_VALIDATION, exc)


if __name__ == "__main__":
    sys.exit(main())
