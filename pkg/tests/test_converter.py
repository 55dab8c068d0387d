import itertools
import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omnibev.converter import kitti360
from omnibev.converter.classes import LABEL_MAP, NUSCENES_DETECTION_CLASSES, UnmappedLabelError, map_classes
from omnibev.converter.fixture import write_fixture
from omnibev.converter.pipeline import (
    ConverterSettings, assign_static_objects, convert_tree, emit_recordset, identify_keyframes, partition_scenes,
    summary,
)
from omnibev.converter.records import TABLES, Box3D, IntegrityError, RecordSet, make_token
from omnibev.geometry import Pose, Quaternion

GOLDEN = Path(__file__).parent / "golden" / "recordset"


def straight(length, step=1.0):
    n = int(round(length / step)) + 1
    pos = [(i * step, 0.0, 0.0) for i in range(n)]
    return list(range(n)), pos


def span_length(span):
    return float(span[-1] - span[0])


def test_partition_450m_merges_short_tail():
    frames, pos = straight(450.0)
    spans = partition_scenes(frames, pos, 200.0)
    assert len(spans) == 2
    assert span_length(spans[0]) == pytest.approx(199.0)
    # second span covers arc 200..450 m
    assert spans[1][0] == 200 and spans[1][-1] == 450


def test_partition_short_and_degenerate():
    frames, pos = straight(150.0)
    assert partition_scenes(frames, pos) == [frames]
    assert partition_scenes([0, 1, 2], [(5.0, 5.0, 0.0)] * 3) == [[0, 1, 2]]
    assert partition_scenes([], []) == []
    with pytest.raises(ValueError):
        partition_scenes([0, 1], [(0, 0, 0), (1, 0, 0)], 0.0)


def test_partition_long_tail_stands_alone():
    frames, pos = straight(520.0)
    spans = partition_scenes(frames, pos, 200.0)
    assert [s[0] for s in spans] == [0, 200, 400]


@settings(max_examples=50)
@given(st.lists(st.floats(0.0, 60.0), min_size=1, max_size=60), st.floats(20.0, 300.0))
def test_partition_is_a_partition(steps, window):
    pos = np.zeros((len(steps) + 1, 3))
    pos[1:, 0] = np.cumsum(steps)
    frames = list(range(len(pos)))
    spans = partition_scenes(frames, pos, window)
    assert list(itertools.chain.from_iterable(spans)) == frames
    assert all(spans)


def ten_frame_sequence():
    frames = range(10)
    sensors = ("cam_a", "cam_b", "lidar")
    pose_times = {f: f * 100_000 for f in frames}
    times = {s: {f: f * 100_000 + 1_000 for f in frames} for s in sensors}
    files = {s: {f: f"{s}/{f}" for f in frames} for s in sensors}
    del files["cam_b"][3]
    del files["cam_a"][7]
    poses = {f: Pose(Quaternion.identity(), (float(f), 0.0, 0.0)) for f in frames}
    return kitti360.SourceSequence("s", poses, pose_times, times, files), sensors


def test_keyframes_drop_frames_missing_a_camera():
    seq, sensors = ten_frame_sequence()
    assert identify_keyframes(seq, sensors) == [0, 1, 2, 4, 5, 6, 8, 9]


def test_keyframes_pose_and_sync():
    seq, sensors = ten_frame_sequence()
    del seq.poses[0]
    seq.sensor_times["lidar"][1] += 20_000
    assert identify_keyframes(seq, sensors) == [2, 4, 5, 6, 8, 9]
    assert 1 in identify_keyframes(seq, sensors, sync_tol=0.05)


def cube(center, size=2.0, label="car"):
    return Box3D(center, (size, size, size), Quaternion.identity(), label)


def test_assign_distance_and_points():
    ego = Pose(Quaternion.from_yaw(0.3), (10.0, -4.0, 0.0))
    rel = [(5.0, 0.0, 0.0), (50.0, 0.0, 0.0), (100.0, 0.0, 0.0)]
    boxes = [cube(ego.apply(r)) for r in rel]
    pts = np.concatenate([np.tile(r, (10, 1)) + np.linspace(-0.5, 0.5, 10)[:, None] for r in rel])
    out = assign_static_objects(boxes, ego, pts, d_max=80.0, min_pts=1)
    assert [a.index for a in out] == [0, 1]
    assert [a.num_lidar_pts for a in out] == [10, 10]
    assert np.allclose(out[0].box.center, rel[0], atol=1e-9) and out[0].box.frame == "ego"
    far = assign_static_objects([cube((300.0, 0.0, 0.0))], Pose(), np.array([[300.0, 0, 0]]))
    assert far == []
    empty = assign_static_objects([cube((10.0, 0.0, 0.0))], Pose(), np.array([[0.0, 0.0, 0.0]]))
    assert empty == []
    assert assign_static_objects([cube((10.0, 0.0, 0.0))], Pose(), None) == []


@settings(max_examples=50)
@given(
    st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.1, 1)), st.floats(-3.2, 3.2),
    st.tuples(st.floats(-500, 500), st.floats(-500, 500), st.floats(-5, 5)), st.floats(-3.2, 3.2),
)
def test_rigid_transform_preserves_box_shape(axis, angle, t, yaw):
    pose = Pose(Quaternion.from_axis_angle(axis, angle), t)
    box = Box3D((3.0, -2.0, 1.0), (1.7, 4.3, 1.5), Quaternion.from_yaw(yaw), "car")
    moved = box.transformed(pose, "ego")
    assert np.allclose(moved.size, box.size, atol=1e-9)
    c0, c1 = box.corners(), moved.corners()
    d0 = np.linalg.norm(c0[:, None] - c0[None], axis=-1)
    d1 = np.linalg.norm(c1[:, None] - c1[None], axis=-1)
    assert np.max(np.abs(d0 - d1)) < 1e-9
    assert np.allclose(pose.apply(c0), c1, atol=1e-9)


def test_map_classes_examples_and_totality():
    assert map_classes("car") == ("car", False)
    assert map_classes("trafficSign") == ("traffic_sign", True)
    assert map_classes("pole")[1]
    for label in LABEL_MAP:
        cat, ext = map_classes(label)
        assert ext == (cat not in NUSCENES_DETECTION_CLASSES)
    with pytest.raises(UnmappedLabelError):
        map_classes("flyingSaucer")


def test_tokens_are_deterministic_hashes():
    a = make_token("scene", "seq", 3)
    assert a == make_token("scene", "seq", 3) and len(a) == 32
    int(a, 16)
    assert a != make_token("scene", "seq", 4)


def test_empty_input_keeps_schema(tmp_path):
    rs = emit_recordset([], None)
    rs.validate()
    assert set(rs.tables) == set(TABLES)
    assert rs.counts()["sample"] == 0 and rs.counts()["category"] > 0
    rs.write(tmp_path)
    back = RecordSet.read(tmp_path)
    assert back.counts() == rs.counts()
    assert summary(back) == "0 scenes, 0 samples, 0 annotations"


@pytest.fixture(scope="module")
def fixture_tree(tmp_path_factory):
    return write_fixture(tmp_path_factory.mktemp("src"))


@pytest.fixture(scope="module")
def converted(fixture_tree):
    return convert_tree(fixture_tree)


def test_fixture_counts(converted):
    assert summary(converted) == "2 scenes, 5 samples, 16 annotations"
    frames = sorted(int(Path(r["filename"]).stem) for r in converted["sample_data"] if r["filename"].endswith(".bin"))
    assert frames == [0, 1, 4, 6, 8]


def test_fixture_matches_golden_files(converted, tmp_path):
    converted.write(tmp_path)
    for name in TABLES:
        assert (tmp_path / f"{name}.json").read_bytes() == (GOLDEN / f"{name}.json").read_bytes(), name


def test_reread_and_reemit_is_identical(tmp_path):
    rs = RecordSet.read(GOLDEN)
    rs.validate()
    rs.write(tmp_path)
    for name in TABLES:
        assert (tmp_path / f"{name}.json").read_bytes() == (GOLDEN / f"{name}.json").read_bytes()


def test_annotations_are_global_and_chained(converted):
    samples = converted.index("sample")
    for ann in converted["sample_annotation"]:
        assert ann["sample_token"] in samples
    instances = converted["instance"]
    assert sum(i["nbr_annotations"] for i in instances) == 16
    anns = converted.index("sample_annotation")
    for inst in instances:
        tok, n = inst["first_annotation_token"], 0
        while tok:
            n += 1
            last = tok
            tok = anns[tok]["next"]
        assert n == inst["nbr_annotations"] and last == inst["last_annotation_token"]


def test_never_observed_object_is_absent(converted):
    # the static car at (60, -8) has no LiDAR support
    assert not any(a["translation"][:2] == [60.0, -8.0] for a in converted["sample_annotation"])


def test_integrity_error_names_token():
    rs = RecordSet.read(GOLDEN)
    bad = rs["sample_annotation"][0]
    bad["instance_token"] = "deadbeef" * 4
    with pytest.raises(IntegrityError, match="deadbeef" * 4):
        rs.validate()


def test_integrity_error_on_duplicate_token():
    rs = RecordSet.read(GOLDEN)
    rs["ego_pose"].append(dict(rs["ego_pose"][0]))
    with pytest.raises(IntegrityError, match="duplicate"):
        rs.validate()


def test_corrupt_pose_file_names_the_file(tmp_path):
    root = write_fixture(tmp_path / "src")
    poses = root / "data_poses" / "seq_a" / "poses.txt"
    poses.write_text("0 1 2 three\n")
    with pytest.raises(kitti360.SourceError) as exc:
        convert_tree(root)
    assert exc.value.path == poses and "poses.txt" in str(exc.value)


@pytest.mark.parametrize("name", ["calib_cam_to_pose.txt", "calib_cam_to_velo.txt", "perspective.txt", "image_03.yaml"])
def test_missing_calibration_names_the_file(tmp_path, name):
    root = write_fixture(tmp_path / "src")
    (root / "calibration" / name).unlink()
    with pytest.raises(kitti360.SourceError, match=name.replace(".", r"\.")):
        convert_tree(root)


def test_calibration_only_required_for_configured_sensors(tmp_path):
    root = write_fixture(tmp_path / "src")
    (root / "calibration" / "image_03.yaml").unlink()
    rs = convert_tree(root, ConverterSettings(sensors=("image_00", "image_02", "velodyne")))
    assert rs.counts()["calibrated_sensor"] == 3


def test_empty_source_tree(tmp_path):
    rs = convert_tree(tmp_path)
    assert rs.counts()["scene"] == 0


def test_split_assignment(fixture_tree):
    rs = convert_tree(fixture_tree, ConverterSettings(splits={"val": ["seq_a"]}))
    assert {s["split"] for s in rs["scene"]} == {"val"}
    none = convert_tree(fixture_tree, ConverterSettings(splits={"val": ["other"]}))
    assert none.counts()["scene"] == 0


def test_thresholds_change_assignment(fixture_tree):
    tight = convert_tree(fixture_tree, ConverterSettings(d_max=30.0))
    assert tight.counts()["sample_annotation"] < 16
    strict = convert_tree(fixture_tree, ConverterSettings(min_pts=11))
    # only the 12-point car survives among static objects
    statics = [a for a in strict["sample_annotation"] if a["num_lidar_pts"] >= 11]
    assert all(a["translation"] == [20.0, 4.0, 0.8] for a in statics if a["size"] == [1.8, 4.2, 1.5])


def test_fixture_is_seed_deterministic(tmp_path):
    a = convert_tree(write_fixture(tmp_path / "a", seed=3))
    b = convert_tree(write_fixture(tmp_path / "b", seed=3))
    for name in TABLES:
        assert a.dumps_table(name) == b.dumps_table(name)


def test_calibrated_sensor_carries_camera_model(converted):
    models = [r["camera_model"] for r in converted["calibrated_sensor"] if "camera_model" in r]
    assert sorted(m["type"] for m in models) == ["mei", "mei", "pinhole", "pinhole"]
    mei = [m for m in models if m["type"] == "mei"][0]
    assert mei["xi"] == pytest.approx(2.2134)


def test_box_rejects_bad_size():
    with pytest.raises(ValueError):
        Box3D((0, 0, 0), (1.0, 0.0, 1.0), Quaternion.identity(), "car")


def test_golden_json_is_sorted_by_token():
    for name in TABLES:
        rows = json.loads((GOLDEN / f"{name}.json").read_text())
        toks = [r["token"] for r in rows]
        assert toks == sorted(toks)
        assert not any(math.isnan(v) for r in rows for v in r.get("translation", []))
