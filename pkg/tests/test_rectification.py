import math

import numpy as np
import pytest

from omnibev.camera import MeiCamera
from omnibev.converter.fixture import cam_to_ego
from omnibev.geometry import Pose
from omnibev.rectification import (
    RemapTable, azimuth_centers, build_remap, fov_coverage, make_virtual_cameras, mount_rotation, remap_image,
    virtual_ego_pose,
)

FRONT_FOCAL = 552.554261


def small_fisheye():
    return MeiCamera(2.2134, 0.0168, 1.6549, 1336.32 / 4, 1335.79 / 4, 716.94 / 4, 705.76 / 4, 350, 350)


def test_mount_rotation_directions():
    ez = np.array([0.0, 0.0, 1.0])
    down = mount_rotation(0.0, -4.0) @ ez
    assert down[1] == pytest.approx(math.sin(math.radians(4)))
    right = mount_rotation(30.0, 0.0) @ ez
    assert right == pytest.approx([0.5, 0.0, math.sqrt(3) / 2])


@pytest.mark.parametrize("sensor,sign", [("image_02", 1.0), ("image_03", -1.0)])
def test_virtual_cameras_turn_toward_front_and_rear(fisheye, sensor, sign):
    pose = cam_to_ego(sensor)
    fwd, back = make_virtual_cameras(fisheye, pose, FRONT_FOCAL, name=sensor)
    assert (fwd.yaw_deg, back.yaw_deg, fwd.pitch_deg) == (30.0, -46.0, -4.0)
    ax_f = virtual_ego_pose(pose, fwd).rotation.rotate([0, 0, 1])
    ax_b = virtual_ego_pose(pose, back).rotation.rotate([0, 0, 1])
    assert ax_f[0] == pytest.approx(math.sin(math.radians(30)) * math.cos(math.radians(4)))
    assert ax_b[0] == pytest.approx(-math.sin(math.radians(46)) * math.cos(math.radians(4)))
    assert ax_f[2] < 0 and ax_b[2] < 0  # pitched down
    assert math.copysign(1, ax_f[1]) == sign
    cam = fwd.camera
    assert (cam.width, cam.height, cam.fx, cam.cx, cam.cy) == (704, 376, FRONT_FOCAL, 351.5, 187.5)
    assert cam.is_pinhole


def test_make_virtual_cameras_rejects_bad_focal(fisheye):
    with pytest.raises(ValueError):
        make_virtual_cameras(fisheye, Pose(), 0.0)


def test_remap_reprojects_to_target():
    fish = small_fisheye()
    virt = make_virtual_cameras(fish, cam_to_ego("image_02"), 150.0, (176, 94))[0]
    table = build_remap(fish, virt)
    ok = table.valid
    assert ok.mean() > 0.5
    src = table.map[ok]
    rays, status, _ = fish.unproject_pixels(src)
    assert (status == 0).all()
    back = rays @ virt.mount.rotation.rotation_matrix()
    uv, valid, _ = virt.camera.project_points(back)
    vv, uu = np.nonzero(ok)
    assert np.max(np.abs(uv - np.stack([uu, vv], 1))) < 1e-6


def test_remap_serialization_roundtrip(tmp_path):
    fish = small_fisheye()
    virt = make_virtual_cameras(fish, cam_to_ego("image_03"), 150.0, (40, 30))[1]
    t = build_remap(fish, virt)
    b = RemapTable.from_bytes(t.to_bytes())
    assert np.array_equal(b.map, t.map, equal_nan=True)
    x = RemapTable.from_text(t.to_text())
    assert np.array_equal(x.map, t.map, equal_nan=True)
    t.save(tmp_path / "t.remap")
    assert np.array_equal(RemapTable.load(tmp_path / "t.remap").map, t.map, equal_nan=True)
    with pytest.raises(ValueError):
        RemapTable.from_bytes(b"XXXX" + t.to_bytes()[4:])
    with pytest.raises(ValueError):
        RemapTable.from_bytes(t.to_bytes()[:-8])


def test_remap_image_is_exact_on_linear_images():
    h, w = 60, 80
    vv, uu = np.mgrid[0:h, 0:w].astype(float)
    img = 2.0 * uu - 3.0 * vv + 5.0
    rng = np.random.default_rng(0)
    m = np.stack([rng.uniform(0, w - 1, (10, 12)), rng.uniform(0, h - 1, (10, 12))], axis=-1)
    m[0, 0] = np.nan
    out = remap_image(img, RemapTable(m), fill=-1.0)
    expect = 2.0 * m[..., 0] - 3.0 * m[..., 1] + 5.0
    expect[0, 0] = -1.0
    assert np.allclose(out, expect, atol=1e-9)
    rgb = remap_image(np.stack([img, img], -1), RemapTable(m))
    assert rgb.shape == (10, 12, 2)


def level_pinhole_oracle(az_deg, cam_az_deg, f, cx, w, pitch_deg=0.0):
    """Horizontal ego ray at azimuth ``az`` (counter-clockwise) seen by a
    camera whose axis points at ``cam_az`` and is pitched by ``pitch``.

    Image x points right, so u = cx - f tan(b) / cos(pitch) with b the
    relative azimuth; v is the same for every horizontal ray.
    """
    b = math.radians(az_deg - cam_az_deg)
    if math.cos(b) <= 0:
        return False
    u = cx - f * math.tan(b) / math.cos(math.radians(pitch_deg))
    return 0.0 <= u < w


def test_coverage_matches_analytic_pinhole_oracle(fisheye):
    bins = 720
    pin = MeiCamera.pinhole(FRONT_FOCAL, FRONT_FOCAL, 682.049453, 238.769549, 1408, 376)
    rig = [(pin, cam_to_ego("image_00"))]
    expected = [(0.0, 682.049453, 1408, 0.0)]
    for sensor, base, toward_front in (("image_02", 90.0, -1.0), ("image_03", 270.0, 1.0)):
        pose = cam_to_ego(sensor)
        fwd, back = make_virtual_cameras(fisheye, pose, FRONT_FOCAL)
        for v in (fwd, back):
            rig.append((v.camera, virtual_ego_pose(pose, v)))
            expected.append((base + toward_front * v.yaw_deg, 351.5, 704, -4.0))
    cov = fov_coverage(rig, bins)
    az = np.degrees(azimuth_centers(bins))
    for j, (cam_az, cx, w, pitch) in enumerate(expected):
        oracle = np.array([level_pinhole_oracle(a, cam_az, FRONT_FOCAL, cx, w, pitch) for a in az])
        assert np.array_equal(cov[:, j], oracle), j
        assert oracle.sum() > 0


def test_coverage_of_fisheye_rig(fisheye):
    rig = [(fisheye, cam_to_ego("image_02")), (fisheye, cam_to_ego("image_03"))]
    cov = fov_coverage(rig, 360)
    assert cov.shape == (360, 2)
    # two fisheyes with >180 deg fields of view jointly cover every azimuth
    assert cov.any(axis=1).all()
    with pytest.raises(ValueError):
        fov_coverage(rig, 2)
