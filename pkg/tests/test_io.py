import logging

import numpy as np
import pytest

from depthfuse import io
from depthfuse.fusion import FusedPose3D
from depthfuse.geometry import CalibrationError, look_at
from depthfuse.sampling import DepthImage
from depthfuse.skeleton import Keypoint2D, Pose2D, builtin_coco13
from depthfuse.synth import make_person


def test_calibration_round_trip(tmp_path):
    cams = [look_at(f"c{k}", (3.0 * np.cos(k), 3.0 * np.sin(k), 2.0), (0, 0, 1)) for k in range(3)]
    io.save_calibrations(tmp_path / "calib.json", cams)
    loaded = io.load_calibrations(tmp_path / "calib.json")
    assert list(loaded) == ["c0", "c1", "c2"]
    for c in cams:
        assert loaded[c.view_id] == c


def test_world_to_camera_convention_is_inverted(tmp_path):
    cam = look_at("c0", (2.0, 1.0, 1.5), (0, 0, 1))
    R, t = cam.rotation.T, -cam.rotation.T @ cam.translation
    doc = {"convention": "world_to_camera", "views": [{
        "view_id": "c0", "width": cam.width, "height": cam.height,
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "R": R.reshape(-1).tolist(), "t": t.tolist()}]}
    io.write_json(tmp_path / "calib.json", doc)
    got = io.load_calibrations(tmp_path / "calib.json")["c0"]
    np.testing.assert_allclose(got.rotation, cam.rotation, atol=1e-12)
    np.testing.assert_allclose(got.translation, cam.translation, atol=1e-12)
    doc["convention"] = "camera_to_world"
    io.write_json(tmp_path / "calib2.json", doc)
    flipped = io.load_calibrations(tmp_path / "calib2.json", invert=True)["c0"]
    np.testing.assert_allclose(flipped.translation, cam.translation, atol=1e-12)


def test_calibration_errors(tmp_path, caplog):
    entry = io.calibration_to_dict(look_at("c0", (2, 0, 1), (0, 0, 1)))
    with caplog.at_level(logging.WARNING):
        io.calibration_from_dict({**entry, "distortion": [0.1, 0, 0, 0]})
    assert "distortion" in caplog.text
    with pytest.raises(CalibrationError, match="missing field"):
        io.calibration_from_dict({k: v for k, v in entry.items() if k != "fx"})
    with pytest.raises(CalibrationError, match="orthonormal"):
        io.calibration_from_dict({**entry, "R": [2, 0, 0, 0, 1, 0, 0, 0, 1]})
    io.write_json(tmp_path / "dup.json", {"views": [entry, entry]})
    with pytest.raises(CalibrationError, match="duplicate"):
        io.load_calibrations(tmp_path / "dup.json")


@pytest.mark.parametrize("suffix", [".png", ".depth"])
def test_depth_round_trip(tmp_path, suffix, rng):
    vals = np.round(rng.uniform(0.5, 6.0, size=(24, 32)), 3)
    vals[3, 4] = 0.0
    img = DepthImage("c0", vals)
    io.save_depth(tmp_path / f"d{suffix}", img)
    back = io.load_depth(tmp_path / f"d{suffix}", "c0")
    # png stores whole millimeters, raw stores float32
    np.testing.assert_allclose(back.values, vals, atol=1e-6 if suffix == ".depth" else 5e-4)
    assert back.values[3, 4] == 0.0


def test_depth_png_range_and_bad_header(tmp_path):
    with pytest.raises(ValueError, match="65.535"):
        io.save_depth(tmp_path / "far.png", DepthImage("c0", np.full((2, 2), 70.0)))
    (tmp_path / "bad.depth").write_bytes(b"NOPE" + bytes(12))
    with pytest.raises(ValueError, match="header"):
        io.load_depth(tmp_path / "bad.depth", "c0")


def test_keypoints_round_trip_and_margin(coco, caplog):
    cam = look_at("c0", (3, 0, 2), (0, 0, 1))
    pose = Pose2D("c0")
    pose.add(Keypoint2D(0, (100.5, 200.25), 0.9))
    pose.add(Keypoint2D(5, (10.0, 20.0), 0.4))
    doc = io.keypoints_to_dict(4, "c0", [pose], coco)
    back = io.keypoints_from_dict(doc, coco, cam)
    assert len(back) == 1 and back[0].keypoints[0].pixel == (100.5, 200.25)
    assert io.keypoints_from_dict(doc, coco, cam, min_confidence=0.5)[0].keypoints.keys() == {0}

    doc["persons"][0]["keypoints"]["nose"] = [-60.0, 10.0, 1.0]
    doc["persons"][0]["keypoints"]["left_hip"] = [-40.0, 10.0, 1.0]
    with caplog.at_level(logging.WARNING):
        back = io.keypoints_from_dict(doc, coco, cam)
    assert "nose" in caplog.text
    assert set(back[0].keypoints) == {coco.index("left_hip"), 5}


def test_fused_and_ground_truth_round_trip(coco):
    pos = make_person(coco).joint_positions.copy()
    pos[3] = np.nan
    sup = np.full(coco.num_joints, 2)
    sup[3] = 0
    doc = io.fused_to_dict(7, [FusedPose3D(4, pos, sup)], coco)
    (back,) = io.fused_from_dict(doc, coco)
    assert back.person_id == 4
    np.testing.assert_array_equal(back.support, sup)
    np.testing.assert_array_equal(np.isnan(back.positions), np.isnan(pos))
    np.testing.assert_allclose(back.positions[~np.isnan(pos[:, 0])], pos[~np.isnan(pos[:, 0])])

    gt = io.ground_truth_from_dict(io.ground_truth_to_dict([(7, [(0, pos)])], coco), coco)
    assert list(gt) == [7]
    np.testing.assert_array_equal(np.isnan(gt[7][0]), np.isnan(pos))


def test_ground_truth_joint_mismatch(coco):
    doc = io.ground_truth_to_dict([(0, [])], coco)
    doc["joints"] = doc["joints"][::-1]
    with pytest.raises(ValueError, match="do not match"):
        io.ground_truth_from_dict(doc, coco)


def test_skeleton_file_round_trip(tmp_path):
    skel = builtin_coco13()
    io.save_skeleton(tmp_path / "s.json", skel)
    back = io.load_skeleton_file(tmp_path / "s.json")
    assert back.joints == skel.joints
    np.testing.assert_array_equal(back.offsets_array, skel.offsets_array)
