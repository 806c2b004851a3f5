import shutil

import numpy as np
import pytest

from depthfuse import io
from depthfuse.fusion import FusedPose3D
from depthfuse.metrics import EvalFrame, compute
from depthfuse.pipeline import (ConfigError, Pipeline, PipelineConfig, bundle_from_synthetic, evaluate_dir,
                                load_config, pair_by_timestamp, run, save_config, write_synthetic_dataset)
from depthfuse.synth import SceneConfig, matched_offsets, synthesize_frame
from depthfuse.skeleton import builtin_coco13


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    skel = matched_offsets(builtin_coco13())
    scene = SceneConfig(camera_count=4, person_count=2, seed=3)
    write_synthetic_dataset(root, (synthesize_frame(scene, i, skel) for i in range(3)), skel)
    return root


def cfg_for(root, **kw):
    return PipelineConfig(skeleton=str(root / "skeleton.json"), input_dir=str(root), **kw)


def test_config_round_trip(tmp_path):
    cfg = PipelineConfig(depth_source="pc2vmap", cameras=["cam1", "cam0"], workers=2)
    save_config(tmp_path / "c.json", cfg)
    assert load_config(tmp_path / "c.json") == cfg


def test_config_rejects_unknown_and_bad_values(tmp_path):
    io.write_json(tmp_path / "c.json", {"depth_sorce": "direct"})
    with pytest.raises(ConfigError, match="depth_sorce"):
        load_config(tmp_path / "c.json")
    with pytest.raises(ConfigError):
        PipelineConfig(depth_source="lidar")
    with pytest.raises(ConfigError):
        PipelineConfig(cameras=[])
    with pytest.raises(ConfigError):
        PipelineConfig(depth_source="pc2vmap", voxel_resolution=0.0)


def test_run_matches_ground_truth(dataset, tmp_path):
    results, timings, report = run(cfg_for(dataset, output_dir=str(tmp_path)), evaluate=True)
    assert sorted(results) == [0, 1, 2] and len(timings) == 3
    assert report.mpjpe_mm < 5 and report.f1 == 100 and report.invalid_pct == 0
    index = io.read_json(tmp_path / "index.json")
    assert index["frames"] == [0, 1, 2]
    assert (tmp_path / "report.json").exists() and (tmp_path / "report.csv").exists()


def test_eval_dir_matches_run_report(dataset, tmp_path):
    skel = io.load_skeleton_file(dataset / "skeleton.json")
    _, _, report = run(cfg_for(dataset, output_dir=str(tmp_path)), evaluate=True)
    again = evaluate_dir(tmp_path, dataset / "ground_truth.json", skel)
    assert again.as_dict() == report.as_dict()


def test_eval_of_ground_truth_is_perfect(dataset, tmp_path):
    skel = io.load_skeleton_file(dataset / "skeleton.json")
    gt = io.ground_truth_from_dict(io.read_json(dataset / "ground_truth.json"), skel)
    for f, persons in gt.items():
        fused = [FusedPose3D(k, p, np.ones(len(p), int)) for k, p in enumerate(persons)]
        io.write_json(tmp_path / "frames" / f"{f:06d}.json", io.fused_to_dict(f, fused, skel))
    r = evaluate_dir(tmp_path, dataset / "ground_truth.json", skel)
    assert (r.mpjpe_mm, r.f1, r.pcp, r.recall100, r.invalid_pct) == (0.0, 100.0, 100.0, 100.0, 0.0)


def test_eval_of_empty_predictions(dataset, tmp_path):
    skel = io.load_skeleton_file(dataset / "skeleton.json")
    r = evaluate_dir(tmp_path, dataset / "ground_truth.json", skel)
    assert r.recall500 == 0 and r.f1 == 0 and r.mpjpe_mm is None


def test_single_camera_subset(dataset):
    _, _, full = run(cfg_for(dataset), evaluate=True)
    results, _, one = run(cfg_for(dataset, cameras=["cam0"]), evaluate=True)
    assert all(results[f] for f in results)
    assert one.invalid_pct == 0
    assert one.recall500 <= full.recall500


def test_missing_calibration_is_an_error(dataset, tmp_path):
    with pytest.raises(ConfigError, match="cam9"):
        run(cfg_for(dataset, cameras=["cam9"]))
    root = tmp_path / "ds"
    shutil.copytree(dataset, root)
    doc = io.read_json(root / "calibration.json")
    doc["views"] = doc["views"][1:]
    io.write_json(root / "calibration.json", doc)
    with pytest.raises(ConfigError, match="cam0"):
        run(cfg_for(root))


def test_malformed_frame_is_skipped(dataset, tmp_path):
    root = tmp_path / "ds"
    shutil.copytree(dataset, root)
    (io.frame_dir(root, 1) / "cam2_keypoints.json").write_text("{not json")
    results, timings, _ = run(cfg_for(root))
    assert sorted(results) == [0, 2] and len(timings) == 2


def test_replay_is_deterministic(dataset):
    a, _, _ = run(cfg_for(dataset))
    b, _, _ = run(cfg_for(dataset, workers=3))
    for f in a:
        assert [p.person_id for p in a[f]] == [p.person_id for p in b[f]]
        for p, q in zip(a[f], b[f]):
            np.testing.assert_array_equal(p.positions, q.positions)


def test_more_cameras_recall_more(oracle_skel):
    scene = SceneConfig(camera_count=6, person_count=3, seed=5)
    frames = [synthesize_frame(scene, i, oracle_skel) for i in range(2)]
    calibs = {c.view_id: c for c in frames[0].calibrations}
    recalls = []
    for n in (1, 3, 6):
        pipe = Pipeline(PipelineConfig(cameras=[f"cam{k}" for k in range(n)]), calibs, oracle_skel)
        evs = [EvalFrame([p.positions for p in pipe.process(bundle_from_synthetic(fr))[0]], fr.ground_truth())
               for fr in frames]
        recalls.append(compute(evs, oracle_skel).recall100)
    assert recalls == sorted(recalls)


def test_pair_by_timestamp():
    assert pair_by_timestamp([0.0, 0.1, 0.2], [0.01, 0.13, 0.5]) == [0, 1, None]
    assert pair_by_timestamp([0.0], []) == [None]
    # exact tie at the window edge goes to the earlier candidate
    assert pair_by_timestamp([1.0], [0.75, 1.25], window=0.25) == [0]
