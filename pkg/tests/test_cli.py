import json

import pytest

from depthfuse.cli import build_parser, config_from_args, main


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root), "--frames", "2", "--cameras", "3", "--persons", "2",
                 "--seed", "4"]) == 0
    return root


def test_synth_writes_dataset(synth_dir):
    assert (synth_dir / "calibration.json").exists()
    assert (synth_dir / "ground_truth.json").exists()
    assert sorted(p.name for p in (synth_dir / "frames").iterdir()) == ["000000", "000001"]


def test_run_then_eval(synth_dir, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--input", str(synth_dir), "--output", str(out), "--skeleton",
                 str(synth_dir / "skeleton.json"), "--eval", "--save-config", str(tmp_path / "cfg.json")]) == 0
    text = capsys.readouterr().out
    assert "processed 2 frames" in text
    assert main(["eval", "--pred", str(out), "--gt", str(synth_dir / "ground_truth.json"),
                 "--skeleton", str(synth_dir / "skeleton.json"), "--out", str(tmp_path / "rep")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["f1"] == 100.0 and report["mpjpe_mm"] < 5
    assert json.loads((tmp_path / "rep" / "report.json").read_text()) == report
    saved = json.loads((tmp_path / "cfg.json").read_text())
    assert saved["input_dir"] == str(synth_dir)


def test_flags_override_config_file(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"depth_source": "pc2dimg", "fusion": {"topk": 5}}))
    args = build_parser().parse_args(["run", "--config", str(tmp_path / "c.json"), "--topk", "2",
                                      "--cameras", "cam1,cam0", "--no-offsets", "--arm-length", "7"])
    cfg = config_from_args(args)
    assert cfg.depth_source == "pc2dimg"
    assert cfg.fusion.topk == 2
    assert cfg.cameras == ["cam1", "cam0"]
    assert cfg.apply_offsets is False
    assert cfg.cross.arm_length == 7


def test_bad_config_exits_with_error(synth_dir, tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"nope": 1}))
    assert main(["run", "--input", str(synth_dir), "--config", str(tmp_path / "c.json")]) == 2
    assert main(["run", "--input", str(synth_dir), "--cameras", "cam7"]) == 2
    assert main(["run", "--input", str(tmp_path), "--calibration", str(tmp_path / "missing.json")]) == 2


def test_inspect_dumps_filtered_proposals(synth_dir, tmp_path):
    out = tmp_path / "inspect.json"
    assert main(["inspect", "--input", str(synth_dir), "--frame", "1", "--skeleton",
                 str(synth_dir / "skeleton.json"), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["frame"] == 1 and len(doc["persons"]) == 2
    person = doc["persons"][0]
    assert len(person["raw"]) == len(person["filtered"]) == len(person["proposals"])


def test_bench_json(tmp_path, capsys):
    out = tmp_path / "bench.json"
    assert main(["bench", "--repetitions", "1", "--frames", "1", "--views", "2", "--persons", "1",
                 "--modes", "direct,pc2vmap", "--json", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert [r["mode"] for r in doc["modes"]] == ["direct", "pc2vmap"]
    assert "fusion" in capsys.readouterr().out
