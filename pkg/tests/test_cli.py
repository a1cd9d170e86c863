import json

import numpy as np
import pytest
from cli_workflow import run_cli, run_workflow

from liftmatch.cli import main
from liftmatch.formats import load_pfm, load_weights, read_report, save_pfm, weights_to_bytes
from liftmatch.lifting import LiftWeights


@pytest.fixture(scope="module")
def workflow(tmp_path_factory):
    d = tmp_path_factory.mktemp("wf")
    return d, run_workflow(d, threads=1)


def test_workflow_outputs(workflow):
    d, files = workflow
    assert {"pairs/checker_0000_a.pgm", "pairs/checker_0001.json", "depth/sphere_0000_normals.pfm",
            "lift/lift_0002.json", "pose/pose_0000.json", "w.lfw", "trace.csv", "kps.json", "n.pfm",
            "m.json", "m.ppm", "d.ppm", "h.json", "p.json"} <= set(files)
    kps = read_report(d / "kps.json")
    assert len(kps["keypoints"]) <= 50 and len(kps["descriptors"]) == len(kps["keypoints"])
    assert load_pfm(d / "n.pfm").shape == (32, 32, 3)
    trace = (d / "trace.csv").read_text().splitlines()
    assert trace[0] == "iteration,loss" and len(trace) == 21
    w = load_weights(d / "w.lfw")
    LiftWeights.from_dict(w)
    m = read_report(d / "m.json")
    assert m["schema"] == 1 and m["provenance"] == "lifted" and "corner_error" in m
    assert read_report(d / "m_raw.json")["provenance"] == "raw"
    assert files["m.ppm"] == files["d.ppm"]
    h = read_report(d / "h.json")
    assert len(h["pairs"]) == 2 and len(h["mha"]) == 3
    p = read_report(d / "p.json")
    assert len(p["auc"]) == 3 and p["auc"][0] > 0.5


def test_byte_identical_across_runs_and_threads(workflow, tmp_path):
    _, files = workflow
    again = run_workflow(tmp_path / "b", threads=8)
    assert set(again) == set(files)
    assert [k for k in files if files[k] != again[k]] == []


def test_usage_errors_exit_2(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["detect"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["nonsense"])
    assert exc.value.code == 2
    (tmp_path / "c.cfg").write_text("bogus_key = 1\n")
    rc = main(["--config", str(tmp_path / "c.cfg"), "normals", "--depth", "x.pfm", "--out", "y.pfm"])
    assert rc == 2
    assert main(["eval-homography", "--pairs", str(tmp_path), "--thresholds", "3,x", "--out", "o.json"]) in (2, 3)


def test_data_errors_exit_3(tmp_path):
    (tmp_path / "bad.pgm").write_bytes(b"P4\n2 2\n\x00\x00")
    assert main(["detect", "--image", str(tmp_path / "bad.pgm"), "--out", str(tmp_path / "o.json")]) == 3
    assert main(["detect", "--image", str(tmp_path / "missing.pgm"), "--out", str(tmp_path / "o.json")]) == 3
    d = np.ones((4, 4))
    d[2, 1] = 0
    save_pfm(tmp_path / "z.pfm", d)
    assert main(["normals", "--depth", str(tmp_path / "z.pfm"), "--out", str(tmp_path / "n.pfm")]) == 3
    (tmp_path / "t.lfw").write_bytes(weights_to_bytes({"x": np.ones(4)})[:-2])
    assert main(["detect", "--image", str(tmp_path / "bad.pgm"), "--weights", str(tmp_path / "t.lfw"),
                 "--out", str(tmp_path / "o.json")]) == 3
    assert main(["train-lift", "--data", str(tmp_path), "--out", str(tmp_path / "w.lfw")]) == 3


def test_estimation_failure_exit_4(tmp_path):
    run_cli(["synth", "--scene", "lift", "--count", "1", "--points", "16", "--out", "lift"], tmp_path)
    proc = run_cli(["train-lift", "--data", "lift", "--iters", "5", "--lr", "1e300", "--out", "w.lfw"],
                   tmp_path, check=False)
    assert proc.returncode == 4, proc.stderr
    assert "iteration" in proc.stderr


def test_config_precedence(tmp_path):
    run_cli(["synth", "--scene", "noise", "--count", "1", "--height", "64", "--width", "64", "--out", "p"],
            tmp_path)
    (tmp_path / "c.cfg").write_text("top_k = 10\n")
    run_cli(["--config", "c.cfg", "detect", "--image", "p/noise_0000_a.pgm", "--out", "a.json"], tmp_path)
    run_cli(["--config", "c.cfg", "detect", "--image", "p/noise_0000_a.pgm", "--top-k", "5", "--out", "b.json"],
            tmp_path)
    assert len(json.loads((tmp_path / "a.json").read_text())["keypoints"]) == 10
    assert len(json.loads((tmp_path / "b.json").read_text())["keypoints"]) == 5
