import json
import subprocess
import sys

import pytest

from sensorsentry.cli import run
from sensorsentry.core import read_image
from sensorsentry.labelgen import read_manifest
from sensorsentry.scenes import write_scenes

from conftest import SMALL


def call(capsys, *argv):
    code = run([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_no_arguments_is_usage_error(capsys):
    code, _, err = call(capsys)
    assert code == 1 and "usage" in err


def test_unknown_flag_and_missing_argument(capsys):
    assert call(capsys, "score", "--bogus")[0] == 1
    assert call(capsys, "score")[0] == 1
    assert call(capsys, "frobnicate")[0] == 1
    assert call(capsys, "score", "--severities", "fog=1.4")[0] == 1


def test_score(capsys):
    code, out, _ = call(capsys, "score", "--severities", "fog=0.4")
    rec = json.loads(out)
    assert code == 0
    assert rec["health"] == pytest.approx(0.5149, abs=5e-4)
    assert rec["regime"] == "Critical" and rec["severities"]["fog"] == 0.4


def test_score_logs_resolved_config(capsys):
    _, _, err = call(capsys, "score", "--severities", "noise=0.1", "--seed", "5")
    assert "resolved config" in err and '"seed": 5' in err and '"exponents"' in err


def test_seed_from_environment(capsys, monkeypatch):
    monkeypatch.setenv("SENSORSENTRY_SEED", "4242")
    _, _, err = call(capsys, "score", "--severities", "fog=0.1")
    assert '"seed": 4242' in err


def test_show_table(capsys):
    code, out, _ = call(capsys, "show-table")
    lines = out.strip().splitlines()
    assert code == 0 and len(lines) == 13
    assert lines[1].split()[0] == "fog" and lines[-1].split()[-1] == "1.8400"


def test_risk_table_override(capsys, tmp_path):
    from sensorsentry.core import default_risk_table

    cfg = default_risk_table().to_config().replace("fog = 1.3", "fog = 2.0")
    (tmp_path / "w.ini").write_text(cfg)
    _, out, _ = call(capsys, "score", "--severities", "fog=0.5", "--risk-table", tmp_path / "w.ini")
    assert json.loads(out)["health"] == pytest.approx(0.25)
    (tmp_path / "bad.ini").write_text("[modes]\n")
    assert call(capsys, "score", "--severities", "fog=0.5", "--risk-table", tmp_path / "bad.ini")[0] == 2


def test_degrade(capsys, micro_dataset, tmp_path):
    root, imgs, deps = micro_dataset
    args = ["degrade", "--image", imgs[0], "--depth", deps[0], "--apply", "fog=0.5,noise=0.2",
            "--out", tmp_path / "o.png", "--mask-out", tmp_path / "m.png", "--seed", 1]
    assert call(capsys, *args)[0] == 0
    first = (tmp_path / "o.png").read_bytes()
    assert call(capsys, *args)[0] == 0
    assert (tmp_path / "o.png").read_bytes() == first
    assert (tmp_path / "m.png").exists() and (tmp_path / "run_config.json").exists()
    assert read_image(tmp_path / "o.png").shape == (*SMALL, 3)


def test_degrade_without_depth_is_data_error(capsys, micro_dataset, tmp_path):
    _, imgs, _ = micro_dataset
    code, _, err = call(capsys, "degrade", "--image", imgs[0], "--apply", "fog=0.5", "--out", tmp_path / "o.png")
    assert code == 2 and "depth" in err


def test_missing_input_is_data_error(capsys, tmp_path):
    assert call(capsys, "gen-dataset", "--src", tmp_path / "nope", "--out", tmp_path / "o")[0] == 2


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory, micro_dataset):
    """Run gen-dataset, sweep, calibrate, predict-manifest and evaluate once."""
    root, _, _ = micro_dataset
    work = tmp_path_factory.mktemp("cli")
    codes = {}
    codes["gen"] = run(["gen-dataset", "--src", str(root / "images"), "--depth", str(root / "depth"),
                        "--out", str(work / "ds"), "--count", "8", "--seed", "3", "--two-mode-frac", "0.5"])
    codes["sweep"] = run(["sweep", "--src", str(root / "images"), "--depth", str(root / "depth"),
                          "--out", str(work / "sw"), "--modes", "fog,vignetting,occlusion", "--grid", "0,0.5,1"])
    cal_root = work / "calib_src"
    write_scenes(cal_root, 10, seed=8, size=SMALL)
    codes["calibrate"] = run(["calibrate", "--src", str(cal_root / "images"), "--depth", str(cal_root / "depth"),
                              "--out", str(work / "cal" / "table.txt"), "--grid", "0,0.5,1", "--seed", "2"])
    codes["predict"] = run(["predict-manifest", "--calib", str(work / "cal" / "table.txt"),
                            "--manifest", str(work / "sw" / "manifest.jsonl"), "--out", str(work / "pred" / "p.jsonl")])
    det = "mode,severity,map\n" + "".join(
        f"{m},{s},{v}\n" for m in ("fog", "vignetting", "lens_occlusion") for s, v in ((0, 0.6), (0.5, 0.55), (1, 0.2))
    )
    (work / "det.csv").write_text(det)
    codes["evaluate"] = run(["evaluate", "--manifest", str(work / "sw" / "manifest.jsonl"),
                             "--pred", str(work / "pred" / "p.jsonl"), "--detector", str(work / "det.csv"),
                             "--out", str(work / "report")])
    return work, codes


def test_pipeline_exit_codes(pipeline):
    _, codes = pipeline
    assert codes == {"gen": 0, "sweep": 0, "calibrate": 0, "predict": 0, "evaluate": 0}


def test_gen_dataset_outputs(pipeline):
    work, _ = pipeline
    recs = read_manifest(work / "ds" / "manifest.jsonl")
    assert len(recs) == 8
    cfg = json.loads((work / "ds" / "run_config.json").read_text())
    assert cfg["seed"] == 3 and cfg["clean_frac"] == 0.15 and cfg["two_mode_frac"] == 0.5


def test_sweep_outputs(pipeline):
    work, _ = pipeline
    recs = read_manifest(work / "sw" / "manifest.jsonl")
    assert len(recs) == 4 * 3 * 3


def test_predictions_and_maps(pipeline):
    work, _ = pipeline
    rows = [json.loads(ln) for ln in (work / "pred" / "p.jsonl").read_text().splitlines()]
    assert len(rows) == 36
    assert set(rows[0]) == {"image_id", "presence", "severities", "health", "uncertainty_path"}
    assert (work / "pred" / rows[0]["uncertainty_path"]).exists()


def test_evaluate_report(pipeline):
    work, _ = pipeline
    rep = work / "report"
    for name in ("summary.txt", "metrics.csv", "lead_time.csv", "threshold_sweep.csv", "health_curves.csv",
                 "run_config.json"):
        assert (rep / name).exists(), name
    assert "not reproduced here" in (rep / "summary.txt").read_text()


def test_monitor_command(capsys, pipeline, micro_dataset, tmp_path):
    work, _ = pipeline
    _, imgs, _ = micro_dataset
    code, out, _ = call(capsys, "monitor", "--calib", work / "cal" / "table.txt", "--image", imgs[0],
                        "--uncertainty-out", tmp_path / "u.png")
    rec = json.loads(out)
    assert code == 0 and len(rec["severities"]) == 12 and 0 <= rec["health"] <= 1
    assert (tmp_path / "u.png").exists()


def test_calibrate_too_few_images(capsys, micro_dataset, tmp_path):
    root, _, _ = micro_dataset
    code = call(capsys, "calibrate", "--src", root / "images", "--depth", root / "depth", "--out", tmp_path / "t.txt")[0]
    assert code == 2


def test_monitor_bad_calibration(capsys, micro_dataset, tmp_path):
    _, imgs, _ = micro_dataset
    (tmp_path / "t.txt").write_text("garbage\n")
    assert call(capsys, "monitor", "--calib", tmp_path / "t.txt", "--image", imgs[0])[0] == 2


def test_evaluate_with_mismatched_ids(capsys, pipeline, tmp_path):
    work, _ = pipeline
    (tmp_path / "p.jsonl").write_text('{"image_id":"x","presence":[0],"severities":[0],"health":1}\n')
    code = call(capsys, "evaluate", "--manifest", work / "sw" / "manifest.jsonl", "--pred", tmp_path / "p.jsonl",
                "--out", tmp_path / "r")[0]
    assert code == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "sensorsentry", "score", "--severities", "occlusion=1"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and json.loads(res.stdout)["health"] == 0.0
