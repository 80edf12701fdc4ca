import json
import os

import numpy as np
import pytest

from pipeline import check, run
from shadecal import synth
from shadecal.dataset import load_regions, read_mask_png, save_dataset, write_json, write_png


@pytest.fixture(scope="module")
def chart_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("chart")
    check("synth", "chart", "--seed", 1, "--out", d)
    return d


def _calibrate(chart_dir, out, *extra):
    return run("calibrate", chart_dir / "chart.png", "--annotation", chart_dir / "chart_annotation.json",
               "--references", chart_dir / "references.csv", "--out", out, *extra)


def test_mask(tmp_path):
    write_png(tmp_path / "skin.png", np.full((6, 5, 3), (180, 120, 90), np.uint8))
    write_png(tmp_path / "green.png", np.full((6, 5, 3), (0, 255, 0), np.uint8))
    assert run("mask", tmp_path / "skin.png", "--out", tmp_path / "m.png")[0] == 0
    assert read_mask_png(tmp_path / "m.png").all()
    side = json.loads((tmp_path / "m.json").read_text())
    assert side["pixel_count"] == 30 and side["mean_rgb"] == [180, 120, 90]
    assert side["config"]["white_point"] == "96.42,100,82.52"
    assert run("mask", tmp_path / "green.png", "--out", tmp_path / "g.png")[0] == 2
    assert run("mask", tmp_path / "missing.png", "--out", tmp_path / "x.png")[0] == 1


def test_calibrate(chart_dir, tmp_path):
    code, out, _ = _calibrate(chart_dir, tmp_path / "p.json")
    assert code == 0
    report = json.loads((tmp_path / "p.report.json").read_text())
    assert report["mean_delta_e"] <= 0.1 and not report["outlier"]
    assert len(report["per_patch"]) == 35
    assert (tmp_path / "p.report.delta_e.csv").read_text().count("\n") == 36
    profile = json.loads((tmp_path / "p.json").read_text())
    assert profile["format"] == "shadecal-profile/1"
    assert all(len(s["matrix"]) == 33 for s in profile["sets"])


def test_calibrate_skin_centroid_flag(chart_dir, tmp_path):
    assert _calibrate(chart_dir, tmp_path / "p.json", "--skin-centroid", "150,110,90")[0] == 0
    assert json.loads((tmp_path / "p.json").read_text())["grouping_mode"] == "skin+kmeans2"
    assert _calibrate(chart_dir, tmp_path / "q.json", "--skin-centroid", "150,110")[0] == 1


def test_calibrate_missing_reference(chart_dir, tmp_path):
    lines = (chart_dir / "references.csv").read_text().splitlines()
    (tmp_path / "refs.csv").write_text("\n".join(l for l in lines if not l.startswith("20,")) + "\n")
    code = run("calibrate", chart_dir / "chart.png", "--annotation", chart_dir / "chart_annotation.json",
               "--references", tmp_path / "refs.csv", "--out", tmp_path / "p.json")[0]
    assert code == 1
    assert not (tmp_path / "p.json").exists()


def test_calibrate_unparseable(chart_dir, tmp_path):
    (tmp_path / "ann.json").write_text("{not json")
    code = run("calibrate", chart_dir / "chart.png", "--annotation", tmp_path / "ann.json",
               "--references", chart_dir / "references.csv", "--out", tmp_path / "p.json")[0]
    assert code == 1


def test_extract_roles_and_idempotence(chart_dir, tmp_path):
    _calibrate(chart_dir, tmp_path / "p.json")
    img = tmp_path / "flat.png"
    write_png(img, np.full((10, 10, 3), (150, 110, 95), np.uint8))
    jobs = [("bare_skin", ["--subject", "S1"]), ("foundation_swatch", ["--shade", "130"]),
            ("skin_with_foundation", ["--subject", "S1", "--shade", "130"])]
    for _ in range(2):
        for role, extra in jobs:
            check("extract", img, "--profile", tmp_path / "p.json", "--role", role, "--rect", "0,0,10,10",
                  "--source-id", role, "--out", tmp_path / "r.csv", *extra)
    regions = load_regions(tmp_path / "r.csv")
    assert len(regions) == 3
    assert len({tuple(r.lab) for r in regions}) == 1


def test_extract_errors(chart_dir, tmp_path):
    _calibrate(chart_dir, tmp_path / "p.json")
    img = tmp_path / "flat.png"
    write_png(img, np.full((10, 10, 3), (0, 255, 0), np.uint8))
    base = ["extract", img, "--profile", tmp_path / "p.json", "--role", "bare_skin", "--subject", "S1",
            "--out", tmp_path / "r.csv"]
    assert run(*base, "--mask")[0] == 2
    assert run(*base, "--rect", "50,50,5,5")[0] == 2
    assert run(*base, "--rect", "0,0,-1,5")[0] == 1
    assert run(*base)[0] == 1
    (tmp_path / "bad.json").write_text(json.dumps({"format": "nope"}))
    assert run("extract", img, "--profile", tmp_path / "bad.json", "--role", "bare_skin", "--subject", "S1",
               "--rect", "0,0,2,2", "--out", tmp_path / "r.csv")[0] == 1


def test_train_loocv_predict(tmp_path):
    rows, *_ = synth.synth_prediction_dataset(19, 63, noise_sigma=0.0, seed=1)
    save_dataset(tmp_path / "d.csv", rows)
    code, out, _ = run("loocv", tmp_path / "d.csv", "--model", "linear", "--out", tmp_path / "l.json")
    assert code == 0 and "R2" in out
    report = json.loads((tmp_path / "l.json").read_text())
    assert report["r2"] >= 1 - 1e-9 and report["n"] == 63
    assert (tmp_path / "l.residuals.csv").read_text().count("\n") == 64
    check("train", tmp_path / "d.csv", "--model", "linear", "--out", tmp_path / "m.json")
    out = check("predict", "--model-file", tmp_path / "m.json", "--input", ",".join(map(str, rows[0].input)))
    np.testing.assert_allclose([float(v) for v in out.split()], rows[0].target, atol=1e-5)


def test_predict_constant_model(tmp_path):
    rows, *_ = synth.synth_prediction_dataset(5, 10, noise_sigma=0.0, seed=2, constant=True)
    save_dataset(tmp_path / "d.csv", rows)
    check("train", tmp_path / "d.csv", "--model", "mean", "--out", tmp_path / "m.json")
    a = check("predict", "--model-file", tmp_path / "m.json", "--input", "1,2,3,4,5,6")
    b = check("predict", "--model-file", tmp_path / "m.json", "--input", "60,10,20,70,9,18")
    assert a == b and [float(v) for v in a.split()] == [55.0, 12.0, 18.0]
    assert run("predict", "--model-file", tmp_path / "m.json", "--input", "1,2,3")[0] == 1


def test_short_and_unpaired_datasets(tmp_path):
    rows, *_ = synth.synth_prediction_dataset(2, 2, seed=3)
    save_dataset(tmp_path / "d.csv", rows)
    assert run("loocv", tmp_path / "d.csv", "--out", tmp_path / "l.json")[0] == 2
    (tmp_path / "r.csv").write_text("source_id,subject_id,role,shade,L,a,b,pixel_count,outlier\n"
                                    "w,S1,skin_with_foundation,130,60,10,15,4,0\n")
    assert run("loocv", tmp_path / "r.csv", "--out", tmp_path / "l.json")[0] == 2
    assert run("train", tmp_path / "r.csv", "--out", tmp_path / "m.json")[0] == 2


def test_svr_flags_and_config_precedence(tmp_path):
    rows, *_ = synth.synth_prediction_dataset(5, 12, seed=4)
    save_dataset(tmp_path / "d.csv", rows)
    write_json(tmp_path / "cfg.json", {"svr_c": 5.0, "svr-eps": 0.3, "model": "svr"})
    check("train", tmp_path / "d.csv", "--config", tmp_path / "cfg.json", "--svr-c", "2.5",
          "--out", tmp_path / "m.json")
    saved = json.loads((tmp_path / "m.json").read_text())
    assert saved["kind"] == "svr"
    assert saved["params"]["C"] == 2.5 and saved["params"]["epsilon"] == 0.3
    assert saved["config"]["svr_c"] == 2.5 and saved["config"]["svr_eps"] == 0.3
    assert run("train", tmp_path / "d.csv", "--model", "svr", "--svr-c", "0", "--out", tmp_path / "x.json")[0] == 1
    assert run("train", tmp_path / "d.csv", "--config", tmp_path / "none.json", "--out", tmp_path / "x.json")[0] == 1


def test_white_point_override(chart_dir, tmp_path):
    code, _, err = _calibrate(chart_dir, tmp_path / "p.json", "--white-point", "95.047,100,108.883")
    assert code in (0, 3)
    assert json.loads(err.splitlines()[0])["config"]["white_point"] == "95.047,100,108.883"
    assert _calibrate(chart_dir, tmp_path / "q.json", "--white-point", "1,2")[0] == 1


def test_synth_params(tmp_path):
    assert run("synth", "chart", "--gamma", "6", "--out", tmp_path / "a")[0] == 1
    assert run("synth", "chart", "--gamma", "0.1,2,2", "--out", tmp_path / "b")[0] == 1
    check("synth", "chart", "--gamma", "2.2", "--seed", 3, "--out", tmp_path / "c")
    cam = json.loads((tmp_path / "c" / "camera.json").read_text())
    assert [e["gamma"] for e in cam["encode"]] == [2.2] * 3
    assert cam["rng"] == synth.RNG_NAME


def test_synth_chart_feeds_calibrate(tmp_path):
    check("synth", "chart", "--seed", 9, "--gamma", "1.9,2.1,2.3", "--out", tmp_path)
    assert _calibrate(tmp_path, tmp_path / "p.json")[0] == 0


def test_synth_is_byte_identical(tmp_path):
    snapshots = []
    for _ in range(2):
        check("synth", "dataset", "--seed", 4, "--out", tmp_path)
        snapshots.append({name: (tmp_path / name).read_bytes() for name in sorted(os.listdir(tmp_path))})
    assert snapshots[0] == snapshots[1]


def test_bad_usage():
    assert run("calibrate")[0] == 1
    assert run("frobnicate")[0] == 1
