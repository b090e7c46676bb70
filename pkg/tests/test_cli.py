import csv
import json
import subprocess
import sys

import numpy as np
import pytest

import jdcv.cli as cli
from jdcv.errors import FoldingError
from jdcv.field_core import LabelVolume, LatticeGeometry, ScalarField, read_volume, write_volume
from jdcv.phantom import brain_phantom


@pytest.fixture
def t1_file(tmp_path):
    images, labels = brain_phantom(LatticeGeometry((24, 24, 6), (1.0, 1.0, 2.0)), seed=5)
    path = tmp_path / "t1.nii.gz"
    write_volume(images["T1"], path)
    write_volume(labels, tmp_path / "labels.nii.gz")
    return path


def test_preprocess_writes_output_and_provenance(tmp_path, t1_file):
    out = tmp_path / "pre"
    assert cli.main(["preprocess", str(t1_file), "--sigma", "1.5", "--clahe-tiles", "4", "--out", str(out)]) == 0
    assert (out / "t1_pre.nii.gz").is_file()
    prov = json.loads((out / "provenance.json").read_text())
    assert prov["config"]["gaussian_sigma"] == 1.5 and prov["config"]["clahe_tiles"] == 4
    assert read_volume(out / "t1_pre.nii.gz").geometry == read_volume(t1_file).geometry


def test_preprocess_rerun_byte_identical(tmp_path, t1_file):
    for name in ("a", "b"):
        assert cli.main(["preprocess", str(t1_file), "--out", str(tmp_path / name)]) == 0
    for f in ("t1_pre.nii.gz", "provenance.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_missing_file_names_path(tmp_path, capsys):
    missing = tmp_path / "nothere.nii"
    assert cli.main(["preprocess", str(missing), "--out", str(tmp_path / "o")]) != 0
    assert str(missing) in capsys.readouterr().err


def test_degenerate_input_names_file(tmp_path, capsys):
    g = LatticeGeometry((8, 8, 4))
    flat = tmp_path / "flat.nii"
    write_volume(ScalarField(g, np.ones(g.dims)), flat)
    assert cli.main(["preprocess", str(flat), "--out", str(tmp_path / "o")]) == 1
    assert "flat.nii" in capsys.readouterr().err


def test_extract_constant_volume(tmp_path):
    g = LatticeGeometry((10, 9, 6), (1.0, 1.0, 2.0), (5.0, 0.0, 0.0))
    src = tmp_path / "c.nii.gz"
    write_volume(ScalarField(g, np.full(g.dims, 3.0)), src)
    out = tmp_path / "ex"
    assert cli.main(["extract", str(src), "--steps", "10", "--out", str(out)]) == 0
    jd = read_volume(out / "jd.nii.gz")
    assert jd.geometry == g
    np.testing.assert_allclose(jd.values, 1.0, atol=1e-6)
    np.testing.assert_allclose(read_volume(out / "cv.nii.gz").values, 0.0, atol=1e-6)
    lines = (out / "grid.txt").read_text().splitlines()
    assert lines[0] == "# dims 10 9 6" and len(lines) == 2 + 10 * 9 * 6


def test_extract_demo(tmp_path):
    out = tmp_path / "demo"
    args = ["extract", "--demo", "--demo-size", "33", "--alpha", "1", "--beta", "2", "--floor", "0.2",
            "--integrator", "euler", "--steps", "50", "--out", str(out)]
    assert cli.main(args) == 0
    jd = read_volume(out / "jd.nii.gz")
    assert jd.geometry.dims == (33, 33)
    assert jd.values.min() < 1 < jd.values.max()
    manifest = json.loads((out / "features.json").read_text())
    assert manifest["monitor"] == {"alpha": 1.0, "beta": 2.0, "floor": 0.2}


def test_extract_folding_exit(tmp_path, t1_file, monkeypatch, capsys):
    def fold(*a, **k):
        raise FoldingError((1, 2, 3), -0.25)

    monkeypatch.setattr(cli, "extract_jd_cv", fold)
    assert cli.main(["extract", str(t1_file), "--out", str(tmp_path / "x")]) == cli.EXIT_FOLDING
    assert "(1, 2, 3)" in capsys.readouterr().err


def _stack_inputs(tmp_path, dims=(24, 24, 6)):
    g = LatticeGeometry(dims)
    paths = {}
    for k, name in enumerate(["t1", "t1ir", "flair", "jd", "cv"]):
        p = tmp_path / f"{name}.nii"
        write_volume(ScalarField(g, np.full(dims, float(k))), p)
        paths[name] = str(p)
    return paths


def test_stack_three_plus_jd(tmp_path):
    p = _stack_inputs(tmp_path)
    out = tmp_path / "st"
    args = ["stack", "--arm", "three+jd", "--t1", p["t1"], "--t1ir", p["t1ir"], "--flair", p["flair"], "--jd", p["jd"], "--out", str(out)]
    assert cli.main(args) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert [c["name"] for c in manifest["channels"]] == ["T1", "T1-IR", "FLAIR", "JD"]


def test_stack_single(tmp_path):
    p = _stack_inputs(tmp_path)
    out = tmp_path / "st"
    assert cli.main(["stack", "--arm", "single", "--t1", p["t1"], "--out", str(out)]) == 0
    assert len(json.loads((out / "manifest.json").read_text())["channels"]) == 1


def test_stack_missing_modality(tmp_path, capsys):
    p = _stack_inputs(tmp_path)
    assert cli.main(["stack", "--arm", "three", "--t1", p["t1"], "--out", str(tmp_path / "st")]) == 1
    assert "T1-IR" in capsys.readouterr().err


def test_stack_tiles(tmp_path):
    p = _stack_inputs(tmp_path, (24, 24, 6))
    out = tmp_path / "st"
    args = ["stack", "--arm", "single", "--t1", p["t1"], "--tile-size", "8", "--tile-stride", "8", "--out", str(out)]
    assert cli.main(args) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["tiles"]["count"] == 9
    assert len(list((out / "tiles").glob("tile*_manifest.json"))) == 9


def test_eval_perfect_and_undefined(tmp_path, t1_file):
    labels = tmp_path / "labels.nii.gz"
    out = tmp_path / "ev"
    assert cli.main(["eval", str(labels), str(labels), "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "report.csv")))
    assert [r["class"] for r in rows] == ["CSF", "GM", "WM", "average"]
    assert all(float(r["dsc"]) == 1.0 and float(r["hd_mm"]) == 0.0 for r in rows)
    table = json.loads((out / "report.json").read_text())["table"]
    assert list(table)[:3] == ["Dice CSF", "Dice GM", "Dice WM"]

    lab = read_volume(labels, labels=True)
    arr = np.array(lab.labels)
    arr[arr == 1] = 2
    pred = tmp_path / "pred.nii.gz"
    write_volume(LabelVolume(lab.geometry, arr), pred)
    assert cli.main(["eval", str(pred), str(labels), "--out", str(out)]) == 0
    rows = {r["class"]: r for r in csv.DictReader(open(out / "report.csv"))}
    assert rows["CSF"]["hd_mm"] == "undefined"


def test_eval_geometry_mismatch(tmp_path, t1_file):
    other = tmp_path / "other.nii"
    g = LatticeGeometry((24, 24, 5))
    write_volume(LabelVolume(g, np.zeros(g.dims, np.uint8)), other)
    assert cli.main(["eval", str(other), str(tmp_path / "labels.nii.gz"), "--out", str(tmp_path / "ev")]) != 0


def test_recover_amplitude_zero(tmp_path, capsys):
    out = tmp_path / "rec"
    assert cli.main(["recover", "--size", "9", "--amplitude", "0", "--out", str(out)]) == 0
    summary = json.loads((out / "recovery.json").read_text())
    assert summary["mean_error_cells"] == 0.0 and summary["max_error_cells"] == 0.0


def test_recover_loss_csv(tmp_path, capsys):
    out = tmp_path / "rec"
    assert cli.main(["recover", "--size", "17", "--seed", "3", "--lambda", "0.001", "--iters", "300", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "loss.csv")))
    assert list(rows[0]) == ["iter", "loss", "grad_norm"]
    loss = np.array([float(r["loss"]) for r in rows])
    assert np.all(np.diff(loss) <= 0)
    assert "mean node error" in capsys.readouterr().out


def test_phantom_command(tmp_path):
    out = tmp_path / "ph"
    assert cli.main(["phantom", "--dims", "16", "16", "4", "--seed", "2", "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["flair.nii.gz", "labels.nii.gz", "t1.nii.gz", "t1ir.nii.gz"]


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "jdcv.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("preprocess", "extract", "stack", "eval", "recover", "phantom"):
        assert cmd in res.stdout


def test_unknown_arm_rejected(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["stack", "--arm", "bogus", "--out", "x"])
    assert info.value.code != 0
