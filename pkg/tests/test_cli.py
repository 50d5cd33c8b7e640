"""End-to-end command-line pipeline: exit codes, artifact manifests and the
SVG figure export."""

import hashlib
import json
import xml.etree.ElementTree as ET

import pytest

from kpx.cli import main
from kpx.constants import NUM_HYPOTHESES
from kpx.scenario import read_dataset


def _sha256(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--n", "12", "--seed", "7", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def train_dir(tmp_path_factory, data_dir):
    out = tmp_path_factory.mktemp("train")
    cfg = tmp_path_factory.mktemp("cfg") / "config.json"
    cfg.write_text(json.dumps({"epochs": 1, "batch_size": 4, "seed": 7, "val_fraction": 0.0}))
    code = main(["train", "--data", str(data_dir / "dataset.ndjson"),
                 "--config", str(cfg), "--out", str(out)])
    assert code == 0
    return out


def test_gen_data_outputs_and_manifest(data_dir):
    dataset = data_dir / "dataset.ndjson"
    assert dataset.exists()
    scenes, _, _ = read_dataset(dataset)
    assert len(scenes) == 12
    manifest = json.loads((data_dir / "manifest.json").read_text())
    assert manifest["command"] == "gen-data"
    assert manifest["seed"] == 7
    assert manifest["outputs"][str(dataset)] == _sha256(dataset)


def test_gen_data_is_reproducible(tmp_path, data_dir):
    again = tmp_path / "again"
    assert main(["gen-data", "--n", "12", "--seed", "7", "--out", str(again)]) == 0
    assert _sha256(again / "dataset.ndjson") == _sha256(data_dir / "dataset.ndjson")


def test_gen_data_seed_from_environment(tmp_path, monkeypatch, data_dir):
    monkeypatch.setenv("KPX_SEED", "7")
    envd = tmp_path / "env"
    assert main(["gen-data", "--n", "12", "--out", str(envd)]) == 0
    assert _sha256(envd / "dataset.ndjson") == _sha256(data_dir / "dataset.ndjson")


def test_gen_data_single_kind_mix(tmp_path):
    out = tmp_path / "allcross"
    code = main(["gen-data", "--n", "6", "--seed", "1", "--mix", "cross_walkway=1.0",
                 "--out", str(out)])
    assert code == 0
    scenes, _, _ = read_dataset(out / "dataset.ndjson")
    assert all(s.crossing_label == 1 for s in scenes)


def test_bad_mix_is_usage_error(tmp_path):
    assert main(["gen-data", "--n", "4", "--mix", "cross_walkway=0.4",
                 "--out", str(tmp_path / "x")]) == 2
    assert main(["gen-data", "--n", "4", "--mix", "not_a_kind=1.0",
                 "--out", str(tmp_path / "y")]) == 2


def test_missing_data_file_is_io_error(tmp_path):
    assert main(["train", "--data", str(tmp_path / "nope.ndjson"),
                 "--out", str(tmp_path / "out")]) == 3


def test_train_artifacts(train_dir):
    for name in ("checkpoint.kpx", "trainlog.csv", "config.json", "manifest.json"):
        assert (train_dir / name).exists(), name
    manifest = json.loads((train_dir / "manifest.json").read_text())
    ckpt = train_dir / "checkpoint.kpx"
    assert manifest["outputs"][str(ckpt)] == _sha256(ckpt)
    assert ckpt.read_bytes()[:4] == b"KPXF"


def test_eval_writes_report(tmp_path, data_dir, train_dir):
    report = tmp_path / "report"
    code = main(["eval", "--data", str(data_dir / "dataset.ndjson"),
                 "--ckpt", str(train_dir / "checkpoint.kpx"),
                 "--config", str(train_dir / "config.json"),
                 "--report", str(report)])
    assert code == 0
    rep = json.loads((report / "report.json").read_text())
    for key in ("acc", "auc_pr", "min_ade_k", "min_fde_k"):
        assert key in rep
    assert rep["n_examples"] == 12
    assert (report / "report.csv").read_text().startswith("acc,")


def test_eval_config_mismatch_is_incompatibility(tmp_path, data_dir, train_dir):
    wrong = tmp_path / "wrong.json"
    wrong.write_text(json.dumps({"epochs": 2, "batch_size": 4, "seed": 7, "val_fraction": 0.0}))
    code = main(["eval", "--data", str(data_dir / "dataset.ndjson"),
                 "--ckpt", str(train_dir / "checkpoint.kpx"),
                 "--config", str(wrong), "--report", str(tmp_path / "rep")])
    assert code == 4


def test_corrupt_checkpoint_is_incompatibility(tmp_path, data_dir, train_dir):
    bad = tmp_path / "bad.kpx"
    blob = bytearray((train_dir / "checkpoint.kpx").read_bytes())
    blob[:4] = b"XXXX"
    bad.write_bytes(bytes(blob))
    code = main(["eval", "--data", str(data_dir / "dataset.ndjson"),
                 "--ckpt", str(bad), "--report", str(tmp_path / "rep")])
    assert code == 4


def test_infer_writes_bounded_hypotheses(tmp_path, data_dir, train_dir):
    out = tmp_path / "infer"
    code = main(["infer", "--data", str(data_dir / "dataset.ndjson"),
                 "--ckpt", str(train_dir / "checkpoint.kpx"), "--out", str(out)])
    assert code == 0
    lines = (out / "predictions.ndjson").read_text().splitlines()
    assert len(lines) == 12
    for line in lines:
        rec = json.loads(line)
        assert 0.0 <= rec["crossing_probability"] <= 1.0
        assert 1 <= len(rec["hypotheses"]) <= NUM_HYPOTHESES
        for h in rec["hypotheses"]:
            assert len(h["trajectory"]) == 8


def test_plot_emits_parseable_svg(tmp_path, data_dir, train_dir):
    out = tmp_path / "figs"
    code = main(["plot", "--data", str(data_dir / "dataset.ndjson"),
                 "--ckpt", str(train_dir / "checkpoint.kpx"),
                 "--scene-index", "0", "--out", str(out)])
    assert code == 0
    svg_path = out / "scene_0.svg"
    root = ET.fromstring(svg_path.read_text())
    ns = "{http://www.w3.org/2000/svg}"
    by_class: dict = {}
    for path in root.iter(f"{ns}path"):
        by_class.setdefault(path.get("class"), []).append(path)
    assert 1 <= len(by_class["hypothesis"]) <= NUM_HYPOTHESES
    assert by_class["history"] and by_class["ground-truth"] and by_class["skeleton"]
    # stroke width encodes the hypothesis score
    widths = [float(p.get("stroke-width")) for p in by_class["hypothesis"]]
    assert all(w >= 0.5 for w in widths)


def test_plot_scene_index_out_of_range(tmp_path, data_dir, train_dir):
    code = main(["plot", "--data", str(data_dir / "dataset.ndjson"),
                 "--ckpt", str(train_dir / "checkpoint.kpx"),
                 "--scene-index", "99", "--out", str(tmp_path / "figs")])
    assert code == 2
