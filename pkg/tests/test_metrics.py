"""Classification and displacement metrics against brute-force oracles."""

import json

import numpy as np
import pytest

from kpx.metrics import (
    EvalReport,
    average_precision,
    build_report,
    classification_metrics,
    min_ade,
    min_fde,
)


def _brute_force_ap(scores, labels):
    n_pos = int(np.sum(labels == 1))
    ap, prev_recall = 0.0, 0.0
    for t in sorted(np.unique(scores), reverse=True):
        pred = scores >= t
        tp = int(np.sum(pred & (labels == 1)))
        fp = int(np.sum(pred & (labels == 0)))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def test_perfect_separation():
    m = classification_metrics([1.0, 1.0, 0.0, 0.0], [1, 1, 0, 0])
    assert m["acc"] == m["f1"] == m["precision"] == m["recall"] == m["auc_pr"] == 1.0


def test_hand_counted_confusion_table():
    m = classification_metrics([0.9, 0.8, 0.3], [1, 0, 1])
    assert m["precision"] == 0.5
    assert m["recall"] == 0.5
    assert m["f1"] == 0.5
    assert (m["tp"], m["fp"], m["tn"], m["fn"]) == (1, 1, 0, 1)


def test_degenerate_labels_flagged():
    m1 = classification_metrics([0.9, 0.8], [1, 1])
    m0 = classification_metrics([0.9, 0.8], [0, 0])
    assert m1["degenerate_labels"] and m0["degenerate_labels"]
    assert m1["auc_pr"] == 1.0 and m0["auc_pr"] == 0.0


@pytest.mark.parametrize("seed", range(10))
def test_average_precision_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 50))
    scores = np.round(rng.uniform(size=n), 2)  # duplicates exercise tie handling
    labels = rng.integers(0, 2, size=n)
    if len(np.unique(labels)) < 2:
        labels[0], labels[1] = 0, 1
    assert abs(average_precision(scores, labels) - _brute_force_ap(scores, labels)) < 1e-12


def test_classification_input_validation():
    with pytest.raises(ValueError):
        classification_metrics([], [])
    with pytest.raises(ValueError):
        classification_metrics([0.5], [2])
    with pytest.raises(ValueError):
        classification_metrics([1.5], [1])
    with pytest.raises(ValueError):
        classification_metrics([0.5, 0.5], [1])


def test_exact_hypothesis_gives_zero_errors():
    gt = np.random.default_rng(1).normal(size=(8, 2))
    hyp = np.stack([gt, gt + 5.0])
    assert min_ade(hyp, gt) == 0.0
    assert min_fde(hyp, gt) == 0.0


def test_min_fde_hand_case():
    gt = np.zeros((2, 2))
    gt[-1] = [4.0, 0.0]
    hyp = np.zeros((3, 2, 2))
    hyp[0, -1] = [3.0, 0.0]
    hyp[1, -1] = [4.0, 1.0]
    hyp[2, -1] = [0.0, 0.0]
    assert min_fde(hyp, gt) == 1.0


@pytest.mark.parametrize("seed", range(20))
def test_displacement_metrics_match_brute_force(seed):
    rng = np.random.default_rng(100 + seed)
    k, t = int(rng.integers(1, 7)), int(rng.integers(2, 10))
    hyp = rng.normal(size=(k, t, 2))
    gt = rng.normal(size=(t, 2))
    ades = [np.mean([np.linalg.norm(hyp[i, s] - gt[s]) for s in range(t)]) for i in range(k)]
    fdes = [np.linalg.norm(hyp[i, -1] - gt[-1]) for i in range(k)]
    assert min_ade(hyp, gt) == min(ades)
    assert abs(min_fde(hyp, gt) - min(fdes)) < 1e-15


def test_min_ade_bounded_by_any_single_hypothesis():
    rng = np.random.default_rng(2)
    hyp = rng.normal(size=(6, 8, 2))
    gt = rng.normal(size=(8, 2))
    for i in range(6):
        assert min_ade(hyp, gt) <= min_ade(hyp[i:i + 1], gt) + 1e-15


def test_displacement_shape_validation():
    with pytest.raises(ValueError):
        min_ade(np.zeros((2, 8, 3)), np.zeros((8, 2)))
    with pytest.raises(ValueError):
        min_fde(np.zeros((2, 8, 2)), np.zeros((6, 2)))


def test_report_serialization(tmp_path):
    rep = build_report([0.9, 0.2, 0.8], [1, 0, 1], ades=[0.5, 0.3, 0.1], fdes=[1.0, 0.2, 0.4])
    assert isinstance(rep, EvalReport)
    path = tmp_path / "report.json"
    rep.to_json(path)
    loaded = json.loads(path.read_text())
    assert loaded["acc"] == 1.0
    assert abs(loaded["min_ade_k"] - 0.3) < 1e-12
    csv = rep.to_csv_row().splitlines()
    assert csv[0].startswith("acc,") and len(csv) == 2
