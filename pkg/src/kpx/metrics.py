"""Evaluation metrics: binary classification at threshold 0.5, average
precision, and minimum displacement errors over trajectory hypotheses."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class EvalReport:
    acc: float
    auc_pr: float
    f1: float
    precision: float
    recall: float
    min_ade_k: float
    min_fde_k: float
    tp: int
    fp: int
    tn: int
    fn: int
    n_examples: int
    degenerate_labels: bool = False

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_csv_row(self) -> str:
        cols = ["acc", "auc_pr", "f1", "precision", "recall", "min_ade_k", "min_fde_k", "n_examples"]
        header = ",".join(cols)
        row = ",".join(f"{getattr(self, c):.6g}" for c in cols)
        return header + "\n" + row + "\n"


def classification_metrics(scores, labels, threshold: float = 0.5) -> dict:
    """Accuracy / F1 / precision / recall at the threshold plus average
    precision (step-interpolated area under the PR curve)."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=int).reshape(-1)
    if s.size == 0:
        raise ValueError("empty input")
    if s.size != y.size:
        raise ValueError("scores and labels length mismatch")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be 0/1")
    if np.any(s < 0) or np.any(s > 1):
        raise ValueError("scores must lie in [0, 1]")

    pred = s >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    tn = int(np.sum(~pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    acc = (tp + tn) / s.size
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0

    degenerate = len(np.unique(y)) < 2
    if degenerate:
        auc_pr = 1.0 if np.all(y == 1) else 0.0
    else:
        auc_pr = average_precision(s, y)

    return {
        "acc": acc, "f1": f1, "precision": precision, "recall": recall, "auc_pr": auc_pr,
        "tp": tp, "fp": fp, "tn": tn, "fn": fn, "degenerate_labels": degenerate,
    }


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """Sum over descending unique thresholds of (recall step x precision)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    n_pos = int(np.sum(y == 1))
    ap = 0.0
    prev_recall = 0.0
    for t in sorted(np.unique(s), reverse=True):
        pred = s >= t
        tp = int(np.sum(pred & (y == 1)))
        fp = int(np.sum(pred & (y == 0)))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def min_ade(hypotheses: np.ndarray, gt: np.ndarray) -> float:
    """Min over hypotheses of the mean per-step Euclidean distance."""
    h, g = _check_horizons(hypotheses, gt)
    return float(np.linalg.norm(h - g, axis=2).mean(axis=1).min())


def min_fde(hypotheses: np.ndarray, gt: np.ndarray) -> float:
    """Min over hypotheses of the final-step Euclidean distance."""
    h, g = _check_horizons(hypotheses, gt)
    return float(np.linalg.norm(h[:, -1] - g[-1], axis=1).min())


def _check_horizons(hypotheses, gt) -> tuple[np.ndarray, np.ndarray]:
    h = np.asarray(hypotheses, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if h.ndim != 3 or h.shape[0] < 1 or h.shape[2] != 2:
        raise ValueError(f"hypotheses must be (K>=1, T, 2), got {h.shape}")
    if g.shape != h.shape[1:]:
        raise ValueError(f"horizon mismatch: hypotheses {h.shape[1:]} vs gt {g.shape}")
    return h, g


def build_report(scores, labels, ades, fdes) -> EvalReport:
    cm = classification_metrics(scores, labels)
    return EvalReport(
        acc=cm["acc"], auc_pr=cm["auc_pr"], f1=cm["f1"],
        precision=cm["precision"], recall=cm["recall"],
        min_ade_k=float(np.mean(ades)), min_fde_k=float(np.mean(fdes)),
        tp=cm["tp"], fp=cm["fp"], tn=cm["tn"], fn=cm["fn"],
        n_examples=len(np.asarray(labels).reshape(-1)),
        degenerate_labels=cm["degenerate_labels"],
    )


def evaluate_model(dataset: list, params, spec, k: int = 6, zero_keypoints: bool = False) -> EvalReport:
    """Run inference over a dataset and aggregate all metrics."""
    from .model import predict_scene  # deferred: metrics stays importable standalone

    scores, labels, ades, fdes = [], [], [], []
    for scene in dataset:
        pred = predict_scene(scene, params, spec=spec, k=k, zero_keypoints=zero_keypoints)
        scores.append(pred.crossing_probability)
        labels.append(scene.crossing_label)
        ades.append(min_ade(pred.hypotheses.trajectories, pred.future_tc))
        fdes.append(min_fde(pred.hypotheses.trajectories, pred.future_tc))
    return build_report(scores, labels, ades, fdes)
