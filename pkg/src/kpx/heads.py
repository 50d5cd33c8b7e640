"""Decoding heads: crossing action, three-stage trajectory prediction with
hypothesis selection, and the three auxiliary keypoints objectives."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Value
from .constants import (
    GRID_EXTENT_M,
    GRID_N,
    HIDDEN,
    NMS_THRESHOLD_M,
    NUM_HYPOTHESES,
    SCORE_ALPHA_M,
    SEGMENTS,
    T_F,
)

_PROB_EPS = 1e-7


@dataclass
class TargetCandidateSet:
    """Scored endpoint candidates with per-candidate offset regressions."""

    points: np.ndarray  # (M, 2) target-centric
    logits: Value       # (M,)
    offsets: Value      # (M, 2)


@dataclass
class TrajectoryHypotheses:
    """K selected future trajectories with normalized descending scores."""

    trajectories: np.ndarray  # (K, T_f, 2)
    scores: np.ndarray        # (K,) sum to 1, descending


# -- crossing action head -----------------------------------------------------

def action_head(complete: Value, keypoints_emb: Value, params: dict[str, Value]) -> tuple[Value, Value]:
    """Crossing probabilities from the complete embedding (reported output)
    and from the keypoints embedding alone (co-training)."""
    pc = ad.sigmoid(ad.add_bias(ad.matmul(complete, params["act.w_complete"]), params["act.b_complete"]))
    pk = ad.sigmoid(ad.add_bias(ad.matmul(keypoints_emb, params["act.w_keypoints"]), params["act.b_keypoints"]))
    return ad.reshape(pc, ()), ad.reshape(pk, ())


def binary_cross_entropy(p: Value, label: int) -> Value:
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    p = ad.clip(p, _PROB_EPS, 1.0 - _PROB_EPS)
    if label == 1:
        return -ad.log(p)
    return -ad.log(Value(1.0) - p)


def loss_ar(probs: tuple[Value, Value], label: int) -> Value:
    pc, pk = probs
    return Value(0.5) * (binary_cross_entropy(pc, label) + binary_cross_entropy(pk, label))


# -- trajectory stage 1: target prediction ----------------------------------

def lattice_spacing_m(grid_n: int = GRID_N, extent_m: float = GRID_EXTENT_M) -> float:
    """Distance between neighbouring candidate lattice points."""
    return 2.0 * extent_m / (grid_n - 1)


def sample_target_candidates(heading: float, grid_n: int = GRID_N, extent_m: float = GRID_EXTENT_M) -> np.ndarray:
    """grid_n x grid_n lattice over [-extent, extent]^2, rotated by heading."""
    if grid_n % 2 == 0:
        raise ValueError(f"grid_n must be odd so the origin is a candidate, got {grid_n}")
    axis = np.linspace(-extent_m, extent_m, grid_n)
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    c, s = math.cos(heading), math.sin(heading)
    rot = np.array([[c, -s], [s, c]])
    return pts @ rot.T


def predict_targets(complete: Value, candidates: np.ndarray, params: dict[str, Value]) -> TargetCandidateSet:
    m = candidates.shape[0]
    x = ad.concat([ad.repeat_rows(complete, m), Value(candidates)], axis=1)
    h = ad.relu(ad.add_bias(ad.matmul(x, params["tgt.w1"]), params["tgt.b1"]))
    out = ad.add_bias(ad.matmul(h, params["tgt.w2"]), params["tgt.b2"])  # (M, 3)
    return TargetCandidateSet(
        points=candidates,
        logits=ad.reshape(out[:, 0], (m,)),
        offsets=out[:, 1:3],
    )


def nearest_candidate(candidates: np.ndarray, gt_endpoint: np.ndarray) -> int:
    d = np.linalg.norm(candidates - np.asarray(gt_endpoint), axis=1)
    return int(np.argmin(d))


def loss_target(tcs: TargetCandidateSet, gt_endpoint: np.ndarray) -> Value:
    gt = np.asarray(gt_endpoint, dtype=np.float64)
    if not np.all(np.isfinite(gt)):
        raise ValueError("gt endpoint must be finite")
    pos = nearest_candidate(tcs.points, gt)
    ls = ad.log_softmax(ad.reshape(tcs.logits, (1, -1)), axis=1)
    ce = -ad.reshape(ls[0, pos], ())
    residual = tcs.offsets[pos] - Value(gt - tcs.points[pos])
    return ce + ad.vsum(ad.huber(residual, delta=1.0))


# -- trajectory stage 2: target-conditioned generation ----------------------

# Constant map from a target point to the straight-line trajectory that reaches it:
# row c, column 2i+c holds the fraction (i+1)/T_F of the target coordinate c.
_LERP_TO_TARGET = np.zeros((2, T_F * 2))
for _i in range(T_F):
    _LERP_TO_TARGET[0, 2 * _i] = (_i + 1) / T_F
    _LERP_TO_TARGET[1, 2 * _i + 1] = (_i + 1) / T_F
del _i


def straight_line_trajectories(targets: Value) -> Value:
    """(M, 2) target points -> (M, T_f*2) constant-velocity paths to them."""
    return ad.matmul(targets, Value(_LERP_TO_TARGET))


def generate_trajectories(complete: Value, targets: np.ndarray | Value, params: dict[str, Value]) -> Value:
    """(M, 2) target points -> (M, T_f*2) trajectories.

    The network predicts a residual on top of the straight line from the agent
    frame origin (the current position) to each target point, so waypoints
    default to constant-velocity interpolation and only deviations are learned.
    """
    t = targets if isinstance(targets, Value) else Value(np.asarray(targets, dtype=np.float64))
    m = t.data.shape[0]
    base = ad.matmul(t, Value(_LERP_TO_TARGET))
    x = ad.concat([ad.repeat_rows(complete, m), t], axis=1)
    h = ad.relu(ad.add_bias(ad.matmul(x, params["traj.w1"]), params["traj.b1"]))
    return base + ad.add_bias(ad.matmul(h, params["traj.w2"]), params["traj.b2"])


def generate_trajectory(complete: Value, target_point: np.ndarray, params: dict[str, Value]) -> Value:
    flat = generate_trajectories(complete, np.asarray(target_point, dtype=np.float64).reshape(1, 2), params)
    return ad.reshape(flat, (T_F, 2))


def loss_traj(pred: Value, gt: np.ndarray) -> Value:
    """Mean over steps of the per-step Huber penalty (summed over x, y)."""
    gt = np.asarray(gt, dtype=np.float64)
    residual = ad.reshape(pred, (T_F, 2)) - Value(gt)
    return ad.vsum(ad.huber(residual, delta=1.0)) / Value(float(T_F))


# -- trajectory stage 3: scoring and selection -------------------------------

def score_trajectories(complete: Value, trajectories: Value, params: dict[str, Value]) -> Value:
    """Per-trajectory logits from [embedding | flattened trajectory]."""
    m = trajectories.data.shape[0]
    flat = ad.reshape(trajectories, (m, T_F * 2))
    x = ad.concat([ad.repeat_rows(complete, m), flat], axis=1)
    h = ad.relu(ad.add_bias(ad.matmul(x, params["score.w1"]), params["score.b1"]))
    return ad.reshape(ad.add_bias(ad.matmul(h, params["score.w2"]), params["score.b2"]), (m,))


def score_teacher(trajectories: np.ndarray, gt: np.ndarray, alpha: float = SCORE_ALPHA_M) -> np.ndarray:
    """Max-entropy teacher: psi(s) prop. exp(-D(s, gt)/alpha), D = max per-step
    Euclidean distance."""
    trajs = np.asarray(trajectories, dtype=np.float64).reshape(-1, T_F, 2)
    gt = np.asarray(gt, dtype=np.float64).reshape(T_F, 2)
    d = np.linalg.norm(trajs - gt, axis=2).max(axis=1)
    z = -d / alpha
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()


def loss_score(logits: Value, trajectories: np.ndarray | Value, gt: np.ndarray, alpha: float = SCORE_ALPHA_M) -> Value:
    trajs = trajectories if isinstance(trajectories, Value) else Value(np.asarray(trajectories, dtype=np.float64))
    m = trajs.data.shape[0]
    gt = np.asarray(gt, dtype=np.float64).reshape(T_F, 2)
    diff = ad.reshape(trajs, (m, T_F, 2)) - Value(np.broadcast_to(gt, (m, T_F, 2)).copy())
    sq = ad.vsum(diff * diff, axis=2)                 # (m, T_f)
    dist = ad.sqrt(sq + Value(np.full((m, T_F), 1e-24)))
    d = ad.vmax(dist, axis=1)                         # max per-step distance
    psi = ad.softmax(ad.reshape(d * Value(-1.0 / alpha), (1, m)), axis=1)
    ls = ad.log_softmax(ad.reshape(logits, (1, -1)), axis=1)
    return -ad.vsum(psi * ls)


def select_trajectories(
    trajectories: np.ndarray,
    scores: np.ndarray,
    k: int = NUM_HYPOTHESES,
    nms_threshold_m: float = NMS_THRESHOLD_M,
) -> TrajectoryHypotheses:
    """Greedy descending-score selection rejecting endpoints closer than the
    threshold to any accepted endpoint; scores renormalized over accepted."""
    trajs = np.asarray(trajectories, dtype=np.float64).reshape(-1, T_F, 2)
    sc = np.asarray(scores, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(sc)):
        raise ValueError("scores must be finite")
    order = np.argsort(-sc, kind="stable")
    accepted: list[int] = []
    for i in order:
        ep = trajs[i, -1]
        if all(np.linalg.norm(ep - trajs[j, -1]) >= nms_threshold_m for j in accepted):
            accepted.append(int(i))
            if len(accepted) == k:
                break
    chosen = trajs[accepted]
    chosen_scores = sc[accepted]
    total = chosen_scores.sum()
    if total > 0:
        chosen_scores = chosen_scores / total
    else:
        chosen_scores = np.full(len(accepted), 1.0 / len(accepted))
    return TrajectoryHypotheses(trajectories=chosen, scores=chosen_scores)


# -- keypoints jigsaw puzzle --------------------------------------------------

def kjp_head(keypoints_emb: Value, params: dict[str, Value]) -> Value:
    """Single linear layer to S! permutation classes; returns (1, S!) logits."""
    return ad.add_bias(ad.matmul(keypoints_emb, params["kjp.w"]), params["kjp.b"])


def loss_kjp(logits: Value, perm_label: int) -> Value:
    n_classes = logits.data.shape[-1]
    if not 0 <= perm_label < n_classes:
        raise ValueError(f"label {perm_label} out of range [0, {n_classes})")
    ls = ad.log_softmax(logits, axis=1)
    return -ad.reshape(ls[0, perm_label], ())


# -- keypoints prediction ------------------------------------------------------

def kp_head(keypoints_emb: Value, params: dict[str, Value], joint_count: int) -> Value:
    h = ad.relu(ad.add_bias(ad.matmul(keypoints_emb, params["kp_head.w1"]), params["kp_head.b1"]))
    flat = ad.add_bias(ad.matmul(h, params["kp_head.w2"]), params["kp_head.b2"])
    return ad.reshape(flat, (T_F, joint_count, 3))


def loss_kp(pred: Value, gt_future: np.ndarray) -> Value:
    gt = np.asarray(gt_future, dtype=np.float64)
    if pred.data.shape != gt.shape:
        raise ad.ShapeError("loss_kp", pred.data.shape, gt.shape)
    diff = pred - Value(gt)
    return ad.mean(diff * diff)


# -- keypoints contrastive learning ---------------------------------------------

def kcl_project(keypoints_emb: Value, params: dict[str, Value]) -> Value:
    """Three-layer projection MLP -> (1, 64)."""
    h = ad.relu(ad.add_bias(ad.matmul(keypoints_emb, params["kcl.w1"]), params["kcl.b1"]))
    h = ad.relu(ad.add_bias(ad.matmul(h, params["kcl.w2"]), params["kcl.b2"]))
    return ad.add_bias(ad.matmul(h, params["kcl.w3"]), params["kcl.b3"])


def loss_kcl(projections: list[Value], beta: float) -> Value:
    """Normalized-temperature contrastive loss over 2*N_b projections ordered
    as consecutive positive pairs [z0a, z0b, z1a, z1b, ...]."""
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    n = len(projections)
    if n < 2 or n % 2 != 0:
        raise ValueError(f"need an even number (>=2) of projections, got {n}")
    normed = []
    for z in projections:
        norm = ad.clip(ad.sqrt(ad.vsum(z * z)), 1e-12, float("inf"))
        normed.append(z / ad.reshape(norm, ()))
    z = ad.concat(normed, axis=0)                      # (2N, 64)
    sim = ad.matmul(z, ad.transpose(z, (1, 0))) * Value(beta)
    masked = sim + Value(np.diag(np.full(n, -1e30)))   # exclude r == p
    ls = ad.log_softmax(masked, axis=1)
    partner = np.arange(n) ^ 1
    picked = ls[(np.arange(n), partner)]
    return -ad.mean(picked)
