"""Parameter initialization and full-model assembly: per-example multi-task
losses for training and the three-stage trajectory decode for inference."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import heads
from .autodiff import Value
from .constants import HIDDEN, NMS_THRESHOLD_M, NUM_HYPOTHESES, SEGMENTS, T_F
from .encoders import (
    STGCN_BLOCKS,
    TEMPORAL_KERNEL,
    VECTOR_FEATURE_DIM,
    PreparedScene,
    encode_keypoints,
    encode_prepared,
    keypoints_input,
    prepare_scene,
)
from .skeleton import DEFAULT_SKELETON, SkeletonSpec, shuffle_segments, perm_to_label


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape or (fan_in, fan_out))


def init_params(seed: int, spec: SkeletonSpec = DEFAULT_SKELETON, segments: int = SEGMENTS) -> dict[str, Value]:
    """All learnable parameters, seed-reproducible, keyed by dotted names."""
    rng = np.random.default_rng(seed)
    p: dict[str, np.ndarray] = {}

    for bi, (cin, cout, _stride) in enumerate(STGCN_BLOCKS):
        for part in ("root", "centripetal", "centrifugal"):
            p[f"kp.b{bi}.w_{part}"] = _glorot(rng, cin, cout)
        p[f"kp.b{bi}.b_spatial"] = np.zeros(cout)
        p[f"kp.b{bi}.w_temporal"] = _glorot(rng, TEMPORAL_KERNEL * cout, cout, shape=(TEMPORAL_KERNEL, cout, cout))
        p[f"kp.b{bi}.b_temporal"] = np.zeros(cout)

    dims = [VECTOR_FEATURE_DIM, 2 * HIDDEN, 2 * HIDDEN]
    for r, din in enumerate(dims):
        p[f"poly.r{r}.w1"] = _glorot(rng, din, HIDDEN)
        p[f"poly.r{r}.b1"] = np.zeros(HIDDEN)
        p[f"poly.r{r}.w2"] = _glorot(rng, HIDDEN, HIDDEN)
        p[f"poly.r{r}.b2"] = np.zeros(HIDDEN)

    for gate in ("z", "r", "h"):
        p[f"track.w{gate}"] = _glorot(rng, 2, HIDDEN)
        p[f"track.u{gate}"] = _glorot(rng, HIDDEN, HIDDEN)
        p[f"track.b{gate}"] = np.zeros(HIDDEN)

    p["gi.w_target"] = _glorot(rng, 2 * HIDDEN, HIDDEN)
    p["gi.b_target"] = np.zeros(HIDDEN)
    for name in ("wq", "wk", "wv"):
        p[f"gi.{name}"] = _glorot(rng, HIDDEN, HIDDEN)

    p["act.w_complete"] = _glorot(rng, 2 * HIDDEN, 1)
    p["act.b_complete"] = np.zeros(1)
    p["act.w_keypoints"] = _glorot(rng, HIDDEN, 1)
    p["act.b_keypoints"] = np.zeros(1)

    p["tgt.w1"] = _glorot(rng, 2 * HIDDEN + 2, HIDDEN)
    p["tgt.b1"] = np.zeros(HIDDEN)
    p["tgt.w2"] = _glorot(rng, HIDDEN, 3)
    p["tgt.b2"] = np.zeros(3)

    p["traj.w1"] = _glorot(rng, 2 * HIDDEN + 2, HIDDEN)
    p["traj.b1"] = np.zeros(HIDDEN)
    p["traj.w2"] = _glorot(rng, HIDDEN, T_F * 2)
    p["traj.b2"] = np.zeros(T_F * 2)

    p["score.w1"] = _glorot(rng, 2 * HIDDEN + T_F * 2, HIDDEN)
    p["score.b1"] = np.zeros(HIDDEN)
    p["score.w2"] = _glorot(rng, HIDDEN, 1)
    p["score.b2"] = np.zeros(1)

    n_classes = math.factorial(segments)
    p["kjp.w"] = _glorot(rng, HIDDEN, n_classes)
    p["kjp.b"] = np.zeros(n_classes)

    out_kp = T_F * spec.joint_count * 3
    p["kp_head.w1"] = _glorot(rng, HIDDEN, HIDDEN)
    p["kp_head.b1"] = np.zeros(HIDDEN)
    p["kp_head.w2"] = _glorot(rng, HIDDEN, out_kp)
    p["kp_head.b2"] = np.zeros(out_kp)

    for i in (1, 2, 3):
        p[f"kcl.w{i}"] = _glorot(rng, HIDDEN, HIDDEN)
        p[f"kcl.b{i}"] = np.zeros(HIDDEN)

    return {k: Value(v, requires_grad=True, name=k) for k, v in p.items()}


AUX_PARAM_PREFIXES = ("kjp.", "kp_head.", "kcl.")


@dataclass
class ExampleLosses:
    """Per-example loss terms; KCL projections are collected batch-wide."""

    ar: Value
    target: Value
    traj: Value
    score: Value
    kjp: Value | None = None
    kp: Value | None = None
    kcl_views: list = field(default_factory=list)  # two (1, 64) projections

    @property
    def tp(self) -> Value:
        return self.target + self.traj + self.score


def forward_example(
    prep: PreparedScene,
    params: dict[str, Value],
    spec: SkeletonSpec,
    scene=None,
    rng: np.random.Generator | None = None,
    with_kjp: bool = False,
    with_kp: bool = False,
    with_kcl: bool = False,
    zero_keypoints: bool = False,
    segments: int = SEGMENTS,
    score_freeze: dict | None = None,
) -> ExampleLosses:
    """Forward all heads on one target-centric example and return loss terms.

    `scene` (world frame) and `rng` are required when any auxiliary task is
    enabled: the shuffled views are drawn fresh per call.

    `score_freeze` supports finite-difference gradient verification: the
    scoring stage deliberately holds some quantities constant (the candidate
    endpoints the generator is conditioned on, and the generated residuals),
    so a finite-difference probe must evaluate the loss with those constants
    pinned to their base-point values or it measures paths that backprop
    correctly ignores. Pass an empty dict to capture them on the first call;
    subsequent calls with the populated dict reuse them.
    """
    emb = encode_prepared(prep, params, zero_keypoints=zero_keypoints)

    l_ar = heads.loss_ar(heads.action_head(emb.complete_embedding, emb.keypoints_embedding, params), prep.label)

    candidates = heads.sample_target_candidates(0.0)  # already in the heading-aligned frame
    tcs = heads.predict_targets(emb.complete_embedding, candidates, params)
    gt_endpoint = prep.future[-1]
    l_target = heads.loss_target(tcs, gt_endpoint)

    pred = heads.generate_trajectory(emb.complete_embedding, gt_endpoint, params)  # teacher forcing
    l_traj = heads.loss_traj(pred, prep.future)

    # Scoring-stage gradient routing: the generator is conditioned on detached
    # endpoints and never sees the scoring gradient (it trains by teacher
    # forcing alone), while the scored trajectories are rewritten as
    # straight-line(endpoints) + detached(residual) so the scoring loss can
    # push implausible candidates away only through their endpoint offsets.
    # The positive candidate's endpoint is detached too: it is supervised by
    # the endpoint Huber loss, not by the scorer.
    cand_targets = Value(candidates) + tcs.offsets
    if score_freeze:
        frozen_cand = score_freeze["cand"]
        frozen_raw = score_freeze["raw"]
    else:
        frozen_cand = cand_targets.data.copy()
        frozen_raw = heads.generate_trajectories(
            emb.complete_embedding, Value(frozen_cand), params).data.copy()
        if score_freeze is not None:
            score_freeze["cand"] = frozen_cand
            score_freeze["raw"] = frozen_raw
    pos = heads.nearest_candidate(candidates, gt_endpoint)
    negative = np.ones_like(candidates)
    negative[pos, :] = 0.0
    att_targets = cand_targets * Value(negative) + Value(frozen_cand * (1.0 - negative))
    base = heads.straight_line_trajectories(Value(frozen_cand))
    residual = Value(frozen_raw - base.data)
    trajs = heads.straight_line_trajectories(att_targets) + residual
    logits = heads.score_trajectories(emb.complete_embedding, trajs, params)
    l_score = heads.loss_score(logits, trajs, prep.future)

    out = ExampleLosses(ar=l_ar, target=l_target, traj=l_traj, score=l_score)

    if (with_kjp or with_kcl) and (scene is None or rng is None):
        raise ValueError("auxiliary tasks need the raw scene and an rng")

    def encode_view(perm) -> Value:
        shuffled = shuffle_segments(scene.keypoints_history, spec, perm)
        x = keypoints_input(shuffled, prep.center_last, prep.heading)
        return encode_keypoints(Value(x), prep.adjacency, params)

    if with_kjp:
        perm = tuple(rng.permutation(segments).tolist())
        logits_kjp = heads.kjp_head(encode_view(perm), params)
        out.kjp = heads.loss_kjp(logits_kjp, perm_to_label(perm))

    if with_kp:
        pred_kp = heads.kp_head(emb.keypoints_embedding, params, spec.joint_count)
        out.kp = heads.loss_kp(pred_kp, prep.keypoints_future)

    if with_kcl:
        for _ in range(2):
            perm = tuple(rng.permutation(segments).tolist())
            out.kcl_views.append(heads.kcl_project(encode_view(perm), params))

    return out


@dataclass
class ScenePrediction:
    crossing_probability: float
    hypotheses: heads.TrajectoryHypotheses
    heading: float
    history_tc: np.ndarray
    future_tc: np.ndarray


def predict_scene(
    scene,
    params: dict[str, Value],
    spec: SkeletonSpec = DEFAULT_SKELETON,
    k: int = NUM_HYPOTHESES,
    nms_threshold_m: float = NMS_THRESHOLD_M,
    zero_keypoints: bool = False,
) -> ScenePrediction:
    """Full inference: crossing probability + K selected trajectory hypotheses
    (target-centric coordinates)."""
    prep = prepare_scene(scene, spec)
    with ad.no_grad():
        emb = encode_prepared(prep, params, zero_keypoints=zero_keypoints)
        pc, _pk = heads.action_head(emb.complete_embedding, emb.keypoints_embedding, params)
        candidates = heads.sample_target_candidates(0.0)
        tcs = heads.predict_targets(emb.complete_embedding, candidates, params)
        # An offset is a refinement within its candidate's lattice cell; clamp
        # it there so no candidate endpoint can stray into a neighbour's cell.
        half_cell = 0.5 * heads.lattice_spacing_m()
        cand_targets = candidates + np.clip(tcs.offsets.data, -half_cell, half_cell)
        trajs = heads.generate_trajectories(emb.complete_embedding, cand_targets, params)
        logits = heads.score_trajectories(emb.complete_embedding, trajs, params)
    z = logits.data - logits.data.max()
    probs = np.exp(z) / np.exp(z).sum()
    hyp = heads.select_trajectories(trajs.data.reshape(-1, T_F, 2), probs, k=k, nms_threshold_m=nms_threshold_m)
    return ScenePrediction(
        crossing_probability=float(pc.data),
        hypotheses=hyp,
        heading=prep.heading,
        history_tc=prep.history,
        future_tc=prep.future,
    )
