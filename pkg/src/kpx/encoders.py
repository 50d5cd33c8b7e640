"""Encoding channels: keypoints ST-GCN, polyline subgraphs, track GRU and the
global interaction attention stage."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Value
from .constants import HIDDEN, T_H
from .skeleton import (
    KeypointsSequence,
    PartitionedAdjacency,
    SkeletonSpec,
    build_partitioned_adjacency,
)

POLYLINE_KINDS = ("lane_boundary", "crosswalk_edge", "agent_track")
VECTOR_FEATURE_DIM = 8  # start(2) + end(2) + kind one-hot(3) + time offset(1)

STGCN_BLOCKS = ((4, 16, 1), (16, 32, 2), (32, 64, 2))  # (in, out, temporal stride)
TEMPORAL_KERNEL = 5


@dataclass
class Polyline:
    """Ordered chain of vectors for one map element or context agent track."""

    kind: str
    starts: np.ndarray  # (n, 2)
    ends: np.ndarray    # (n, 2)
    attrs: np.ndarray   # (n, 4): kind one-hot + timestamp offset

    def __post_init__(self):
        if self.kind not in POLYLINE_KINDS:
            raise ValueError(f"unknown polyline kind {self.kind!r}")
        self.starts = np.asarray(self.starts, dtype=np.float64).reshape(-1, 2)
        self.ends = np.asarray(self.ends, dtype=np.float64).reshape(-1, 2)
        self.attrs = np.asarray(self.attrs, dtype=np.float64).reshape(-1, 4)
        n = self.starts.shape[0]
        if n < 1:
            raise ValueError("polyline needs at least one vector")
        if self.ends.shape[0] != n or self.attrs.shape[0] != n:
            raise ValueError("starts/ends/attrs length mismatch")
        if n > 1 and not np.allclose(self.ends[:-1], self.starts[1:], atol=1e-9):
            raise ValueError("polyline is not contiguous (end != next start)")

    @staticmethod
    def from_points(points: np.ndarray, kind: str, time_offsets: np.ndarray | None = None) -> "Polyline":
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        if pts.shape[0] < 2:
            raise ValueError("need at least two points to form a vector")
        n = pts.shape[0] - 1
        onehot = np.zeros((n, 3))
        onehot[:, POLYLINE_KINDS.index(kind)] = 1.0
        toff = np.zeros((n, 1)) if time_offsets is None else np.asarray(time_offsets, dtype=np.float64).reshape(n, 1)
        return Polyline(kind=kind, starts=pts[:-1], ends=pts[1:], attrs=np.hstack([onehot, toff]))

    def features(self) -> np.ndarray:
        return np.hstack([self.starts, self.ends, self.attrs])

    def transformed(self, origin: np.ndarray, rot: np.ndarray) -> "Polyline":
        """Same polyline with endpoints mapped into a target-centric frame."""
        return Polyline(
            kind=self.kind,
            starts=(self.starts - origin) @ rot.T,
            ends=(self.ends - origin) @ rot.T,
            attrs=self.attrs.copy(),
        )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "vectors": [
                {"start": list(s), "end": list(e), "attr": list(a)}
                for s, e, a in zip(self.starts.tolist(), self.ends.tolist(), self.attrs.tolist())
            ],
        }

    @staticmethod
    def from_dict(d: dict) -> "Polyline":
        vs = d["vectors"]
        return Polyline(
            kind=d["kind"],
            starts=np.array([v["start"] for v in vs]),
            ends=np.array([v["end"] for v in vs]),
            attrs=np.array([v["attr"] for v in vs]),
        )


@dataclass
class SceneEmbeddings:
    """Outputs of the two encoding branches, all row vectors."""

    keypoints_embedding: Value   # (1, 64)
    context_embedding: Value     # (1, 64)
    complete_embedding: Value    # (1, 128) = [context | keypoints]


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def compute_heading(history: np.ndarray, last_keypoints: np.ndarray | None = None) -> float:
    """Heading from recent displacement; shoulder-normal fallback when nearly
    stationary; 0 if neither is informative."""
    hist = np.asarray(history, dtype=np.float64)
    disp = hist[-1] - hist[-5]
    if np.linalg.norm(disp) >= 0.1:
        return math.atan2(disp[1], disp[0])
    if last_keypoints is not None:
        v = last_keypoints[1, :2] - last_keypoints[2, :2]  # left minus right shoulder
        facing = np.array([v[1], -v[0]])
        if np.linalg.norm(facing) > 1e-6:
            return math.atan2(facing[1], facing[0])
    return 0.0


def keypoints_input(
    seq: KeypointsSequence, center_last: np.ndarray, heading: float
) -> np.ndarray:
    """(T, P, 4) encoder input: target-centric coords + visibility channel."""
    rot = rotation(-heading)
    rel = seq.coords - center_last
    xy = rel[:, :, :2] @ rot.T
    return np.concatenate([xy, rel[:, :, 2:3], seq.visibility[:, :, None]], axis=2)


@dataclass
class PreparedScene:
    """Target-centric numpy view of one scene, ready for encoding."""

    history: np.ndarray          # (T_h, 2)
    future: np.ndarray           # (T_f, 2)
    keypoints_in: np.ndarray     # (T_h, P, 4)
    keypoints_future: np.ndarray  # (T_f, P, 3) target-centric
    adjacency: PartitionedAdjacency
    polylines: list[np.ndarray]  # per-polyline (n, 8) feature matrices
    heading: float
    center_last: np.ndarray      # (3,) last-frame skeleton center, world
    label: int


def prepare_scene(scene, spec: SkeletonSpec) -> PreparedScene:
    """World-frame Scene -> target-centric arrays (origin at last observed
    position, heading along +x)."""
    hist = np.asarray(scene.target_history, dtype=np.float64)
    fut = np.asarray(scene.target_future, dtype=np.float64)
    kp_hist: KeypointsSequence = scene.keypoints_history
    kp_fut: KeypointsSequence = scene.keypoints_future

    heading = compute_heading(hist, kp_hist.coords[-1])
    origin = hist[-1]
    rot = rotation(-heading)
    center_last = kp_hist.centers(spec)[-1]

    mean_pose = kp_hist.coords.mean(axis=0)
    adjacency = build_partitioned_adjacency(spec, mean_pose)

    fut_rel = kp_fut.coords - center_last
    kp_fut_tc = np.concatenate([fut_rel[:, :, :2] @ rot.T, fut_rel[:, :, 2:3]], axis=2)

    polys = [p.transformed(origin, rot).features() for p in list(scene.roadgraph) + list(scene.context_agents)]

    return PreparedScene(
        history=(hist - origin) @ rot.T,
        future=(fut - origin) @ rot.T,
        keypoints_in=keypoints_input(kp_hist, center_last, heading),
        keypoints_future=kp_fut_tc,
        adjacency=adjacency,
        polylines=polys,
        heading=heading,
        center_last=center_last,
        label=int(scene.crossing_label),
    )


# -- keypoints encoder (ST-GCN) -----------------------------------------

def encode_keypoints(x: Value, adj: PartitionedAdjacency, params: dict[str, Value]) -> Value:
    """Three ST-GCN blocks + global average pooling -> (1, 64) embedding."""
    t, p, c = x.shape
    if t != T_H:
        raise ValueError(f"expected {T_H} history frames, got {t}")
    if c != 4:
        raise ValueError(f"expected 4 input channels, got {c}")
    parts = [Value(a) for a in adj.stacked()]

    h = x
    for bi, (cin, cout, stride) in enumerate(STGCN_BLOCKS):
        h = _stgcn_block(h, parts, params, f"kp.b{bi}", cin, cout, stride)
    t_out, _, _ = h.shape
    flat = ad.reshape(h, (t_out * p, HIDDEN))
    pooled = ad.mean(flat, axis=0)  # (64,)
    return ad.reshape(pooled, (1, HIDDEN))


def _stgcn_block(
    x: Value, parts: list[Value], params: dict[str, Value], prefix: str,
    cin: int, cout: int, stride: int,
) -> Value:
    t, p, _ = x.shape
    acc = None
    for part, name in zip(parts, ("root", "centripetal", "centrifugal")):
        w = params[f"{prefix}.w_{name}"]
        h = ad.reshape(ad.matmul(ad.reshape(x, (t * p, cin)), w), (t, p, cout))
        h = ad.matmul(part, h)  # (P,P) @ (T,P,cout)
        acc = h if acc is None else acc + h
    y = ad.relu(ad.add_bias(acc, params[f"{prefix}.b_spatial"]))

    # temporal conv along frames, kernel 5, 'same' padding
    t_out = -(-t // stride)
    lpad = TEMPORAL_KERNEL // 2
    rpad = max(0, stride * (t_out - 1) + TEMPORAL_KERNEL - t - lpad)
    zpad_l = Value(np.zeros((lpad, p, cout)))
    zpad_r = Value(np.zeros((rpad, p, cout)))
    z = ad.concat([zpad_l, y, zpad_r], axis=0)

    tw = params[f"{prefix}.w_temporal"]  # (kernel, cout, cout)
    acc2 = None
    for k in range(TEMPORAL_KERNEL):
        window = z[k:k + stride * t_out:stride]  # (t_out, p, cout)
        h = ad.reshape(ad.matmul(ad.reshape(window, (t_out * p, cout)), tw[k]), (t_out, p, cout))
        acc2 = h if acc2 is None else acc2 + h
    out = ad.add_bias(acc2, params[f"{prefix}.b_temporal"])
    if stride == 1:  # residual where shapes allow
        out = out + y
    return ad.relu(out)


# -- polyline subgraph encoder -------------------------------------------

def encode_polyline_subgraph(features: np.ndarray | Value, params: dict[str, Value]) -> Value:
    """Three rounds of shared per-vector MLP + max-pool concatenation,
    final max-pool over vectors -> (1, 64)."""
    f = features if isinstance(features, Value) else Value(np.asarray(features, dtype=np.float64))
    if f.data.ndim != 2 or f.data.shape[0] < 1:
        raise ValueError(f"polyline features must be (n>=1, d), got {f.data.shape}")
    n = f.data.shape[0]
    g = None
    for r in range(3):
        h = _mlp2(f, params, f"poly.r{r}")
        g = ad.vmax(h, axis=0)  # (64,)
        if r < 2:
            f = ad.concat([h, ad.repeat_rows(g, n)], axis=1)
    return ad.reshape(g, (1, HIDDEN))


def _mlp2(x: Value, params: dict[str, Value], prefix: str) -> Value:
    # linear output layer: keeps max-pool ties measure-zero
    h = ad.relu(ad.add_bias(ad.matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    return ad.add_bias(ad.matmul(h, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])


# -- target track encoder (GRU) ------------------------------------------

def encode_track(history: np.ndarray | Value, params: dict[str, Value]) -> Value:
    """Single-layer GRU over a (T, 2) track; returns final hidden (1, 64)."""
    x = history if isinstance(history, Value) else Value(np.asarray(history, dtype=np.float64))
    if not np.all(np.isfinite(x.data)):
        raise ValueError("track history must be finite")
    t = x.data.shape[0]
    h = Value(np.zeros((1, HIDDEN)))
    for i in range(t):
        xi = x[i:i + 1]  # (1, 2)
        zg = ad.sigmoid(ad.add_bias(ad.matmul(xi, params["track.wz"]) + ad.matmul(h, params["track.uz"]), params["track.bz"]))
        rg = ad.sigmoid(ad.add_bias(ad.matmul(xi, params["track.wr"]) + ad.matmul(h, params["track.ur"]), params["track.br"]))
        hh = ad.tanh(ad.add_bias(ad.matmul(xi, params["track.wh"]) + ad.matmul(rg * h, params["track.uh"]), params["track.bh"]))
        h = (Value(1.0) - zg) * h + zg * hh
    return h


# -- global interaction ----------------------------------------------------

def global_interaction(target_node: Value, polyline_nodes: list[Value], params: dict[str, Value]) -> Value:
    """Single-head self-attention over {target} + polyline nodes; returns the
    target's attended feature (1, 64).

    Polyline nodes are canonically sorted before stacking so the reduction
    order (and hence the float result) is independent of input order.
    """
    tgt = ad.add_bias(ad.matmul(target_node, params["gi.w_target"]), params["gi.b_target"])  # (1,64)
    ordered = sorted(polyline_nodes, key=lambda v: v.data.tobytes())
    nodes = ad.concat([tgt] + [ad.reshape(v, (1, HIDDEN)) for v in ordered], axis=0)
    q = ad.matmul(tgt, params["gi.wq"])
    k = ad.matmul(nodes, params["gi.wk"])
    v = ad.matmul(nodes, params["gi.wv"])
    logits = ad.matmul(q, ad.transpose(k, (1, 0))) * Value(1.0 / math.sqrt(HIDDEN))  # (1, N)
    attn = ad.softmax(logits, axis=1)
    return ad.matmul(attn, v)  # (1, 64)


# -- full scene ------------------------------------------------------------

def encode_prepared(prep: PreparedScene, params: dict[str, Value], zero_keypoints: bool = False) -> SceneEmbeddings:
    if zero_keypoints:
        kp_emb = Value(np.zeros((1, HIDDEN)))
    else:
        kp_emb = encode_keypoints(Value(prep.keypoints_in), prep.adjacency, params)
    track_emb = encode_track(prep.history, params)
    poly_embs = [encode_polyline_subgraph(f, params) for f in prep.polylines]
    target_node = ad.concat([track_emb, kp_emb], axis=1)  # (1, 128)
    ctx = global_interaction(target_node, poly_embs, params)
    complete = ad.concat([ctx, kp_emb], axis=1)  # (1, 128)
    return SceneEmbeddings(keypoints_embedding=kp_emb, context_embedding=ctx, complete_embedding=complete)


def encode_scene(scene, params: dict[str, Value], spec: SkeletonSpec, zero_keypoints: bool = False) -> SceneEmbeddings:
    return encode_prepared(prepare_scene(scene, spec), params, zero_keypoints=zero_keypoints)
