"""Skeleton topology, keypoints sequences, partitioned adjacency and the
segment-shuffling transform shared by the jigsaw and contrastive tasks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SkeletonSpec",
    "KeypointsSequence",
    "PartitionedAdjacency",
    "DEFAULT_SKELETON",
    "build_partitioned_adjacency",
    "shuffle_segments",
    "perm_to_label",
    "label_to_perm",
]


@dataclass(frozen=True)
class SkeletonSpec:
    """Bone graph of the tracked joints."""

    joint_names: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]
    center_joints: tuple[int, ...]

    def __post_init__(self):
        p = len(self.joint_names)
        if p < 1:
            raise ValueError("skeleton needs at least one joint")
        for i, j in self.edges:
            if not (0 <= i < p and 0 <= j < p):
                raise ValueError(f"edge ({i},{j}) out of range for {p} joints")
            if i == j:
                raise ValueError(f"self-loop at joint {i}")
        if not self.center_joints:
            raise ValueError("center_joints must be non-empty")
        for c in self.center_joints:
            if not 0 <= c < p:
                raise ValueError(f"center joint {c} out of range")
        if p > 1 and not self._connected():
            raise ValueError("bone graph is disconnected")

    def _connected(self) -> bool:
        p = len(self.joint_names)
        adj: list[list[int]] = [[] for _ in range(p)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        seen = {0}
        stack = [0]
        while stack:
            for n in adj[stack.pop()]:
                if n not in seen:
                    seen.add(n)
                    stack.append(n)
        return len(seen) == p

    @property
    def joint_count(self) -> int:
        return len(self.joint_names)

    def neighbors(self, i: int) -> list[int]:
        out = []
        for a, b in self.edges:
            if a == i:
                out.append(b)
            elif b == i:
                out.append(a)
        return sorted(set(out))

    def to_dict(self) -> dict:
        return {
            "joint_names": list(self.joint_names),
            "edges": [list(e) for e in self.edges],
            "center_joints": list(self.center_joints),
        }

    @staticmethod
    def from_dict(d: dict) -> "SkeletonSpec":
        return SkeletonSpec(
            joint_names=tuple(d["joint_names"]),
            edges=tuple((int(a), int(b)) for a, b in d["edges"]),
            center_joints=tuple(int(c) for c in d["center_joints"]),
        )


_JOINTS = (
    "nose",
    "l_shoulder", "r_shoulder",
    "l_elbow", "r_elbow",
    "l_wrist", "r_wrist",
    "l_hip", "r_hip",
    "l_knee", "r_knee",
    "l_ankle", "r_ankle",
)

DEFAULT_SKELETON = SkeletonSpec(
    joint_names=_JOINTS,
    edges=(
        (0, 1), (0, 2),
        (1, 3), (3, 5),
        (2, 4), (4, 6),
        (1, 7), (2, 8), (7, 8),
        (7, 9), (9, 11),
        (8, 10), (10, 12),
    ),
    center_joints=(7, 8),  # pelvis midpoint
)


@dataclass
class KeypointsSequence:
    """Per-frame 3D joint positions (meters) with visibility scores."""

    coords: np.ndarray      # (T, P, 3)
    visibility: np.ndarray  # (T, P) in [0, 1]

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.visibility = np.asarray(self.visibility, dtype=np.float64)
        if self.coords.ndim != 3 or self.coords.shape[2] != 3:
            raise ValueError(f"coords must be (T, P, 3), got {self.coords.shape}")
        if self.visibility.shape != self.coords.shape[:2]:
            raise ValueError(
                f"visibility shape {self.visibility.shape} != {self.coords.shape[:2]}"
            )
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("coords must be finite")
        if np.any(self.visibility < 0.0) or np.any(self.visibility > 1.0):
            raise ValueError("visibility must lie in [0, 1]")

    @property
    def frames(self) -> int:
        return self.coords.shape[0]

    @property
    def joint_count(self) -> int:
        return self.coords.shape[1]

    def centers(self, spec: SkeletonSpec) -> np.ndarray:
        """Per-frame skeleton center: mean of the center joints, shape (T, 3)."""
        return self.coords[:, list(spec.center_joints), :].mean(axis=1)


@dataclass
class PartitionedAdjacency:
    """Row-normalized root / centripetal / centrifugal adjacency matrices."""

    root: np.ndarray
    centripetal: np.ndarray
    centrifugal: np.ndarray

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.root, self.centripetal, self.centrifugal


def build_partitioned_adjacency(
    spec: SkeletonSpec, reference_pose: np.ndarray, tie_eps: float = 1e-9
) -> PartitionedAdjacency:
    """Split each joint's neighborhood by distance to the gravity center.

    Self-link goes to the root partition; a neighbor strictly closer to the
    gravity center than the joint itself (ties included) is centripetal, the
    rest centrifugal.  Each matrix is normalized by its own row degree.
    """
    pose = np.asarray(reference_pose, dtype=np.float64)
    p = spec.joint_count
    if pose.shape != (p, 3):
        raise ValueError(f"reference_pose must be ({p}, 3), got {pose.shape}")
    if not np.all(np.isfinite(pose)):
        raise ValueError("reference_pose must be finite")

    g = pose.mean(axis=0)
    dist = np.linalg.norm(pose - g, axis=1)

    root = np.eye(p)
    centripetal = np.zeros((p, p))
    centrifugal = np.zeros((p, p))
    for i in range(p):
        for j in spec.neighbors(i):
            if dist[j] < dist[i] + tie_eps:
                centripetal[i, j] = 1.0
            else:
                centrifugal[i, j] = 1.0

    def normalize(m: np.ndarray) -> np.ndarray:
        deg = m.sum(axis=1, keepdims=True)
        return np.divide(m, deg, out=np.zeros_like(m), where=deg > 0)

    return PartitionedAdjacency(normalize(root), normalize(centripetal), normalize(centrifugal))


def shuffle_segments(
    seq: KeypointsSequence, spec: SkeletonSpec, perm: "list[int] | tuple[int, ...]"
) -> KeypointsSequence:
    """Permute equal-length temporal segments of center-relative offsets.

    The per-frame skeleton centers stay in place; only the offsets of each
    joint relative to its frame's center (and the visibility scores) move
    with their segment.
    """
    s = len(perm)
    t = seq.frames
    if t % s != 0:
        raise ValueError(f"frame count {t} not divisible by {s} segments")
    if sorted(perm) != list(range(s)):
        raise ValueError(f"invalid permutation {perm}")

    seg = t // s
    centers = seq.centers(spec)  # (T, 3)
    offsets = seq.coords - centers[:, None, :]

    new_coords = np.empty_like(seq.coords)
    new_vis = np.empty_like(seq.visibility)
    for dst in range(s):
        src = perm[dst]
        d = slice(dst * seg, (dst + 1) * seg)
        r = slice(src * seg, (src + 1) * seg)
        if src == dst:  # unmoved segments stay bit-identical
            new_coords[d] = seq.coords[d]
        else:
            new_coords[d] = centers[d, None, :] + offsets[r]
        new_vis[d] = seq.visibility[r]

    return KeypointsSequence(coords=new_coords, visibility=new_vis)


def perm_to_label(perm: "list[int] | tuple[int, ...]") -> int:
    """Lexicographic rank of a permutation (Lehmer code)."""
    s = len(perm)
    if sorted(perm) != list(range(s)):
        raise ValueError(f"invalid permutation {perm}")
    label = 0
    remaining = list(range(s))
    for i, p in enumerate(perm):
        pos = remaining.index(p)
        label += pos * math.factorial(s - 1 - i)
        remaining.pop(pos)
    return label


def label_to_perm(label: int, s: int) -> tuple[int, ...]:
    """Inverse of perm_to_label."""
    if not 0 <= label < math.factorial(s):
        raise ValueError(f"label {label} out of range for S={s}")
    remaining = list(range(s))
    perm = []
    rem = label
    for i in range(s):
        f = math.factorial(s - 1 - i)
        pos, rem = divmod(rem, f)
        perm.append(remaining.pop(pos))
    return tuple(perm)
