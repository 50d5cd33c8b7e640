"""Synthetic scene generation and the newline-delimited dataset file format.

World frame: a straight two-lane road along +x occupying y in [0, 7] with
lane boundaries at y = 0, 3.5 and 7, one crosswalk spanning x in [-1.5, 1.5],
sidewalks at y < 0 and y > 7.  Ten scenes per second of wall time is plenty;
realism is limited to what gives the tasks separable pose signatures.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .constants import FUTURE_HZ, HISTORY_HZ, T_F, T_H
from .encoders import Polyline
from .skeleton import DEFAULT_SKELETON, KeypointsSequence, SkeletonSpec

FORMAT_VERSION = 1
FRAMES_10HZ = T_H + T_F * 5  # gait generated at 10 Hz, future downsampled to 2 Hz
FUTURE_FRAME_IDX = [T_H - 1 + 5 * (k + 1) for k in range(T_F)]
_DT = 1.0 / HISTORY_HZ

LANE_YS = (0.0, 3.5, 7.0)
CROSSWALK_XS = (-1.5, 1.5)


class ScenarioKind(enum.Enum):
    CROSS_WALKWAY = "cross_walkway"
    CROSS_JAYWALK = "cross_jaywalk"
    PARALLEL_SIDEWALK = "parallel_sidewalk"
    STAND_AT_CURB = "stand_at_curb"
    BEND_DOWN_ON_ROAD = "bend_down_on_road"
    WAVE_THEN_CROSS = "wave_then_cross"


CROSSING_KINDS = {ScenarioKind.CROSS_WALKWAY, ScenarioKind.CROSS_JAYWALK, ScenarioKind.WAVE_THEN_CROSS}

UNIFORM_MIX = {k: 1.0 / 6.0 for k in ScenarioKind}

# mirrors the reference corpus imbalance of roughly 2.47 negatives per positive
DEFAULT_MIX = {
    ScenarioKind.CROSS_WALKWAY: 0.12,
    ScenarioKind.CROSS_JAYWALK: 0.08,
    ScenarioKind.WAVE_THEN_CROSS: 0.088,
    ScenarioKind.PARALLEL_SIDEWALK: 0.26,
    ScenarioKind.STAND_AT_CURB: 0.252,
    ScenarioKind.BEND_DOWN_ON_ROAD: 0.20,
}


@dataclass
class Scene:
    """One training/evaluation example in the world frame."""

    target_history: np.ndarray   # (T_h, 2)
    target_future: np.ndarray    # (T_f, 2)
    keypoints_history: KeypointsSequence
    keypoints_future: KeypointsSequence
    crossing_label: int          # 1 iff actively crossing
    heading: float               # radians, world frame
    context_agents: list = field(default_factory=list)
    roadgraph: list = field(default_factory=list)

    def __post_init__(self):
        self.target_history = np.asarray(self.target_history, dtype=np.float64)
        self.target_future = np.asarray(self.target_future, dtype=np.float64)
        if self.target_history.shape != (T_H, 2):
            raise ValueError(f"target_history must be ({T_H}, 2), got {self.target_history.shape}")
        if self.target_future.shape != (T_F, 2):
            raise ValueError(f"target_future must be ({T_F}, 2), got {self.target_future.shape}")
        if self.keypoints_history.frames != T_H:
            raise ValueError("keypoints_history frame count mismatch")
        if self.keypoints_future.frames != T_F:
            raise ValueError("keypoints_future frame count mismatch")
        if self.crossing_label not in (0, 1):
            raise ValueError("crossing_label must be 0 or 1")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Scene):
            return NotImplemented
        return (
            np.array_equal(self.target_history, other.target_history)
            and np.array_equal(self.target_future, other.target_future)
            and np.array_equal(self.keypoints_history.coords, other.keypoints_history.coords)
            and np.array_equal(self.keypoints_history.visibility, other.keypoints_history.visibility)
            and np.array_equal(self.keypoints_future.coords, other.keypoints_future.coords)
            and np.array_equal(self.keypoints_future.visibility, other.keypoints_future.visibility)
            and self.crossing_label == other.crossing_label
            and self.heading == other.heading
            and len(self.context_agents) == len(other.context_agents)
            and all(a.to_dict() == b.to_dict() for a, b in zip(self.context_agents, other.context_agents))
            and all(a.to_dict() == b.to_dict() for a, b in zip(self.roadgraph, other.roadgraph))
        )

    def to_dict(self) -> dict:
        return {
            "target_history": self.target_history.tolist(),
            "target_future": self.target_future.tolist(),
            "keypoints_history": {
                "coords": self.keypoints_history.coords.tolist(),
                "visibility": self.keypoints_history.visibility.tolist(),
            },
            "keypoints_future": {
                "coords": self.keypoints_future.coords.tolist(),
                "visibility": self.keypoints_future.visibility.tolist(),
            },
            "label": self.crossing_label,
            "heading": self.heading,
            "context_agents": [p.to_dict() for p in self.context_agents],
            "roadgraph": [p.to_dict() for p in self.roadgraph],
        }

    @staticmethod
    def from_dict(d: dict) -> "Scene":
        return Scene(
            target_history=np.array(d["target_history"]),
            target_future=np.array(d["target_future"]),
            keypoints_history=KeypointsSequence(
                coords=np.array(d["keypoints_history"]["coords"]),
                visibility=np.array(d["keypoints_history"]["visibility"]),
            ),
            keypoints_future=KeypointsSequence(
                coords=np.array(d["keypoints_future"]["coords"]),
                visibility=np.array(d["keypoints_future"]["visibility"]),
            ),
            crossing_label=int(d["label"]),
            heading=float(d["heading"]),
            context_agents=[Polyline.from_dict(p) for p in d["context_agents"]],
            roadgraph=[Polyline.from_dict(p) for p in d["roadgraph"]],
        )


# -- gait model ---------------------------------------------------------------

def _speed_profile(kind: ScenarioKind, speed: float) -> np.ndarray:
    """Per-frame forward speed over the full 10 Hz horizon."""
    v = np.zeros(FRAMES_10HZ)
    if kind in (ScenarioKind.CROSS_WALKWAY, ScenarioKind.CROSS_JAYWALK, ScenarioKind.PARALLEL_SIDEWALK):
        v[:] = speed
    elif kind is ScenarioKind.WAVE_THEN_CROSS:
        ramp = np.linspace(0.0, speed, 11)
        v[T_H:T_H + 11] = ramp
        v[T_H + 11:] = speed
    # stand_at_curb / bend_down_on_road stay at zero
    return v


def _center_path(kind: ScenarioKind, speed: float) -> np.ndarray:
    """Forward displacement per frame, shifted so the current frame is 0."""
    v = _speed_profile(kind, speed)
    s = np.concatenate([[0.0], np.cumsum(v[1:] * _DT)])
    return s - s[T_H - 1]

# standing joint offsets in the canonical frame (facing +x, y to the left)
_BASE = {
    "nose": (0.05, 0.0, 1.60),
    "l_shoulder": (0.0, 0.18, 1.45), "r_shoulder": (0.0, -0.18, 1.45),
    "l_elbow": (0.0, 0.25, 1.15), "r_elbow": (0.0, -0.25, 1.15),
    "l_wrist": (0.0, 0.25, 0.85), "r_wrist": (0.0, -0.25, 0.85),
    "l_hip": (0.0, 0.10, 0.90), "r_hip": (0.0, -0.10, 0.90),
    "l_knee": (0.0, 0.12, 0.50), "r_knee": (0.0, -0.12, 0.50),
    "l_ankle": (0.0, 0.13, 0.08), "r_ankle": (0.0, -0.13, 0.08),
}


def generate_gait(
    kind: ScenarioKind,
    speed_mps: float,
    rng: np.random.Generator,
    spec: SkeletonSpec = DEFAULT_SKELETON,
    noise_sigma: float = 0.01,
) -> KeypointsSequence:
    """Sinusoidal limb model walking along +x in a canonical frame.

    Returns the full 10 Hz horizon (history + dense future); the scene
    builder rotates/translates it into the world and downsamples the future.
    """
    if not 0.0 <= speed_mps <= 2.5:
        raise ValueError(f"speed must be within [0, 2.5] m/s, got {speed_mps}")
    p = spec.joint_count
    names = spec.joint_names
    s = _center_path(kind, speed_mps)
    v = _speed_profile(kind, speed_mps)

    coords = np.zeros((FRAMES_10HZ, p, 3))
    phase = 0.0
    for i in range(FRAMES_10HZ):
        vi = v[i]
        phase += 2.0 * math.pi * (vi / 0.7) * _DT
        amp = 0.25 * vi
        arm = 0.15 * vi
        bend = kind is ScenarioKind.BEND_DOWN_ON_ROAD
        waving = kind is ScenarioKind.WAVE_THEN_CROSS and i < T_H
        tau = (i - (T_H - 1)) * _DT
        for j, name in enumerate(names):
            bx, by, bz = _BASE[name]
            x, y, z = bx + s[i], by, bz
            if name in ("l_ankle", "r_ankle"):
                x += amp * math.sin(phase + (0.0 if name[0] == "l" else math.pi))
            elif name in ("l_knee", "r_knee"):
                x += 0.5 * amp * math.sin(phase + (0.0 if name[0] == "l" else math.pi))
            elif name in ("l_wrist", "r_wrist", "l_elbow", "r_elbow"):
                scale = 1.0 if "wrist" in name else 0.5
                x += scale * arm * math.sin(phase + (math.pi if name[0] == "l" else 0.0))
            if bend and name in ("nose", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist"):
                z *= 0.55
                x += 0.25
            if waving and name == "r_wrist":
                x, y, z = bx + s[i], by, 1.75 + 0.15 * math.sin(2.0 * math.pi * 1.0 * tau)
            if waving and name == "r_elbow":
                z = 1.55
            coords[i, j] = (x, y, z)
    coords += rng.normal(0.0, noise_sigma, size=coords.shape)

    visibility = rng.uniform(0.8, 1.0, size=(FRAMES_10HZ, p))
    dropout = rng.random((FRAMES_10HZ, p)) < 0.05
    visibility[dropout] = 0.0
    # dropped joints keep their last visible center-relative offset
    centers = coords[:, list(spec.center_joints), :].mean(axis=1)
    offsets = coords - centers[:, None, :]
    for j in range(p):
        last = offsets[0, j].copy()
        for i in range(FRAMES_10HZ):
            if dropout[i, j] and i > 0:
                offsets[i, j] = last
            else:
                last = offsets[i, j].copy()
    coords = centers[:, None, :] + offsets
    return KeypointsSequence(coords=coords, visibility=visibility)


# -- scene construction ---------------------------------------------------------

def _default_roadgraph() -> list:
    polys = []
    xs = np.arange(-30.0, 30.1, 5.0)
    for y in LANE_YS:
        pts = np.stack([xs, np.full_like(xs, y)], axis=1)
        polys.append(Polyline.from_points(pts, "lane_boundary"))
    ys = np.array([0.0, 3.5, 7.0])
    for x in CROSSWALK_XS:
        pts = np.stack([np.full_like(ys, x), ys], axis=1)
        polys.append(Polyline.from_points(pts, "crosswalk_edge"))
    return polys


def _context_agents(rng: np.random.Generator) -> list:
    agents = []
    for _ in range(int(rng.integers(0, 5))):
        lane_y = float(rng.choice([1.75, 5.25]))
        direction = 1.0 if lane_y < 3.5 else -1.0
        speed = rng.uniform(3.0, 12.0)
        x0 = rng.uniform(-30.0, 30.0)
        # history track sampled every 0.5 s (5 points -> 4 vectors)
        taus = np.array([-2.0, -1.5, -1.0, -0.5, 0.0])
        pts = np.stack([x0 + direction * speed * taus, np.full_like(taus, lane_y)], axis=1)
        agents.append(Polyline.from_points(pts, "agent_track", time_offsets=taus[:-1]))
    return agents


def _round6(a: np.ndarray) -> np.ndarray:
    return np.round(np.asarray(a, dtype=np.float64), 6)


def _round_polyline(p: Polyline) -> Polyline:
    return Polyline(kind=p.kind, starts=_round6(p.starts), ends=_round6(p.ends), attrs=_round6(p.attrs))


def generate_scene(
    kind: ScenarioKind, rng: np.random.Generator, spec: SkeletonSpec = DEFAULT_SKELETON
) -> Scene:
    if kind in (ScenarioKind.CROSS_WALKWAY, ScenarioKind.CROSS_JAYWALK):
        speed = rng.uniform(0.8, 1.6)
    elif kind is ScenarioKind.PARALLEL_SIDEWALK:
        speed = rng.uniform(0.8, 1.6)
    elif kind is ScenarioKind.WAVE_THEN_CROSS:
        speed = rng.uniform(0.8, 1.4)
    else:
        speed = 0.0

    if kind is ScenarioKind.CROSS_WALKWAY:
        pos = np.array([rng.uniform(-1.0, 1.0), rng.uniform(-0.5, -0.1)])
        theta = math.pi / 2 + rng.uniform(-0.05, 0.05)
    elif kind is ScenarioKind.CROSS_JAYWALK:
        side = rng.choice([-1.0, 1.0])
        pos = np.array([side * rng.uniform(5.0, 25.0), rng.uniform(-0.5, -0.1)])
        theta = math.pi / 2 + rng.uniform(-0.15, 0.15)
    elif kind is ScenarioKind.PARALLEL_SIDEWALK:
        pos = np.array([rng.uniform(-10.0, 10.0), -2.0 + rng.uniform(-0.5, 0.5)])
        theta = 0.0 if rng.random() < 0.5 else math.pi
    elif kind is ScenarioKind.STAND_AT_CURB:
        pos = np.array([rng.uniform(-10.0, 10.0), -0.5 + rng.uniform(-0.3, 0.3)])
        theta = math.pi / 2 + rng.uniform(-0.3, 0.3)
    elif kind is ScenarioKind.BEND_DOWN_ON_ROAD:
        pos = np.array([rng.uniform(-10.0, 10.0), rng.uniform(0.8, 2.5)])
        theta = rng.uniform(0.0, 2.0 * math.pi)
    else:  # wave_then_cross
        pos = np.array([rng.uniform(-1.2, 1.2), -0.5 + rng.uniform(-0.2, 0.2)])
        theta = math.pi / 2 + rng.uniform(-0.1, 0.1)

    gait = generate_gait(kind, speed, rng, spec=spec)
    s = _center_path(kind, speed)
    c, sn = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -sn], [sn, c]])
    path = np.stack([s, np.zeros_like(s)], axis=1) @ rot.T + pos  # (60, 2)

    kp_xy = gait.coords[:, :, :2] @ rot.T + pos
    coords = np.concatenate([kp_xy, gait.coords[:, :, 2:3]], axis=2)

    hist_idx = list(range(T_H))
    scene = Scene(
        target_history=_round6(path[hist_idx]),
        target_future=_round6(path[FUTURE_FRAME_IDX]),
        keypoints_history=KeypointsSequence(
            coords=_round6(coords[hist_idx]), visibility=_round6(gait.visibility[hist_idx])
        ),
        keypoints_future=KeypointsSequence(
            coords=_round6(coords[FUTURE_FRAME_IDX]), visibility=_round6(gait.visibility[FUTURE_FRAME_IDX])
        ),
        crossing_label=1 if kind in CROSSING_KINDS else 0,
        heading=float(np.round(theta, 6)),
        context_agents=[_round_polyline(p) for p in _context_agents(rng)],
        roadgraph=[_round_polyline(p) for p in _default_roadgraph()],
    )
    return scene


# -- dataset file -----------------------------------------------------------------

def _apportion(n: int, mix: dict) -> dict:
    """Largest-remainder apportionment; counts within +-1 of proportion * n."""
    total = sum(mix.values())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"mix proportions must sum to 1, got {total}")
    kinds = sorted(mix.keys(), key=lambda k: k.value)
    exact = {k: mix[k] * n for k in kinds}
    counts = {k: int(math.floor(exact[k])) for k in kinds}
    remainder = n - sum(counts.values())
    by_frac = sorted(kinds, key=lambda k: (-(exact[k] - counts[k]), k.value))
    for k in by_frac[:remainder]:
        counts[k] += 1
    return counts


def generate_scenes(n: int, mix: dict, seed: int, spec: SkeletonSpec = DEFAULT_SKELETON) -> list:
    counts = _apportion(n, mix)
    order = []
    for k in sorted(counts.keys(), key=lambda k: k.value):
        order.extend([k] * counts[k])
    shuffle_rng = np.random.default_rng([seed, 0xD5])
    shuffle_rng.shuffle(order)
    return [generate_scene(kind, np.random.default_rng([seed, i + 1]), spec=spec) for i, kind in enumerate(order)]


def dataset_header(spec: SkeletonSpec = DEFAULT_SKELETON) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "skeleton": spec.to_dict(),
        "t_h": T_H,
        "t_f": T_F,
        "history_hz": HISTORY_HZ,
        "future_hz": FUTURE_HZ,
    }


def write_dataset(scenes: list, path, spec: SkeletonSpec = DEFAULT_SKELETON) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(dataset_header(spec), sort_keys=True) + "\n")
        for scene in scenes:
            fh.write(json.dumps(scene.to_dict(), sort_keys=True) + "\n")


def read_dataset(path) -> tuple[list, SkeletonSpec, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported dataset format version {header.get('format_version')}")
        spec = SkeletonSpec.from_dict(header["skeleton"])
        scenes = [Scene.from_dict(json.loads(line)) for line in fh if line.strip()]
    return scenes, spec, header


def generate_dataset(n: int, mix: dict, seed: int, path, spec: SkeletonSpec = DEFAULT_SKELETON) -> list:
    scenes = generate_scenes(n, mix, seed, spec=spec)
    write_dataset(scenes, path, spec=spec)
    return scenes
