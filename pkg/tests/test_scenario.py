"""Generator statistics, geometric label consistency and dataset
serialization."""

import numpy as np
import pytest

from kpx.constants import T_F, T_H
from kpx.scenario import (
    CROSSING_KINDS,
    DEFAULT_MIX,
    UNIFORM_MIX,
    ScenarioKind,
    _apportion,
    generate_gait,
    generate_scene,
    generate_scenes,
    read_dataset,
    write_dataset,
)
from kpx.skeleton import DEFAULT_SKELETON

NOSE = DEFAULT_SKELETON.joint_names.index("nose")
L_ANKLE = DEFAULT_SKELETON.joint_names.index("l_ankle")
R_ANKLE = DEFAULT_SKELETON.joint_names.index("r_ankle")


# -- gait model -------------------------------------------------------------------

def test_standing_gait_is_stationary():
    gait = generate_gait(ScenarioKind.STAND_AT_CURB, 0.0, np.random.default_rng(0))
    centers = gait.centers(DEFAULT_SKELETON)
    assert np.all(np.linalg.norm(centers - centers[0], axis=1) < 0.05)


def test_bend_down_lowers_nose():
    standing, bent = [], []
    for seed in range(100):
        s = generate_gait(ScenarioKind.STAND_AT_CURB, 0.0, np.random.default_rng(seed))
        b = generate_gait(ScenarioKind.BEND_DOWN_ON_ROAD, 0.0, np.random.default_rng(seed))
        standing.append(s.coords[:, NOSE, 2].mean())
        bent.append(b.coords[:, NOSE, 2].mean())
    assert np.mean(bent) < 0.6 * np.mean(standing)


def test_legs_move_in_antiphase_when_walking():
    corrs = []
    for seed in range(20):
        gait = generate_gait(ScenarioKind.CROSS_WALKWAY, 1.4, np.random.default_rng(seed))
        centers = gait.centers(DEFAULT_SKELETON)
        left = gait.coords[:, L_ANKLE, 0] - centers[:, 0]
        right = gait.coords[:, R_ANKLE, 0] - centers[:, 0]
        corrs.append(np.corrcoef(left, right)[0, 1])
    assert np.mean(corrs) < 0.0


def test_wave_raises_right_wrist_in_history_only():
    gait = generate_gait(ScenarioKind.WAVE_THEN_CROSS, 1.0, np.random.default_rng(1),
                         noise_sigma=0.0)
    r_wrist = DEFAULT_SKELETON.joint_names.index("r_wrist")
    r_shoulder = DEFAULT_SKELETON.joint_names.index("r_shoulder")
    assert np.all(gait.coords[:T_H, r_wrist, 2] > gait.coords[:T_H, r_shoulder, 2])
    assert np.all(gait.coords[T_H + 15:, r_wrist, 2] < gait.coords[T_H + 15:, r_shoulder, 2])


def test_gait_rejects_out_of_range_speed():
    with pytest.raises(ValueError):
        generate_gait(ScenarioKind.CROSS_WALKWAY, 3.0, np.random.default_rng(0))


def test_gait_visibility_dropout_in_range():
    gait = generate_gait(ScenarioKind.CROSS_WALKWAY, 1.0, np.random.default_rng(2))
    v = gait.visibility
    assert np.all((v == 0.0) | ((v >= 0.8) & (v <= 1.0)))
    assert np.any(v == 0.0)  # 5% dropout over 60x13 samples


# -- scene construction ------------------------------------------------------------

@pytest.mark.parametrize("kind", list(ScenarioKind))
def test_scene_labels_match_kind(kind):
    scene = generate_scene(kind, np.random.default_rng(3))
    assert scene.crossing_label == (1 if kind in CROSSING_KINDS else 0)
    assert scene.target_history.shape == (T_H, 2)
    assert scene.target_future.shape == (T_F, 2)


def test_parallel_sidewalk_stays_off_the_road():
    for seed in range(100):
        scene = generate_scene(ScenarioKind.PARALLEL_SIDEWALK, np.random.default_rng(seed))
        assert scene.crossing_label == 0
        assert np.all(scene.target_future[:, 1] < 0.0)  # road edge is y = 0


def test_cross_walkway_enters_the_road():
    for seed in range(100):
        scene = generate_scene(ScenarioKind.CROSS_WALKWAY, np.random.default_rng(seed))
        assert scene.target_history[-1, 1] < 0.0
        assert np.any(scene.target_future[:, 1] > 0.0)


def test_scene_coordinates_rounded_to_6_decimals():
    scene = generate_scene(ScenarioKind.CROSS_JAYWALK, np.random.default_rng(4))
    for arr in (scene.target_history, scene.target_future,
                scene.keypoints_history.coords, scene.keypoints_history.visibility):
        np.testing.assert_array_equal(arr, np.round(arr, 6))


def test_scene_dict_round_trip():
    from kpx.scenario import Scene
    scene = generate_scene(ScenarioKind.WAVE_THEN_CROSS, np.random.default_rng(5))
    assert Scene.from_dict(scene.to_dict()) == scene


# -- dataset assembly ---------------------------------------------------------------

def test_apportion_uniform_100_within_rounding():
    counts = _apportion(100, UNIFORM_MIX)
    assert sum(counts.values()) == 100
    assert all(c in (16, 17) for c in counts.values())


def test_apportion_rejects_unnormalized_mix():
    with pytest.raises(ValueError):
        _apportion(10, {ScenarioKind.CROSS_WALKWAY: 0.7})


def test_default_mix_sums_to_one_and_matches_imbalance():
    assert abs(sum(DEFAULT_MIX.values()) - 1.0) < 1e-12
    pos = sum(w for k, w in DEFAULT_MIX.items() if k in CROSSING_KINDS)
    assert abs((1.0 - pos) / pos - 2.47) < 0.02


def test_generate_scenes_counts_follow_mix():
    scenes = generate_scenes(100, DEFAULT_MIX, seed=6)
    labels = [s.crossing_label for s in scenes]
    expected_pos = round(100 * sum(w for k, w in DEFAULT_MIX.items() if k in CROSSING_KINDS))
    assert abs(sum(labels) - expected_pos) <= 3  # largest-remainder slack per kind


def test_dataset_write_is_deterministic(tmp_path):
    scenes = generate_scenes(10, UNIFORM_MIX, seed=7)
    p1, p2 = tmp_path / "a.ndjson", tmp_path / "b.ndjson"
    write_dataset(scenes, p1)
    write_dataset(generate_scenes(10, UNIFORM_MIX, seed=7), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_dataset_round_trip(tmp_path):
    scenes = generate_scenes(8, UNIFORM_MIX, seed=8)
    path = tmp_path / "d.ndjson"
    write_dataset(scenes, path)
    loaded, spec, header = read_dataset(path)
    assert spec == DEFAULT_SKELETON
    assert header["t_h"] == T_H and header["t_f"] == T_F
    assert len(loaded) == len(scenes)
    assert all(a == b for a, b in zip(loaded, scenes))


def test_dataset_rejects_unknown_format_version(tmp_path):
    path = tmp_path / "bad.ndjson"
    path.write_text('{"format_version": 99}\n')
    with pytest.raises(ValueError):
        read_dataset(path)
