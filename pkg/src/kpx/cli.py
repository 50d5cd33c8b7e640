"""Operator entry point: dataset generation, training, evaluation, inference
and static figure export.

Exit codes: 0 success, 2 usage error, 3 I/O error, 4 artifact incompatibility.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time

import numpy as np

from .constants import NUM_HYPOTHESES, T_F
from .encoders import compute_heading, rotation
from .metrics import evaluate_model
from .model import predict_scene
from .scenario import (
    DEFAULT_MIX,
    UNIFORM_MIX,
    ScenarioKind,
    generate_dataset,
    read_dataset,
)
from .skeleton import DEFAULT_SKELETON
from .training import (
    CheckpointMismatch,
    TrainConfig,
    config_digest,
    load_checkpoint,
    save_checkpoint,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_INCOMPATIBLE = 4


class UsageError(Exception):
    pass


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _default_seed(flag_value) -> int:
    if flag_value is not None:
        return int(flag_value)
    env = os.environ.get("KPX_SEED")
    return int(env) if env else 0


def _write_manifest(out_dir: str, command: str, config: dict, seed: int,
                    inputs: list[str], outputs: list[str], wall_time: float) -> str:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {p: _sha256(p) for p in inputs},
        "outputs": {p: _sha256(p) for p in outputs},
        "wall_time_s": round(wall_time, 3),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _parse_mix(spec: str | None) -> dict:
    if spec is None or spec == "default":
        return dict(DEFAULT_MIX)
    if spec == "uniform":
        return dict(UNIFORM_MIX)
    mix: dict = {}
    try:
        for part in spec.split(","):
            name, weight = part.split("=")
            mix[ScenarioKind(name.strip())] = float(weight)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"bad mix specification {spec!r}: {exc}") from exc
    total = sum(mix.values())
    if abs(total - 1.0) > 1e-9:
        raise UsageError(f"mix weights must sum to 1, got {total}")
    return mix


def _load_config(path: str | None, args) -> TrainConfig:
    base = {}
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            base = json.load(fh)
    # command-line flags override file values
    for flag, key in (("seed", "seed"), ("epochs", "epochs"), ("batch_size", "batch_size")):
        v = getattr(args, flag, None)
        if v is not None:
            base[key] = v
    if "seed" not in base:
        base["seed"] = _default_seed(None)
    try:
        return TrainConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad config: {exc}") from exc


def cmd_gen_data(args) -> int:
    t0 = time.perf_counter()
    mix = _parse_mix(args.mix)
    seed = _default_seed(args.seed)
    os.makedirs(args.out, exist_ok=True)
    data_path = os.path.join(args.out, "dataset.ndjson")
    generate_dataset(args.n, mix, seed, data_path)
    _write_manifest(args.out, "gen-data", {"n": args.n, "mix": {k.value: v for k, v in mix.items()}},
                    seed, [], [data_path], time.perf_counter() - t0)
    return EXIT_OK


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    config = _load_config(args.config, args)
    scenes, spec, _header = read_dataset(args.data)
    params, log = train(scenes, config, spec=spec)
    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, "checkpoint.kpx")
    log_path = os.path.join(args.out, "trainlog.csv")
    cfg_path = os.path.join(args.out, "config.json")
    save_checkpoint(ckpt_path, params, config)
    log.to_csv(log_path)
    with open(cfg_path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(args.out, "train", config.to_dict(), config.seed,
                    [args.data], [ckpt_path, log_path, cfg_path], time.perf_counter() - t0)
    return EXIT_OK


def _load_params(ckpt_path: str, config_path: str | None):
    config = None
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            config = TrainConfig.from_dict(json.load(fh))
    return load_checkpoint(ckpt_path, config=config)


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    scenes, spec, _header = read_dataset(args.data)
    params, _digest = _load_params(args.ckpt, args.config)
    report = evaluate_model(scenes, params, spec)
    os.makedirs(args.report, exist_ok=True)
    json_path = os.path.join(args.report, "report.json")
    csv_path = os.path.join(args.report, "report.csv")
    report.to_json(json_path)
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_csv_row())
    _write_manifest(args.report, "eval", {}, _default_seed(None),
                    [args.data, args.ckpt], [json_path, csv_path], time.perf_counter() - t0)
    return EXIT_OK


def cmd_infer(args) -> int:
    t0 = time.perf_counter()
    scenes, spec, _header = read_dataset(args.data)
    params, _digest = _load_params(args.ckpt, args.config)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "predictions.ndjson")
    with open(out_path, "w", encoding="utf-8") as fh:
        for i, scene in enumerate(scenes):
            pred = predict_scene(scene, params, spec=spec)
            rec = {
                "scene_index": i,
                "crossing_probability": round(pred.crossing_probability, 6),
                "hypotheses": [
                    {"score": round(float(s), 6), "trajectory": np.round(t, 6).tolist()}
                    for t, s in zip(pred.hypotheses.trajectories, pred.hypotheses.scores)
                ],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    _write_manifest(args.out, "infer", {}, _default_seed(None),
                    [args.data, args.ckpt], [out_path], time.perf_counter() - t0)
    return EXIT_OK


# -- plotting (static SVG) ------------------------------------------------------

_SCALE = 20.0  # px per meter


def _svg_path(points: np.ndarray, cx: float, cy: float) -> str:
    cmds = []
    for i, (x, y) in enumerate(points):
        px, py = cx + x * _SCALE, cy - y * _SCALE
        cmds.append(f"{'M' if i == 0 else 'L'} {px:.1f} {py:.1f}")
    return " ".join(cmds)


def render_scene_svg(scene, params, spec) -> str:
    """Target-centric figure: roadgraph, history (solid), ground truth
    (dashed), K hypotheses (width proportional to score), last-frame skeleton."""
    pred = predict_scene(scene, params, spec=spec)
    origin = np.asarray(scene.target_history)[-1]
    rot = rotation(-pred.heading)

    w, h = 700, 700
    cx, cy = w / 2, h / 2
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
    ]
    for poly in scene.roadgraph + scene.context_agents:
        tp = poly.transformed(origin, rot)
        pts = np.vstack([tp.starts, tp.ends[-1:]])
        color = {"lane_boundary": "#999999", "crosswalk_edge": "#cc9900", "agent_track": "#7799cc"}[poly.kind]
        parts.append(f'<path class="roadgraph" d="{_svg_path(pts, cx, cy)}" stroke="{color}" fill="none" stroke-width="1.5"/>')
    parts.append(f'<path class="history" d="{_svg_path(pred.history_tc, cx, cy)}" stroke="#1f4fd8" fill="none" stroke-width="3"/>')
    parts.append(f'<path class="ground-truth" d="{_svg_path(pred.future_tc, cx, cy)}" stroke="#1c8f3a" fill="none" stroke-width="2" stroke-dasharray="6 4"/>')
    for traj, score in zip(pred.hypotheses.trajectories, pred.hypotheses.scores):
        pts = np.vstack([[[0.0, 0.0]], traj])
        width = 0.5 + 5.0 * float(score)
        parts.append(f'<path class="hypothesis" d="{_svg_path(pts, cx, cy)}" stroke="#d42a2a" fill="none" stroke-width="{width:.2f}" opacity="0.8"/>')
    # last observed skeleton, projected to the ground plane
    kp = scene.keypoints_history.coords[-1]
    kp_tc = (kp[:, :2] - origin) @ rot.T
    for a, b in spec.edges:
        pts = np.array([kp_tc[a], kp_tc[b]])
        parts.append(f'<path class="skeleton" d="{_svg_path(pts, cx, cy)}" stroke="#444444" fill="none" stroke-width="1"/>')
    parts.append(f'<text x="10" y="20" font-size="14">crossing probability: {pred.crossing_probability:.3f}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_plot(args) -> int:
    t0 = time.perf_counter()
    scenes, spec, _header = read_dataset(args.data)
    if not 0 <= args.scene_index < len(scenes):
        raise UsageError(f"scene index {args.scene_index} out of range [0, {len(scenes)})")
    params, _digest = _load_params(args.ckpt, args.config)
    os.makedirs(args.out, exist_ok=True)
    svg_path = os.path.join(args.out, f"scene_{args.scene_index}.svg")
    svg = render_scene_svg(scenes[args.scene_index], params, spec)
    with open(svg_path, "w", encoding="utf-8") as fh:
        fh.write(svg)
    _write_manifest(args.out, "plot", {"scene_index": args.scene_index}, _default_seed(None),
                    [args.data, args.ckpt], [svg_path], time.perf_counter() - t0)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="kpx",
        description="Pedestrian crossing recognition and trajectory prediction toolkit. "
        "Config precedence: built-in defaults < --config file < command-line flags. "
        "KPX_SEED acts as a global seed fallback.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--mix", type=str, default=None,
                   help="'kind=weight,...' or preset name ('default', 'uniform')")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--out", type=str, required=True)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data", type=str, required=True)
    t.add_argument("--config", type=str, default=None, help="JSON file mirroring TrainConfig fields")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    t.add_argument("--out", type=str, required=True)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--data", type=str, required=True)
    e.add_argument("--ckpt", type=str, required=True)
    e.add_argument("--config", type=str, default=None, help="config to validate the checkpoint digest against")
    e.add_argument("--report", type=str, required=True, help="output directory")
    e.set_defaults(fn=cmd_eval)

    i = sub.add_parser("infer", help="write per-scene predictions")
    i.add_argument("--data", type=str, required=True)
    i.add_argument("--ckpt", type=str, required=True)
    i.add_argument("--config", type=str, default=None)
    i.add_argument("--out", type=str, required=True)
    i.set_defaults(fn=cmd_infer)

    pl = sub.add_parser("plot", help="export a static SVG figure for one scene")
    pl.add_argument("--data", type=str, required=True)
    pl.add_argument("--ckpt", type=str, required=True)
    pl.add_argument("--config", type=str, default=None)
    pl.add_argument("--scene-index", dest="scene_index", type=int, required=True)
    pl.add_argument("--out", type=str, required=True)
    pl.set_defaults(fn=cmd_plot)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckpointMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except (OSError, IOError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
