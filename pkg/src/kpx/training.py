"""Joint loss assembly, optimizer, schedule and the seeded training loop."""

from __future__ import annotations

import collections
import dataclasses
import hashlib
import json
import math
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Value
from .constants import SEGMENTS
from .model import ExampleLosses, forward_example, init_params
from .encoders import prepare_scene
from .heads import loss_kcl
from .skeleton import DEFAULT_SKELETON, SkeletonSpec

CHECKPOINT_MAGIC = b"KPXF"
CHECKPOINT_VERSION = 1

LOSS_COMPONENTS = ("ar", "tp", "kjp", "kp", "kcl")


@dataclass
class TrainConfig:
    lambda_ar: float = 1.0
    lambda_tp: float = 1.0
    lambda_kjp: float = 0.01
    lambda_kp: float = 0.01
    lambda_kcl: float = 0.0001
    batch_size: int = 32
    epochs: int = 15
    initial_lr: float = 0.01
    warmup_epochs: int = 3
    decay_factor: float = 0.5
    decay_every_epochs: int = 3
    segments: int = SEGMENTS
    beta: float = 1.0
    seed: int = 0
    early_stop_patience: "int | None" = 3
    grad_clip_norm: float = 5.0
    val_fraction: float = 0.1
    zero_keypoints: bool = False
    tail_average_epochs: int = 0

    def __post_init__(self):
        for name in ("lambda_ar", "lambda_tp", "lambda_kjp", "lambda_kp", "lambda_kcl"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.lambda_kcl > 0 and self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 when the contrastive weight is positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.tail_average_epochs < 0:
            raise ValueError("tail_average_epochs must be non-negative")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(TrainConfig)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return TrainConfig(**d)


def config_digest(config: TrainConfig) -> bytes:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).digest()


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    diverged: bool = False
    stopped_epoch: "int | None" = None

    def append(self, **kv) -> None:
        self.records.append(kv)

    def to_csv(self, path) -> None:
        if not self.records:
            raise ValueError("empty training log")
        cols = list(self.records[0].keys())
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(cols) + "\n")
            for r in self.records:
                fh.write(",".join(f"{r[c]:.6g}" if isinstance(r[c], float) else str(r[c]) for c in cols) + "\n")


def total_loss(components: dict[str, Value], weights: dict[str, float]) -> Value:
    """Weighted sum over the five loss components; aborts on non-finite terms."""
    total = None
    for name in LOSS_COMPONENTS:
        w = weights.get(name, 0.0)
        if w == 0.0:
            continue
        comp = components.get(name)
        if comp is None:
            continue
        if not np.isfinite(comp.data):
            raise FloatingPointError(f"loss component {name!r} is non-finite")
        term = Value(w) * comp
        total = term if total is None else total + term
    return total if total is not None else Value(0.0)


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Linear warmup to the initial rate, then stepwise decay."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if epoch < config.warmup_epochs:
        return config.initial_lr * (epoch + 1) / config.warmup_epochs
    steps = (epoch - config.warmup_epochs) // config.decay_every_epochs
    return config.initial_lr * config.decay_factor ** steps


class AdamOptimizer:
    """Standard adaptive-moment optimizer with bias correction."""

    def __init__(self, params: dict[str, Value], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.t = 0

    def step(self, lr: float, clip_norm: float | None = None) -> None:
        grads = {k: p.grad_array() for k, p in self.params.items()}
        if clip_norm is not None:
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > clip_norm:
                scale = clip_norm / norm
                grads = {k: g * scale for k, g in grads.items()}
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p.data -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def _batch_components(
    batch: list,
    params: dict[str, Value],
    config: TrainConfig,
    spec: SkeletonSpec,
    rng: np.random.Generator,
) -> dict[str, Value]:
    """Mean loss components over a batch (given as (index, scene, prepared)
    triples, iterated in ascending dataset index)."""
    with_kjp = config.lambda_kjp > 0
    with_kp = config.lambda_kp > 0
    with_kcl = config.lambda_kcl > 0 and len(batch) >= 2

    sums: dict[str, Value] = {}
    kcl_views: list[Value] = []
    for _idx, scene, prep in sorted(batch, key=lambda b: b[0]):
        ex: ExampleLosses = forward_example(
            prep, params, spec, scene=scene, rng=rng,
            with_kjp=with_kjp, with_kp=with_kp, with_kcl=with_kcl,
            zero_keypoints=config.zero_keypoints, segments=config.segments,
        )
        terms = {"ar": ex.ar, "tp": ex.tp}
        if ex.kjp is not None:
            terms["kjp"] = ex.kjp
        if ex.kp is not None:
            terms["kp"] = ex.kp
        for name, v in terms.items():
            sums[name] = v if name not in sums else sums[name] + v
        kcl_views.extend(ex.kcl_views)

    n = Value(float(len(batch)))
    comps = {name: s / n for name, s in sums.items()}
    if kcl_views:
        comps["kcl"] = loss_kcl(kcl_views, config.beta)
    return comps


def _stratified_split(scenes: list, val_fraction: float, rng: np.random.Generator) -> tuple[list[int], list[int]]:
    by_label: dict[int, list[int]] = {0: [], 1: []}
    for i, s in enumerate(scenes):
        by_label[int(s.crossing_label)].append(i)
    train_idx: list[int] = []
    val_idx: list[int] = []
    for label in (0, 1):
        idx = np.array(by_label[label], dtype=int)
        rng.shuffle(idx)
        n_val = int(round(len(idx) * val_fraction))
        val_idx.extend(idx[:n_val].tolist())
        train_idx.extend(idx[n_val:].tolist())
    return sorted(train_idx), sorted(val_idx)


def train(
    dataset: list,
    config: TrainConfig,
    spec: SkeletonSpec = DEFAULT_SKELETON,
    params: dict[str, Value] | None = None,
    epoch_callback=None,
) -> tuple[dict[str, Value], TrainLog]:
    """Seeded multi-task training; returns the best parameters (by validation
    loss when a validation split exists) and the per-epoch log.

    With ``tail_average_epochs = N > 0`` the returned parameters are instead
    the elementwise mean of the last N epochs' snapshots.  Once the learning
    rate has annealed, consecutive snapshots orbit the same minimum, and their
    average is a lower-variance point in it than any single epoch.

    ``epoch_callback``, if given, is called after every epoch as
    ``epoch_callback(epoch, params, record)`` — useful for periodic
    checkpointing or custom monitoring."""
    if not dataset:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(config.seed)
    params = params if params is not None else init_params(config.seed, spec=spec, segments=config.segments)
    optimizer = AdamOptimizer(params)
    weights = {
        "ar": config.lambda_ar, "tp": config.lambda_tp,
        "kjp": config.lambda_kjp, "kp": config.lambda_kp, "kcl": config.lambda_kcl,
    }

    train_idx, val_idx = _stratified_split(dataset, config.val_fraction, rng)
    if not train_idx:
        raise ValueError("validation split left no training examples")
    prepared = {i: prepare_scene(dataset[i], spec) for i in set(train_idx) | set(val_idx)}

    log = TrainLog()
    best_val = math.inf
    best_snapshot = {k: v.data.copy() for k, v in params.items()}
    best_epoch = -1
    bad_epochs = 0
    tail = collections.deque(maxlen=config.tail_average_epochs or None) if config.tail_average_epochs else None

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        lr = lr_schedule(epoch, config)
        order = np.array(train_idx, dtype=int)
        rng.shuffle(order)

        comp_sums = {name: 0.0 for name in LOSS_COMPONENTS}
        comp_counts = {name: 0 for name in LOSS_COMPONENTS}
        total_sum = 0.0
        n_batches = 0
        diverged = False
        for start in range(0, len(order), config.batch_size):
            batch_idx = order[start:start + config.batch_size]
            batch = [(int(i), dataset[int(i)], prepared[int(i)]) for i in batch_idx]
            optimizer.zero_grad()
            comps = _batch_components(batch, params, config, spec, rng)
            try:
                loss = total_loss(comps, weights)
            except FloatingPointError:
                diverged = True
                break
            ad.backward(loss)
            optimizer.step(lr, clip_norm=config.grad_clip_norm)
            total_sum += float(loss.data)
            n_batches += 1
            for name in LOSS_COMPONENTS:
                if name in comps:
                    comp_sums[name] += float(comps[name].data)
                    comp_counts[name] += 1

        if diverged or not np.isfinite(total_sum):
            log.diverged = True
            log.stopped_epoch = epoch
            break

        val_total = math.nan
        val_main = math.nan
        if val_idx:
            val_rng = np.random.default_rng([config.seed, 1000 + epoch])
            val_total = 0.0
            val_main = 0.0
            main_weights = {"ar": config.lambda_ar, "tp": config.lambda_tp}
            with ad.no_grad():
                for start in range(0, len(val_idx), config.batch_size):
                    vb = [(i, dataset[i], prepared[i]) for i in val_idx[start:start + config.batch_size]]
                    comps = _batch_components(vb, params, config, spec, val_rng)
                    val_total += float(total_loss(comps, weights).data) * len(vb)
                    val_main += float(total_loss(comps, main_weights).data) * len(vb)
            val_total /= len(val_idx)
            val_main /= len(val_idx)

        record = {"epoch": epoch, "lr": lr, "total": total_sum / max(n_batches, 1), "val_total": val_total,
                  "val_main": val_main, "seconds": time.perf_counter() - t0}
        for name in LOSS_COMPONENTS:
            record[f"loss_{name}"] = comp_sums[name] / comp_counts[name] if comp_counts[name] else 0.0
        log.append(**record)
        if tail is not None:
            tail.append({k: v.data.copy() for k, v in params.items()})
        if epoch_callback is not None:
            epoch_callback(epoch, params, record)

        # Select and early-stop on the main tasks only: the auxiliary objectives
        # are training scaffolds, so their validation progress must not pick a
        # snapshot whose action/trajectory quality has already regressed.
        monitor = val_main if val_idx else record["total"]
        if monitor < best_val:
            best_val = monitor
            best_snapshot = {k: v.data.copy() for k, v in params.items()}
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if config.early_stop_patience is not None and val_idx and bad_epochs > config.early_stop_patience:
                log.stopped_epoch = epoch
                break

    if tail:
        for k, v in params.items():
            v.data = np.mean([snap[k] for snap in tail], axis=0)
            v.zero_grad()
    else:
        for k, v in params.items():
            v.data = best_snapshot[k]
            v.zero_grad()
    if log.records:
        log.records[-1].setdefault("best_epoch", best_epoch)
    return params, log


# -- checkpoint file -----------------------------------------------------------

def save_checkpoint(path, params: dict[str, Value], config: TrainConfig) -> None:
    digest = config_digest(config)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(digest)
        names = sorted(params.keys())
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            data = params[name].data
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", data.ndim))
            for d in data.shape:
                fh.write(struct.pack("<I", d))
            fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


class CheckpointMismatch(RuntimeError):
    """Checkpoint incompatible with the requested config."""


def load_checkpoint(path, config: TrainConfig | None = None) -> tuple[dict[str, Value], bytes]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointMismatch(f"bad magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointMismatch(f"unsupported checkpoint version {version}")
        digest = fh.read(32)
        if config is not None and digest != config_digest(config):
            raise CheckpointMismatch("checkpoint config digest mismatch")
        (count,) = struct.unpack("<I", fh.read(4))
        params: dict[str, Value] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape).copy()
            params[name] = Value(data, requires_grad=True, name=name)
    return params, digest
