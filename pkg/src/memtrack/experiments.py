"""Synthetic suites, desk-scale training, ablation grids and read timing."""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
import time
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .data import SequenceRecord, SequenceSpec, synth_sequence
from .features import BackboneConfig
from .metrics import METRIC_NOTES, aggregate, metrics
from .model import ModelConfig, TrackerNet
from .reader import read_blocked
from .tracker import TrackerConfig, track_sequence
from .train import TrainConfig, train

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------


def random_spec(rng: np.random.Generator, kind: str = "mixed", length: int = 80, name: str = "seq") -> SequenceSpec:
    """Draw a sequence recipe.

    ``occlusion``: repeated partial occlusions plus appearance drift, a few
    wandering distractors and one that stays close to the target.
    ``clutter``: several distractors drawn from the same appearance
    distribution as the target, one or two of them close by. ``static``: no
    motion at all. ``mixed`` picks one of the first two with random strengths.
    """
    side = float(rng.uniform(16, 24))
    aspect = float(np.exp(rng.uniform(-0.3, 0.3)))
    size = (side * math.sqrt(aspect), side / math.sqrt(aspect))
    base = dict(length=length, target_size=size, shape=str(rng.choice(["rect", "ellipse"])), name=name)
    if kind == "mixed":
        kind = str(rng.choice(["occlusion", "clutter"]))
    if kind == "occlusion":
        spans = []
        start = int(rng.integers(8, 20))
        while start < length - 8:
            dur = int(rng.integers(6, 14))
            spans.append((start, min(start + dur, length), float(rng.uniform(0.4, 0.7))))
            start += dur + int(rng.integers(8, 20))
        return SequenceSpec(
            **base,
            speed=float(rng.uniform(1.0, 2.0)),
            occluders=spans,
            deformation=float(rng.uniform(0.1, 0.3)),
            color_drift=float(rng.uniform(0.7, 1.0)),
            clutter=int(rng.integers(1, 3)),
            followers=1,
        )
    if kind == "clutter":
        return SequenceSpec(
            **base,
            speed=float(rng.uniform(1.0, 2.0)),
            deformation=float(rng.uniform(0.0, 0.15)),
            color_drift=float(rng.uniform(0.0, 0.3)),
            clutter=int(rng.integers(2, 4)),
            followers=int(rng.integers(1, 3)),
        )
    if kind == "static":
        return SequenceSpec(**base, motion="static", clutter=0)
    raise ValueError(f"unknown suite kind {kind!r}")


def make_suite(kind: str, count: int, seed: int, length: int = 80) -> list[SequenceRecord]:
    rng = np.random.default_rng([seed, zlib_hash(kind)])
    out = []
    for i in range(count):
        spec = random_spec(rng, kind, length, name=f"{kind}_{seed}_{i:03d}")
        out.append(synth_sequence(spec, int(rng.integers(2**31))))
    return out


def zlib_hash(text: str) -> int:
    return int(hashlib.sha256(text.encode()).hexdigest()[:8], 16)


# ---------------------------------------------------------------------------
# desk-scale presets
# ---------------------------------------------------------------------------


def desk_model_config(patch_size: int = 289, **backbone) -> ModelConfig:
    return ModelConfig(backbone=BackboneConfig(**backbone), patch_size=patch_size)


TREND_PATCH = 129  # grid 17; keeps train + evaluate inside half an hour on one core


def trend_train_config(seed: int = 0, steps: int = 3000) -> TrainConfig:
    """Training schedule shared by the memory-size and label-map trend checks."""
    return TrainConfig(
        epochs=1,
        steps_per_epoch=steps,
        batch_size=4,
        warmup_steps=50,
        base_lr=3e-4,
        peak_lr=3e-3,  # 1e-2 flattens the memory attention within ~100 steps
        seed=seed,
        log_every=250,
    )


def suite_scores(model: TrackerNet, kind: str, seeds: Sequence[int], cfg: TrackerConfig, count: int = 20, length: int = 80) -> dict:
    """Per-seed suite AO plus the median per-frame and read-stage wall times."""
    ao, frame, read_t = [], [], []
    for s in seeds:
        rows = []
        for seq in make_suite(kind, count, s, length):
            sessions: list = []
            res = track_sequence(model, seq, cfg, session_out=sessions)
            rows.append(metrics([b for b, _ in res[1:]], seq.gt_boxes[1:]))
            frame.extend(t["total"] for t in sessions[0].timings)
            read_t.extend(t["read"] for t in sessions[0].timings)
        ao.append(aggregate(rows, ["AO"])["AO"])
    return {"AO": ao, "frame_time": float(np.median(frame)), "read_time": float(np.median(read_t))}


def train_desk_model(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    train_suite: Sequence[SequenceRecord] | None = None,
    progress: Callable[[dict], None] | None = None,
) -> tuple[TrackerNet, list[dict]]:
    if train_suite is None:
        train_suite = make_suite("mixed", 64, seed=10_000 + train_cfg.seed, length=100)
    model = TrackerNet(model_cfg)
    history = train(model, train_suite, train_cfg, progress=progress)
    return model, history


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def evaluate_suite(model: TrackerNet, suite: Sequence[SequenceRecord], cfg: TrackerConfig) -> dict:
    """Track every sequence (frame 1 excluded from the metrics)."""
    rows = []
    frame_time = []
    for seq in suite:
        sessions: list = []
        res = track_sequence(model, seq, cfg, session_out=sessions)
        preds = [b for b, _ in res[1:]]
        row = {"sequence": seq.name, "frames": len(preds), **metrics(preds, seq.gt_boxes[1:])}
        rows.append(row)
        frame_time.extend(t["total"] for t in sessions[0].timings)
    agg = aggregate(rows, list(METRIC_NOTES))
    return {"rows": rows, "aggregate": agg, "median_frame_time": float(np.median(frame_time))}


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:12]


@dataclass
class AblationResult:
    config: dict
    per_seed: list[dict]  # aggregate metrics per suite seed
    mean: dict
    std: dict
    frame_time: float


def ablate(
    configs: Sequence[dict],
    suite_kind: str,
    seeds: Iterable[int],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    suite_size: int = 20,
    suite_length: int = 80,
    models: dict | None = None,
    progress: Callable[[str], None] | None = None,
) -> list[AblationResult]:
    """Evaluate each config on ``len(seeds)`` independently generated suites.

    Config keys ``share_backbone`` and ``use_label_map`` change the trained
    model; ``memory_size``, ``delta`` and ``literal_sampling`` only change
    inference. Models are trained once per distinct model-side setting and
    shared through ``models`` (a cache dict the caller may pass in).
    """
    seeds = list(seeds)
    models = {} if models is None else models
    suites = {s: make_suite(suite_kind, suite_size, s, suite_length) for s in seeds}
    results = []
    for conf in configs:
        bb = {k: conf[k] for k in ("share_backbone", "use_label_map") if k in conf}
        key = config_hash(bb)
        if key not in models:
            mc = replace(model_cfg, backbone=replace(model_cfg.backbone, **bb))
            if progress:
                progress(f"training model {bb}")
            models[key], _ = train_desk_model(mc, train_cfg)
        model = models[key]
        tcfg = TrackerConfig(
            memory_size=conf.get("memory_size", 6),
            delta=conf.get("delta", 0.5),
            literal_sampling=conf.get("literal_sampling", False),
        )
        per_seed, times = [], []
        for s in seeds:
            ev = evaluate_suite(model, suites[s], tcfg)
            per_seed.append(ev["aggregate"])
            times.append(ev["median_frame_time"])
            if progress:
                progress(f"{conf} seed {s}: AO={ev['aggregate']['AO']:.4f}")
        keys = list(per_seed[0])
        mean = {k: float(np.mean([p[k] for p in per_seed])) for k in keys}
        std = {k: float(np.std([p[k] for p in per_seed], ddof=1)) if len(per_seed) > 1 else 0.0 for k in keys}
        results.append(AblationResult(dict(conf), per_seed, mean, std, float(np.median(times))))
    return results


def ablation_rows(results: Sequence[AblationResult]) -> list[dict]:
    rows = []
    for r in results:
        row = {k: r.config[k] for k in sorted(r.config)}
        for k in METRIC_NOTES:
            row[f"{k}_mean"] = r.mean[k]
            row[f"{k}_std"] = r.std[k]
        row["frame_time_s"] = r.frame_time
        rows.append(row)
    return rows


def expand_grid(grid: dict[str, list]) -> list[dict]:
    keys = list(grid)
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


# ---------------------------------------------------------------------------
# timing
# ---------------------------------------------------------------------------


def bench_read(
    shapes: Sequence[tuple[int, int, int]],
    T_list: Sequence[int] = (1, 2, 4, 6, 8),
    repeats: int = 20,
    warmup: int = 3,
    seed: int = 0,
    tile: int = 512,
) -> list[dict]:
    """Median wall time of :func:`read_blocked` per ``(C, H, W)`` shape and memory length T."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    rng = np.random.default_rng(seed)
    rows = []
    for c, h, w in shapes:
        query = rng.standard_normal((c, h, w)).astype(np.float32)
        for T in sorted(T_list):
            memory = rng.standard_normal((T * h * w, c)).astype(np.float32)
            for _ in range(warmup):
                read_blocked(memory, query, tile)
            times = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                read_blocked(memory, query, tile)
                times.append(time.perf_counter() - t0)
            rows.append({"C": c, "H": h, "W": w, "T": T, "median_s": float(np.median(times)), "repeats": repeats})
    return rows


def monotone_in_T(rows: Sequence[dict]) -> bool:
    """True if, per shape, median time strictly increases with T."""
    by_shape: dict = {}
    for r in rows:
        by_shape.setdefault((r["C"], r["H"], r["W"]), []).append((r["T"], r["median_s"]))
    return all(all(b[1] > a[1] for a, b in zip(v, v[1:])) for v in (sorted(x) for x in by_shape.values()))
