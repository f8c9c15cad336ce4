"""Command line: ``python -m memtrack <gen|train|track|eval|ablate|bench> ...``.

Exit codes: 0 success, 2 invalid argument or input, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .data import SequenceSpec, is_sequence_dir, load_suite, read_boxes, save_sequence, synth_sequence
from .experiments import ablate, ablation_rows, bench_read, expand_grid, make_suite, monotone_in_T
from .head import DecodeConfig
from .metrics import METRIC_NOTES, aggregate, metrics
from .model import TrackerNet, load_model
from .tracker import TrackerConfig, read_results, track_sequence, write_results
from .train import train

log = logging.getLogger("memtrack")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_RUNTIME = 3


class UsageError(ValueError):
    pass


def _write_csv(path, rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        out = csv.DictWriter(fh, fieldnames=list(rows[0]))
        out.writeheader()
        out.writerows(rows)


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    values = cfgmod.load(args.spec)
    count = int(values.pop("count", 1))
    out = Path(args.out)
    if "kind" in values:
        kind = values.pop("kind")
        length = int(values.pop("length", 80))
        if values:
            raise cfgmod.ConfigError(f"suite specs take only kind/count/length, got extra {sorted(values)}")
        suite = make_suite(kind, count, args.seed, length)
    else:
        spec = cfgmod._build(SequenceSpec, values)
        spec.validate()
        rng = np.random.default_rng(args.seed)
        suite = []
        for i in range(count):
            s = dataclasses.replace(spec, name=f"{spec.name}_{i:03d}" if count > 1 else spec.name)
            suite.append(synth_sequence(s, int(rng.integers(2**31))))
    for seq in suite:
        save_sequence(seq, out / seq.name)
    log.info("wrote %d sequences to %s", len(suite), out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    train_cfg, model_cfg = cfgmod.training_configs(cfgmod.load(args.config))
    suite = load_suite(args.data)
    if not suite:
        raise UsageError(f"no sequences under {args.data}")
    model = TrackerNet(model_cfg)
    log_path = args.log or str(Path(args.out).with_suffix(".log.jsonl"))
    t0 = time.perf_counter()
    train(
        model,
        suite,
        train_cfg,
        log_path=log_path,
        checkpoint_path=args.out,
        progress=lambda r: log.info("step %d lr %.5f loss %.4f", r["step"], r["lr"], r["loss"]),
    )
    log.info("trained %d steps in %.1fs -> %s", train_cfg.total_steps, time.perf_counter() - t0, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# track
# ---------------------------------------------------------------------------


def _memory_size(text: str):
    if text.lower() in ("all", "none"):
        return None
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("memory size must be >= 1 or 'all'")
    return n


def tracker_config_from_args(args, model: TrackerNet) -> TrackerConfig:
    if args.share_backbone and not model.cfg.share_backbone:
        raise UsageError("--share-backbone: checkpoint was trained with separate memory and query backbones")
    decode = DecodeConfig()
    if args.decode_config:
        decode = cfgmod.decode_config(cfgmod.load(args.decode_config))
    return TrackerConfig(
        memory_size=args.memory_size,
        delta=args.delta,
        literal_sampling=args.literal_sampling,
        decode=decode,
        use_label_map=not args.no_fb_label,
    )


def cmd_track(args) -> int:
    model, _ = load_model(args.ckpt)
    tcfg = tracker_config_from_args(args, model)
    seq_path = Path(args.seq)
    multi = not is_sequence_dir(seq_path)
    suite = load_suite(seq_path)
    if not suite:
        raise UsageError(f"no sequences under {seq_path}")
    trace_fh = open(args.trace, "w") if args.trace else None
    try:
        for seq in suite:
            trace: list | None = [] if trace_fh else None
            results = track_sequence(model, seq, tcfg, trace=trace)
            out = Path(args.out) / f"{seq.name}.csv" if multi else Path(args.out)
            out.parent.mkdir(parents=True, exist_ok=True)
            write_results(out, results)
            if trace_fh:
                trace_fh.writelines(f"{seq.name} {line}\n" for line in trace)
            log.info("%s: %d frames -> %s", seq.name, len(results), out)
    finally:
        if trace_fh:
            trace_fh.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def evaluate_files(pairs: list[tuple[str, Path, Path]]) -> dict:
    """Per-sequence metric rows from ``(name, results.csv, groundtruth.txt)`` triples.

    Frame 1 is the initialization and is left out of every metric.
    """
    rows = []
    for name, res_path, gt_path in pairs:
        preds = [b for b, _ in read_results(res_path)]
        gts = read_boxes(gt_path)
        if len(preds) != len(gts):
            raise UsageError(f"{name}: {len(preds)} result rows for {len(gts)} ground-truth boxes")
        rows.append({"sequence": name, "frames": len(preds) - 1, **metrics(preds[1:], gts[1:])})
    return {"rows": rows, "aggregate": aggregate(rows, list(METRIC_NOTES))}


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    gt = Path(args.gt)
    res = Path(args.results)
    if is_sequence_dir(gt):
        if res.is_dir():
            res = res / f"{gt.name}.csv"
        pairs = [(gt.name, res, gt / "groundtruth.txt")]
    else:
        seq_dirs = sorted(p for p in gt.iterdir() if is_sequence_dir(p))
        if not seq_dirs:
            raise UsageError(f"no sequences under {gt}")
        pairs = [(d.name, res / f"{d.name}.csv", d / "groundtruth.txt") for d in seq_dirs]
    for _, r, _ in pairs:
        if not r.exists():
            raise UsageError(f"missing results file {r}")
    report = evaluate_files(pairs)
    report = {
        "metric_definitions": METRIC_NOTES,
        "suite": "synthetic" if not args.suite_label else args.suite_label,
        "metadata": {
            "results": str(res),
            "gt": str(gt),
            "results_hash": {name: _file_hash(r) for name, r, _ in pairs},
            "eval_seconds": time.perf_counter() - t0,
        },
        **report,
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=1))
    agg = report["aggregate"]
    log.info("AO %.4f  SR@0.5 %.4f  success %.4f", agg["AO"], agg["SR@0.5"], agg["success_auc"])
    return EXIT_OK


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------


def cmd_ablate(args) -> int:
    values = cfgmod.load(args.grid)
    suite_kind = values.pop("suite", "occlusion")
    suite_size = int(values.pop("suite_size", 20))
    suite_length = int(values.pop("suite_length", 80))
    axes = {k: values.pop(k) for k in list(values) if isinstance(values[k], list)}
    for k in axes:
        if k not in ("memory_size", "delta", "literal_sampling", "share_backbone", "use_label_map"):
            raise cfgmod.ConfigError(f"cannot sweep {k!r}")
    train_cfg, model_cfg = cfgmod.training_configs(values)
    configs = expand_grid(axes) if axes else [{}]
    results = ablate(
        configs,
        suite_kind,
        range(1, args.seeds + 1),
        model_cfg,
        train_cfg,
        suite_size=suite_size,
        suite_length=suite_length,
        progress=log.info,
    )
    _write_csv(args.out, ablation_rows(results))
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def _sizes(text: str) -> list[tuple[int, int, int]]:
    out = []
    for item in text.split(","):
        parts = item.lower().split("x")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"size {item!r} is not CxHxW")
        out.append(tuple(int(p) for p in parts))
    return out


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",")]


def cmd_bench(args) -> int:
    if args.op != "read":
        raise UsageError(f"unknown bench op {args.op!r}")
    rows = bench_read(args.sizes, args.T, repeats=args.repeats, warmup=args.warmup)
    _write_csv(args.out, rows)
    verdict = monotone_in_T(rows)
    log.info("median read time increases with T: %s", verdict)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="memtrack", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="synthesize sequences")
    g.add_argument("--spec", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--log", help="JSON-lines loss log (default: next to --out)")
    t.set_defaults(func=cmd_train)

    k = sub.add_parser("track", help="run the tracker over a sequence or a suite")
    k.add_argument("--ckpt", required=True)
    k.add_argument("--seq", required=True)
    k.add_argument("--out", required=True)
    k.add_argument("--memory-size", type=_memory_size, default=6)
    k.add_argument("--delta", type=float, default=0.5)
    k.add_argument("--no-fb-label", action="store_true", help="feed all-zero label maps")
    k.add_argument("--share-backbone", action="store_true", help="require a shared-backbone checkpoint")
    k.add_argument("--literal-sampling", action="store_true", help="literal segment indexing in the memory sampler")
    k.add_argument("--decode-config", help="key = value file for the decode postprocess")
    k.add_argument("--trace", help="write the memory indices picked at every frame")
    k.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="score results against ground truth")
    e.add_argument("--results", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--suite-label", default="")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="sweep configs over synthetic suites")
    a.add_argument("--grid", required=True)
    a.add_argument("--seeds", type=int, default=3)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)

    b = sub.add_parser("bench", help="time an operation")
    b.add_argument("--op", default="read")
    b.add_argument("--sizes", type=_sizes, default=_sizes("32x37x37"))
    b.add_argument("--T", type=_int_list, default=[1, 2, 4, 6, 8])
    b.add_argument("--repeats", type=int, default=20)
    b.add_argument("--warmup", type=int, default=3)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on bad usage, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, NotADirectoryError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
