"""Single entry-point command line tool.

Subcommands: generate, train, eval, embed, probe, analyze-acf, bench.
Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

import numpy as np

from . import adapter as adapter_mod
from . import analysis, config, downstream, synthgen, trainer
from .errors import (
    CheckpointError,
    ConfigError,
    EmptyDatasetError,
    InvalidArgumentError,
    ParseError,
    T2LError,
)

USAGE_ERRORS = (ConfigError, InvalidArgumentError, ParseError, EmptyDatasetError,
                FileNotFoundError)


def _parse_int_list(text):
    try:
        values = tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("expected a non-empty integer list")
    return values


def build_parser():
    parser = argparse.ArgumentParser(prog="t2l", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--preset", choices=config.PRESETS, default="desk")
    common.add_argument("--config", default=None, help="JSON run-config overrides")
    common.add_argument("--seed", type=int, default=None, help="master seed override")

    p = sub.add_parser("generate", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--periods", type=_parse_int_list, default=None)
    p.add_argument("--length", type=int, default=None)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", parents=[common], help="pretext-train the adapter")
    p.add_argument("--data", required=True, help="dataset directory from `t2l generate`")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="pretext evaluation of a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("embed", parents=[common], help="extract downstream embeddings")
    p.add_argument("--data", required=True, help="labeled CSV (subject_id,label,v0,...)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--missing-threshold", type=float, default=0.25)
    p.set_defaults(fn=cmd_embed)

    p = sub.add_parser("probe", parents=[common], help="linear-probe evaluation")
    p.add_argument("--embeddings", required=True, help="embeddings .f32 file")
    p.add_argument("--labels", required=True, help="index CSV with subject_id,label")
    p.add_argument("--out", default=None, help="CSV report path")
    p.set_defaults(fn=cmd_probe)

    p = sub.add_parser("analyze-acf", parents=[common],
                       help="embedding vs autocorrelation correlation study")
    p.add_argument("--data", required=True, help="the CSV the embeddings were extracted from")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--missing-threshold", type=float, default=0.25)
    p.set_defaults(fn=cmd_analyze_acf)

    p = sub.add_parser("bench", parents=[common], help="latency/throughput benchmark")
    p.add_argument("--lengths", type=_parse_int_list, default=None)
    p.add_argument("--checkpoint", default=None, help="bench a trained pipeline")
    p.add_argument("--repeats", type=int, default=None)
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--out", default=None, help="CSV report path")
    p.set_defaults(fn=cmd_bench)

    return parser


def _run_config(args) -> config.RunConfig:
    return config.load_run_config(args.preset, args.config, args.seed)


def _build_pipeline(run: config.RunConfig, dtype=np.float32):
    return adapter_mod.build_pipeline(run.tfm, run.llm, run.adapter, dtype=dtype)


def _load_pipeline(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return adapter_mod.pipeline_from_checkpoint(path)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    run = _run_config(args)
    section = run.synthgen
    n = args.n if args.n is not None else section.n
    periods = args.periods if args.periods is not None else section.periods
    length = args.length if args.length is not None else section.length
    dataset = synthgen.generate_dataset(
        n, period_set=periods, seed=run.seed, length=length,
        max_nonperiodic=section.max_nonperiodic,
    )
    synthgen.save_dataset(dataset, args.out)
    labels = dataset.labels()
    counts = {int(p): int(c) for p, c in
              zip(periods, np.bincount(labels, minlength=len(periods)))}
    summary = {
        "n": n,
        "length": length,
        "periods": list(periods),
        "seed": run.seed,
        "class_counts": counts,
        "split_sizes": {
            name: int(np.sum(dataset.split == code))
            for code, name in enumerate(synthgen.SyntheticDataset.SPLIT_NAMES)
        },
        "out": args.out,
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    run = _run_config(args)
    dataset = synthgen.load_dataset(args.data)
    pipeline = _build_pipeline(run)
    params, metrics = trainer.fit(dataset, pipeline, run.trainer)
    pipeline.adapter.load_snapshot(params)
    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, "checkpoint.t2l")
    adapter_mod.save_checkpoint(ckpt_path, pipeline.adapter, run.tfm, run.llm)
    with open(os.path.join(args.out, "metrics.ndjson"), "w") as fh:
        for record in metrics:
            fh.write(json.dumps(record.as_dict(), sort_keys=True) + "\n")
    val_rows = [m for m in metrics if m.split == "val"]
    summary = {
        "epochs": run.trainer.epochs,
        "train_samples": int(dataset.indices("train").size),
        "best_val_loss": min(m.loss for m in val_rows),
        "final_val_accuracy": val_rows[-1].accuracy,
        "checkpoint": ckpt_path,
    }
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    dataset = synthgen.load_dataset(args.data)
    pipeline = _load_pipeline(args.checkpoint)
    loss, accuracy, confusion = trainer.evaluate_pretext(pipeline, dataset, args.split)
    summary = {
        "split": args.split,
        "loss": loss,
        "accuracy": accuracy,
        "n": int(dataset.indices(args.split).size),
        "confusion": confusion.tolist(),
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_embed(args) -> int:
    pipeline = _load_pipeline(args.checkpoint)
    records, summary = downstream.ingest_csv(args.data, args.missing_threshold)
    series = [r.series.astype(np.float64) for r in records]
    embeddings = pipeline.extract_batch(series)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "embeddings.f32")
    downstream.save_embeddings(path, embeddings, [(r.subject_id, r.label) for r in records])
    out = {
        "rows": len(records),
        "dim": int(embeddings.shape[1]),
        "dropped": summary.dropped,
        "embeddings": path,
        "index": os.path.join(args.out, "embeddings.index.csv"),
    }
    print(json.dumps(out, sort_keys=True))
    return 0


def cmd_probe(args) -> int:
    run = _run_config(args)
    if not os.path.exists(args.embeddings):
        raise FileNotFoundError(f"embeddings not found: {args.embeddings}")
    if not os.path.exists(args.labels):
        raise FileNotFoundError(f"labels not found: {args.labels}")
    embeddings = downstream.load_embeddings(args.embeddings)
    subjects, labels = downstream.load_index(args.labels)
    if embeddings.shape[0] != labels.size:
        raise InvalidArgumentError("embeddings and labels row counts differ")
    report = downstream.probe(embeddings, labels, subjects, run.probe, seed=run.seed)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["shuffle", "auroc", "auprc", "penalty", "c", "l1_ratio"])
            for i, s in enumerate(report.shuffles):
                writer.writerow([i, s.auroc, s.auprc, s.chosen["penalty"],
                                 s.chosen["c"], s.chosen["l1_ratio"]])
    print(json.dumps({
        "auroc_mean": report.auroc_mean, "auroc_std": report.auroc_std,
        "auprc_mean": report.auprc_mean, "auprc_std": report.auprc_std,
        "n_shuffles": len(report.shuffles),
    }, sort_keys=True))
    return 0


def cmd_analyze_acf(args) -> int:
    run = _run_config(args)
    records, _ = downstream.ingest_csv(args.data, args.missing_threshold)
    embeddings = downstream.load_embeddings(args.embeddings)
    if embeddings.shape[0] != len(records):
        raise InvalidArgumentError(
            "embedding rows do not match retained records; regenerate with `t2l embed`"
        )
    report = analysis.embedding_acf_correlation(
        [r.series for r in records], embeddings,
        n_lags=run.analysis.n_lags, threshold=run.analysis.threshold,
    )
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "acf_correlation_matrix.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dim"] + [f"lag{lag}" for lag in range(1, report.n_lags + 1)])
        for j in range(report.matrix.shape[0]):
            writer.writerow([j] + [f"{v:.6f}" if np.isfinite(v) else "" for v in report.matrix[j]])
    with open(os.path.join(args.out, "acf_correlation_maxima.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dim", "max_coefficient"])
        for j, v in enumerate(report.max_per_dim):
            writer.writerow([j, f"{v:.6f}" if np.isfinite(v) else ""])
    print(json.dumps({
        "dims": int(report.matrix.shape[0]),
        "n_lags": report.n_lags,
        "threshold": report.threshold,
        "count_above_threshold": report.count_above_threshold,
        "skipped_cells": report.n_skipped,
    }, sort_keys=True))
    return 0


def cmd_bench(args) -> int:
    run = _run_config(args)
    if args.checkpoint:
        pipeline = _load_pipeline(args.checkpoint)
    else:
        pipeline = _build_pipeline(run)
    lengths = args.lengths if args.lengths is not None else run.analysis.bench_lengths
    repeats = args.repeats if args.repeats is not None else run.analysis.bench_repeats
    warmup = args.warmup if args.warmup is not None else run.analysis.bench_warmup

    def single(series):
        return pipeline.forward(series)[0]

    def batched(series_list):
        zc_t, zc_mean = pipeline.encode_series(series_list)
        return pipeline.forward_cached(zc_t, zc_mean)[0]

    report = analysis.bench_latency(
        single, batched, lengths, repeats=repeats, warmup=warmup,
        batch=run.analysis.bench_batch, seed=run.seed,
    )
    pinned = {
        "tfm": dataclasses.asdict(pipeline.tfm.config),
        "llm": dataclasses.asdict(pipeline.llm.config),
        "adapter": dataclasses.asdict(pipeline.adapter.config),
        "checkpoint": args.checkpoint,
        "seed": run.seed,
    }
    header = ["length", "latency_mean_ms", "latency_std_ms",
              "throughput_mean", "throughput_std", "repeats", "warmup", "batch",
              "unreliable_timer"]
    rows = [[r.length, f"{r.latency_mean_ms:.4f}", f"{r.latency_std_ms:.4f}",
             f"{r.throughput_mean:.4f}", f"{r.throughput_std:.4f}",
             r.repeats, r.warmup, r.batch, int(r.unreliable_timer)]
            for r in report.rows]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
        with open(args.out + ".config.json", "w") as fh:
            json.dump(pinned, fh, sort_keys=True, indent=2)
    print(json.dumps({"pinned_config": pinned}, sort_keys=True))
    for row in rows:
        print(",".join(str(c) for c in row))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except USAGE_ERRORS as exc:
        print(f"t2l: {exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"t2l: incompatible checkpoint: {exc}", file=sys.stderr)
        return 1
    except (T2LError, OSError) as exc:
        print(f"t2l: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
