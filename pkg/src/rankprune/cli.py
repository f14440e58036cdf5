"""Command line front end: train, sweep-lambda, analyze, plot.

One process per command, no shared state. All outputs are deterministic
functions of (config, seed); metrics CSVs from identical runs are
byte-identical.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import datasets, model, rank, svgplot, trainer
from .config import ConfigError, ExperimentConfig, config_hash, parse_config
from .datasets import IdxError, SyntheticDatasetSpec
from .sparsity import ScheduleError
from .trainer import MetricsRecord

__all__ = ["main"]

CsvError = ValueError


def _build_dataset(cfg: ExperimentConfig) -> datasets.Dataset:
    if isinstance(cfg.dataset, SyntheticDatasetSpec):
        return datasets.make_blobs(cfg.dataset)
    batches = datasets.load_idx_images(cfg.dataset.images, cfg.dataset.labels)
    flatten = len(cfg.model.input_shape) == 1
    return datasets.stack_batches(batches, flatten=flatten)


def _build_network(cfg: ExperimentConfig) -> model.Network:
    shape = cfg.model.input_shape
    input_shape = shape if len(shape) == 3 else shape[0]
    return model.build_network(input_shape, cfg.model.layers, cfg.model.num_classes, cfg.train.seed)


def _write_metrics(path: Path, records: list[MetricsRecord]) -> None:
    lines = [MetricsRecord.CSV_HEADER] + [r.csv_row() for r in records]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _final_summary(cfg: ExperimentConfig, result: trainer.TrainResult) -> dict:
    delta = cfg.report.delta
    return {
        "final_step": result.final_step,
        "final_sparsity": result.net.sparsity(),
        "eval_accuracy": result.metrics[-1].eval_acc if result.metrics else None,
        "avg_delta_rank": trainer.average_delta_rank(result.net, delta),
        "delta": delta,
        "config_sha256": config_hash(cfg).hex(),
    }


def _run_single(cfg: ExperimentConfig, out_dir: Path, stop_after=None, resume=None) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    data = _build_dataset(cfg)
    net = _build_network(cfg)
    opt = trainer.OptimizerState.zeros_like(net)
    digest = config_hash(cfg)
    start_step = 0
    if resume is not None:
        state = ckpt.load_checkpoint(resume)
        if state.config_digest != digest:
            raise ckpt.CheckpointError(
                f"{resume}: checkpoint config digest does not match this config"
            )
        ckpt.restore_into(state, net, opt)
        start_step = state.step
    result = trainer.train(net, data, cfg.train, start_step=start_step, optimizer=opt, stop_after=stop_after)
    _write_metrics(out_dir / "metrics.csv", result.metrics)
    ckpt.save_checkpoint(
        out_dir / "checkpoint.bin",
        ckpt.state_from(net, result.optimizer, result.final_step, digest),
    )
    summary = _final_summary(cfg, result)
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return summary


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(
            cfg, train=dataclasses.replace(cfg.train, seed=args.seed)
        )
    if getattr(args, "delta", None) is not None:
        cfg = dataclasses.replace(
            cfg, report=dataclasses.replace(cfg.report, delta=args.delta)
        )
    if getattr(args, "out", None) is not None:
        cfg = dataclasses.replace(
            cfg, report=dataclasses.replace(cfg.report, out_dir=args.out)
        )
    return cfg


def cmd_train(args) -> int:
    cfg = _apply_overrides(parse_config(args.config), args)
    out_dir = Path(cfg.report.out_dir)
    summary = _run_single(cfg, out_dir, stop_after=args.stop_after, resume=args.resume)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _sweep_one(payload):
    cfg, lam, out_dir = payload
    cfg = dataclasses.replace(
        cfg, train=dataclasses.replace(cfg.train, rank_cfg=dataclasses.replace(cfg.train.rank_cfg, lam=lam))
    )
    summary = _run_single(cfg, out_dir)
    return lam, summary


def cmd_sweep_lambda(args) -> int:
    cfg = _apply_overrides(parse_config(args.config), args)
    try:
        lambdas = [float(s) for s in args.lambdas.split(",") if s.strip() != ""]
    except ValueError:
        print(f"error: bad lambda list {args.lambdas!r}", file=sys.stderr)
        return 1
    if not lambdas:
        print("error: need at least one lambda value", file=sys.stderr)
        return 1
    out_dir = Path(cfg.report.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, lam, out_dir / f"lambda_{lam:g}") for lam in lambdas]
    workers = int(os.environ.get("RANKPRUNE_THREADS", "1"))
    if workers > 1 and len(jobs) > 1:
        import multiprocessing as mp

        with mp.Pool(min(workers, len(jobs))) as pool:
            results = pool.map(_sweep_one, jobs)
    else:
        results = [_sweep_one(job) for job in jobs]
    lines = ["lambda,avg_delta_rank,eval_accuracy"]
    for lam, summary in results:
        lines.append(f"{lam!r},{summary['avg_delta_rank']!r},{summary['eval_accuracy']!r}")
    (out_dir / "lambda_sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(str(out_dir / "lambda_sweep.csv"))
    return 0


def _layer_report(name: str, weight: np.ndarray, mask: np.ndarray, delta: float) -> dict:
    effective = weight * mask
    mat = effective if effective.ndim == 2 else effective.reshape(effective.shape[0], -1)
    size = int(mask.size)
    active = int(np.count_nonzero(mask))
    norm = np.linalg.norm(mat)
    if norm > 0:
        sigma = np.linalg.svd(mat / norm, compute_uv=False)
        spectrum = [float(s) for s in sigma]
        drank = rank.delta_rank(mat, delta)
    else:
        spectrum = []
        drank = 0
    return {
        "layer": name,
        "shape": list(weight.shape),
        "sparsity": 1.0 - active / size,
        "delta_rank": drank,
        "spectrum": spectrum,
    }


def _analyze_state(path: str, delta: float) -> dict:
    state = ckpt.load_checkpoint(path)
    layers = []
    total = 0
    active = 0
    i = 0
    while f"layer{i}.weight" in state.tensors:
        weight = state.tensors[f"layer{i}.weight"]
        mask = state.tensors[f"layer{i}.mask"].astype(np.float64)
        layers.append(_layer_report(f"layer{i}", weight, mask, delta))
        total += mask.size
        active += int(np.count_nonzero(mask))
        i += 1
    if not layers:
        raise ckpt.CheckpointError(f"{path}: no layer tensors found")
    return {
        "checkpoint": str(path),
        "step": state.step,
        "global_sparsity": 1.0 - active / total,
        "layers": layers,
    }


def cmd_analyze(args) -> int:
    delta = args.delta if args.delta is not None else 0.1
    reports = [_analyze_state(p, delta) for p in args.checkpoints]
    print(json.dumps({"delta": delta, "checkpoints": reports}, indent=2, sort_keys=True))
    return 0


def _read_csv(path: str):
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise CsvError(f"{path}:1: empty file")
    header = lines[0].split(",")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(header):
            raise CsvError(
                f"{path}:{lineno}: expected {len(header)} columns, got {len(cells)}"
            )
        rows.append((lineno, cells))
    if not rows:
        raise CsvError(f"{path}:1: no data rows")
    return header, rows


def _float_cell(path, lineno, name, value) -> float:
    try:
        return float(value)
    except ValueError:
        raise CsvError(f"{path}:{lineno}: column {name!r}: bad number {value!r}") from None


def cmd_plot(args) -> int:
    out_dir = Path(args.out if args.out else ".")
    metrics_series = []
    sweep_data = None
    metrics_cols = MetricsRecord.CSV_HEADER.split(",")
    for path in args.csvs:
        header, rows = _read_csv(path)
        if header == metrics_cols:
            xs, ys = [], []
            for lineno, cells in rows:
                named = dict(zip(header, cells))
                if named["avg_delta_rank"] == "":
                    continue
                xs.append(_float_cell(path, lineno, "sparsity", named["sparsity"]))
                ys.append(_float_cell(path, lineno, "avg_delta_rank", named["avg_delta_rank"]))
            if not xs:
                raise CsvError(f"{path}:1: no rows with avg_delta_rank values")
            metrics_series.append((Path(path).stem, xs, ys))
        elif header[0] == "lambda":
            lams, ranks, accs = [], [], []
            for lineno, cells in rows:
                named = dict(zip(header, cells))
                lams.append(named["lambda"])
                ranks.append(_float_cell(path, lineno, "avg_delta_rank", named["avg_delta_rank"]))
                accs.append(_float_cell(path, lineno, "eval_accuracy", named["eval_accuracy"]))
            sweep_data = (lams, ranks, accs)
        else:
            raise CsvError(f"{path}:1: unrecognized header {header!r}")
    written = []
    out_dir.mkdir(parents=True, exist_ok=True)
    if metrics_series:
        svg = svgplot.line_chart(
            metrics_series,
            title="Average delta-rank vs sparsity",
            xlabel="sparsity",
            ylabel="average delta-rank",
        )
        target = out_dir / "rank_vs_sparsity.svg"
        target.write_text(svg, encoding="utf-8")
        written.append(str(target))
    if sweep_data is not None:
        lams, ranks, accs = sweep_data
        svg = svgplot.dual_axis_chart(
            lams,
            "average delta-rank",
            ranks,
            "eval accuracy",
            accs,
            title="Rank and accuracy vs rank-loss weight",
            xlabel="lambda",
        )
        target = out_dir / "rank_vs_lambda.svg"
        target.write_text(svg, encoding="utf-8")
        written.append(str(target))
    for path in written:
        print(path)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rankprune",
        description="Sparse training that keeps weight matrices high-rank",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training per the config file")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, help="override [train] seed")
    p_train.add_argument("--out", help="override [report] out_dir")
    p_train.add_argument("--delta", type=float, help="override [report] delta")
    p_train.add_argument("--stop-after", type=int, dest="stop_after", help="halt after N steps (checkpoint written)")
    p_train.add_argument("--resume", help="resume from a checkpoint file")
    p_train.set_defaults(func=cmd_train)

    p_sweep = sub.add_parser("sweep-lambda", help="train once per lambda, shared seed")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--lambdas", required=True, help="comma-separated values, e.g. 0,0.01,0.1,1")
    p_sweep.add_argument("--seed", type=int, help="override [train] seed")
    p_sweep.add_argument("--out", help="override [report] out_dir")
    p_sweep.add_argument("--delta", type=float, help="override [report] delta")
    p_sweep.set_defaults(func=cmd_sweep_lambda)

    p_an = sub.add_parser("analyze", help="per-layer rank/sparsity report from checkpoints")
    p_an.add_argument("checkpoints", nargs="+", help="one or two checkpoint files")
    p_an.add_argument("--delta", type=float, help="rank tolerance (default 0.1)")
    p_an.set_defaults(func=cmd_analyze)

    p_plot = sub.add_parser("plot", help="emit SVG charts from metrics/sweep CSVs")
    p_plot.add_argument("csvs", nargs="+")
    p_plot.add_argument("--out", help="output directory (default .)")
    p_plot.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, IdxError, ckpt.CheckpointError, ScheduleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
