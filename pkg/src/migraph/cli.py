"""Command-line entry point: ``migraph <command> [--config F] [--data F] [--out D] [--seed N]``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import gradcheck as gc
from .config import ConfigError, RunConfig, load_config
from .data import EpochFormatError, EpochSet, WindowConfig, generate_synthetic, read_epochs, write_epochs
from .layers import load_state_dict, state_dict
from .model import ModelDims, forward, init_params, parameter_totals
from .pipeline import prepare
from .training import (
    EpochLog,
    evaluate,
    inference_latency,
    run_ablation,
    split_hash,
    top_k_edge_deltas,
    train,
)

log = logging.getLogger("migraph")

SWEEP_OMEGAS = (125, 250, 500)
SWEEP_STEPS = (62, 125, 250)
INVARIANT_TOL = 1e-6


class CommandError(RuntimeError):
    pass


# helpers


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CommandError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _write_json(path: Path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _matrix_csv(m: np.ndarray) -> str:
    return "".join(",".join(repr(float(v)) for v in row) + "\n" for row in m)


def read_matrix_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def _load_epochs(cfg: RunConfig) -> EpochSet:
    if not cfg.data:
        raise CommandError("no input file: pass --data or set 'data' in the config")
    try:
        return read_epochs(cfg.data)
    except FileNotFoundError as exc:
        raise CommandError(f"input file not found: {cfg.data}") from exc
    except EpochFormatError as exc:
        raise CommandError(f"{cfg.data}: {exc}") from exc


def _out_dir(cfg: RunConfig) -> Path:
    if not cfg.out:
        raise CommandError("no output location: pass --out or set 'out' in the config")
    return Path(cfg.out)


def _dims(cfg: RunConfig, epochs: EpochSet, variant: str = "A") -> ModelDims:
    return ModelDims(epochs.n_channels, 18, epochs.n_classes, cfg.stgnn_input, variant)


def _check_invariants(epoch: int, params, row: EpochLog, probe: np.ndarray) -> None:
    """Structural checks run after every epoch; a violation aborts the run."""
    out = forward(params, probe, train=False)
    if out.a_norm is not None:
        a = out.a_norm.data
        if np.any(np.diag(a) != 0):
            raise CommandError(f"epoch {epoch}: normalized adjacency has a nonzero diagonal")
        if np.abs(a.sum(axis=1) - 1).max() > INVARIANT_TOL:
            raise CommandError(f"epoch {epoch}: normalized adjacency rows do not sum to 1")
    if out.alpha is not None and np.abs(out.alpha.data.sum(axis=1) - 1).max() > INVARIANT_TOL:
        raise CommandError(f"epoch {epoch}: attention weights do not sum to 1")
    if out.x_hat is not None and not ((out.x_hat.data > 0).all() and (out.x_hat.data < 1).all()):
        raise CommandError(f"epoch {epoch}: decoder output left (0, 1)")


def _metrics_doc(metrics, extra: dict) -> dict:
    doc = metrics.to_dict()
    doc.update(extra)
    return doc


# commands


def cmd_gen_data(cfg: RunConfig) -> int:
    out = Path(cfg.out) if cfg.out else None
    if out is None:
        raise CommandError("gen-data needs --out <file>")
    epochs = generate_synthetic(cfg.synthetic())
    try:
        write_epochs(out, epochs)
    except OSError as exc:
        raise CommandError(f"cannot write {out}: {exc.strerror or exc}") from exc
    print(f"wrote {out}: {epochs.n_trials} trials, {epochs.n_channels} channels, {epochs.n_samples} samples")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    epochs = _load_epochs(cfg)
    out = _out_dir(cfg)
    _write_text(out / "config.txt", cfg.dumps())
    prep = prepare(epochs, cfg.window(), cfg.seed)
    dims = _dims(cfg, epochs)
    probe = prep.val.x[: min(len(prep.val), 8)]
    result = train(prep.train, prep.val, cfg.train_config(), dims, prep.adjacency_init,
                   on_epoch=lambda e, p, r: _check_invariants(e, p, r, probe))
    metrics = evaluate(result.params, prep.test)
    totals = parameter_totals(result.params)
    _write_json(out / "metrics.json", _metrics_doc(metrics, {
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.log),
        "parameters": totals,
        "split_hash": split_hash(prep.train, prep.val, prep.test),
    }))
    _write_text(out / "train.log", result.log_tsv())
    if result.a_before is not None:
        _write_text(out / "adjacency_before.csv", _matrix_csv(result.a_before))
        _write_text(out / "adjacency_after.csv", _matrix_csv(result.a_after))
        k = min(10, epochs.n_channels * (epochs.n_channels - 1) // 2)
        edges = top_k_edge_deltas(result.a_before, result.a_after, k)
        _write_text(out / "edges_top10.csv", "i,j,delta\n" + "".join(f"{i},{j},{d!r}\n" for i, j, d in edges))
    np.savez(out / "params.npz", **state_dict(result.params))
    print(f"test accuracy {metrics.accuracy:.4f} kappa {metrics.kappa:.4f} "
          f"macro-F1 {metrics.macro_f1:.4f} macro-AUC {metrics.macro_auc:.4f} (best epoch {result.best_epoch})")
    return 0


def _restore(cfg: RunConfig, epochs: EpochSet, run_dir: Path):
    path = run_dir / "params.npz"
    if not path.exists():
        raise CommandError(f"no trained parameters at {path}; run 'train' first")
    params = init_params(cfg.seed, _dims(cfg, epochs))
    with np.load(path) as npz:
        load_state_dict(params, {k: npz[k] for k in npz.files})
    return params


def cmd_eval(cfg: RunConfig) -> int:
    """Re-score a trained run on its held-out trials and time single-window inference."""
    epochs = _load_epochs(cfg)
    out = _out_dir(cfg)
    saved = out / "config.txt"
    if saved.exists():
        # the split and model shape follow the run's own configuration
        cfg = replace(load_config(saved), data=cfg.data, out=cfg.out)
    prep = prepare(epochs, cfg.window(), cfg.seed)
    params = _restore(cfg, epochs, out)
    metrics = evaluate(params, prep.test)
    latency = inference_latency(params, prep.test.x)
    _write_json(out / "eval_metrics.json", metrics.to_dict())
    _write_json(out / "latency.json", {"mean_single_window_ms": latency * 1e3})
    print(f"test accuracy {metrics.accuracy:.4f} kappa {metrics.kappa:.4f} "
          f"macro-F1 {metrics.macro_f1:.4f} macro-AUC {metrics.macro_auc:.4f}")
    print(f"mean single-window inference {latency * 1e3:.3f} ms")
    return 0


def _sweep_cell(args) -> dict:
    cfg, epochs, omega, step, index = args
    row = {"omega": omega, "s": step, "cell_index": index, "seed": cfg.seed + index}
    if omega > epochs.n_samples:
        row.update(status="invalid", reason=f"omega={omega} exceeds trial length S={epochs.n_samples}")
        return row
    prep = prepare(epochs, WindowConfig(omega, step), cfg.seed)
    result = train(prep.train, prep.val, cfg.train_config(seed=cfg.seed + index), _dims(cfg, epochs),
                   prep.adjacency_init)
    metrics = evaluate(result.params, prep.test)
    row.update(status="ok", accuracy=metrics.accuracy, kappa=metrics.kappa, windows=len(prep.train),
               best_epoch=result.best_epoch)
    log.info("cell omega=%d s=%d accuracy %.4f", omega, step, metrics.accuracy)
    return row


def run_sweep(cfg: RunConfig, epochs: EpochSet, jobs: int = 1,
              omegas=SWEEP_OMEGAS, steps=SWEEP_STEPS) -> list[dict]:
    tasks = [(cfg, epochs, o, s, i * len(steps) + j) for i, o in enumerate(omegas) for j, s in enumerate(steps)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_cell, tasks))
    return [_sweep_cell(t) for t in tasks]


def sweep_table(rows: list[dict], omegas=SWEEP_OMEGAS, steps=SWEEP_STEPS) -> str:
    cells = {(r["omega"], r["s"]): r for r in rows}
    lines = ["omega\\s," + ",".join(str(s) for s in steps)]
    for o in omegas:
        vals = []
        for s in steps:
            r = cells[(o, s)]
            vals.append(repr(r["accuracy"]) if r["status"] == "ok" else "invalid")
        lines.append(f"{o}," + ",".join(vals))
    return "\n".join(lines) + "\n"


def cmd_sweep(cfg: RunConfig, jobs: int = 1) -> int:
    epochs = _load_epochs(cfg)
    out = _out_dir(cfg)
    _write_text(out / "config.txt", cfg.dumps())
    rows = run_sweep(cfg, epochs, jobs)
    _write_text(out / "sweep.csv", sweep_table(rows))
    _write_json(out / "sweep_cells.json", rows)
    print(sweep_table(rows), end="")
    return 0


def cmd_ablate(cfg: RunConfig) -> int:
    epochs = _load_epochs(cfg)
    out = _out_dir(cfg)
    _write_text(out / "config.txt", cfg.dumps())
    prep = prepare(epochs, cfg.window(), cfg.seed)
    rows = run_ablation(prep.train, prep.val, prep.test, cfg.train_config(), epochs.n_channels,
                        epochs.n_classes, prep.adjacency_init)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["variant", "description", "accuracy", "kappa", "macro_f1", "macro_auc",
                     "params_without_adjacency", "params_with_adjacency", "best_epoch", "split_hash"])
    for r in rows:
        m = r.metrics
        writer.writerow([r.variant, r.description, repr(m.accuracy), repr(m.kappa), repr(m.macro_f1),
                         repr(m.macro_auc), r.params_without_adjacency, r.params_with_adjacency, r.best_epoch,
                         r.split_hash])
    _write_text(out / "ablation.csv", buf.getvalue())
    _write_json(out / "ablation.json", [
        _metrics_doc(r.metrics, {"variant": r.variant, "description": r.description,
                                 "params_without_adjacency": r.params_without_adjacency,
                                 "params_with_adjacency": r.params_with_adjacency,
                                 "best_epoch": r.best_epoch, "split_hash": r.split_hash})
        for r in rows
    ])
    print(buf.getvalue(), end="")
    return 0


def cmd_gradcheck(cfg: RunConfig) -> int:
    results = gc.run_all(cfg.seed)
    report = gc.format_report(results)
    print(report)
    if cfg.out:
        _write_text(Path(cfg.out) / "gradcheck.txt", report + "\n")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_export_graph(cfg: RunConfig, top_k: int = 10) -> int:
    """Top changed edges of a finished run, with channel names."""
    out = _out_dir(cfg)
    try:
        before = read_matrix_csv(out / "adjacency_before.csv")
        after = read_matrix_csv(out / "adjacency_after.csv")
    except OSError as exc:
        raise CommandError(f"no adjacency exports in {out}; run 'train' first") from exc
    names = _load_epochs(cfg).channel_names if cfg.data else [f"ch{i:02d}" for i in range(len(before))]
    if len(names) != len(before):
        raise CommandError(f"{len(names)} channel names for a {len(before)}-node graph")
    edges = top_k_edge_deltas(before, after, top_k)
    lines = ["i,j,channel_i,channel_j,before,after,delta"]
    for i, j, d in edges:
        sb = float(before[i, j] + before[j, i]) / 2
        sa = float(after[i, j] + after[j, i]) / 2
        lines.append(f"{i},{j},{names[i]},{names[j]},{sb!r},{sa!r},{d!r}")
    _write_text(out / "graph_edges.csv", "\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--data", help="EPOC1 epoch file")
    common.add_argument("--out", help="output file (gen-data) or directory")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")

    parser = argparse.ArgumentParser(prog="migraph", description="Graph-based motor-imagery EEG classifier.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="write a synthetic epoch file")
    sub.add_parser("train", parents=[common], help="train, evaluate and export adjacency")
    sub.add_parser("eval", parents=[common], help="re-evaluate a trained run and time inference")
    sweep = sub.add_parser("sweep", parents=[common], help="3x3 window length / step grid")
    sweep.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    sub.add_parser("ablate", parents=[common], help="train variants A-D on one split")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every op and layer")
    export = sub.add_parser("export-graph", parents=[common], help="top changed edges of a trained run")
    export.add_argument("--top-k", type=int, default=10)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.data is not None:
        cfg.data = args.data
    if args.out is not None:
        cfg.out = args.out
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed must be an unsigned integer")
        cfg.seed = args.seed
    cfg.validate()
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "gen-data":
            return cmd_gen_data(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.jobs)
        if args.command == "ablate":
            return cmd_ablate(cfg)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg)
        return cmd_export_graph(cfg, args.top_k)
    except (CommandError, ConfigError, OSError) as exc:
        print(f"migraph {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
