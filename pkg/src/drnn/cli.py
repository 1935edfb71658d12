"""Command-line entry point.

    drnn gen-data --task reversal --seed 1 --out reversal.ds
    drnn train --task sine --arch d_lstm --delay 10 --seed 1 --out runs/sine
    drnn flatten-verify --cell rnn --report flatten.txt
    drnn benchmark --out bench.csv

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .experiments import (BenchConfig, ConfigError, GridConfig, build_dataset, load_config,
                          run_benchmark, run_flatten_grid, run_train)
from .storage import save_dataset

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("drnn")


def _ints(s: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in s.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from exc


def _words(s: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in s.split(",") if v.strip())


def _experiment_args(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="INI file with [experiment], [train], [data]")
    p.add_argument("--seed", type=int, help="required here or in the config file")
    p.add_argument("--task", choices=("reversal", "sine", "masked_lm"))
    p.add_argument("--arch")
    p.add_argument("--layers", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--delay", type=int)
    g = p.add_argument_group("data")
    for name, typ in (("n_train", int), ("n_val", int), ("n_test", int), ("T", int), ("V", int),
                      ("a", int), ("c", int), ("gamma", float), ("corpus", str),
                      ("chars", int), ("mask_prob", float), ("seq_len", int)):
        g.add_argument(f"--{name.replace('_', '-')}", dest=f"data.{name}", type=typ)
    p.add_argument("--data-file", dest="data.file", help="serialized dataset to train on")


def _overrides(args, keys) -> dict:
    out = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    out.update({k: v for k, v in vars(args).items() if k.startswith(("data.", "train.")) and v is not None})
    return out


def _load(args):
    text = args.config.read_text() if args.config else None
    return load_config(text, _overrides(args, ("seed", "task", "arch", "layers", "hidden", "delay")))


def cmd_gen_data(args) -> int:
    cfg = _load(args)
    cfg.validate()
    ds = build_dataset(cfg)
    save_dataset(ds, args.out)
    sizes = ", ".join(f"{k}={len(v)}" for k, v in ds.splits.items())
    print(f"{ds.name}: {sizes} -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load(args)
    res = run_train(cfg, args.out)
    print(f"run {res.run_id}: best epoch {res.history.best_epoch}, "
          f"test loss {res.test['loss']:.6g}, test {res.metric} {res.test['metric']:.6g}")
    return EXIT_OK


def cmd_flatten_verify(args) -> int:
    grid = GridConfig(cell=args.cell, ks=args.k, ns=args.n, Ts=args.T,
                      activations=args.activations, seeds=tuple(range(args.seeds)),
                      tol=args.tol)
    failed = 0
    total = 0
    out = open(args.report, "w") if args.report else None
    try:
        for cell in run_flatten_grid(grid):
            total += 1
            line = cell.line()
            if out:
                out.write(line + "\n")
            if not cell.passed:
                failed += 1
                print(line, file=sys.stderr)
            elif args.verbose:
                print(line)
    finally:
        if out:
            out.close()
    print(f"{total - failed}/{total} cells within {args.tol:g}")
    return EXIT_OK if failed == 0 else EXIT_FAIL


def cmd_benchmark(args) -> int:
    cfg = BenchConfig(archs=args.archs, T=args.T, batch=args.batch, warmup=args.warmup,
                      batches=args.batches, seed=args.seed)
    results = run_benchmark(cfg)
    rows = [(r.arch.label(), r.params, f"{r.median_ms:.4f}", f"{r.std_ms:.4f}", len(r.times_ms))
            for r in results]
    header = ("arch", "params", "median_ms", "std_ms", "batches")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    for row in rows:
        print("  ".join(str(v) for v in row))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="drnn", description="Delayed recurrent network experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate and serialize a dataset")
    _experiment_args(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one configuration")
    _experiment_args(p)
    for name, typ in (("batch_size", int), ("max_epochs", int), ("learning_rate", float),
                      ("early_stop_patience", int), ("early_stop_delta", float),
                      ("stop_below_val_loss", float)):
        p.add_argument(f"--{name.replace('_', '-')}", dest=f"train.{name}", type=typ)
    p.add_argument("--out", type=Path, required=True, help="run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("flatten-verify", help="check stacked vs flattened equivalence on a grid")
    p.add_argument("--cell", choices=("rnn", "lstm"), default="rnn")
    p.add_argument("--k", type=_ints, default=(1, 2, 3, 4))
    p.add_argument("--n", type=_ints, default=(1, 2, 4, 8))
    p.add_argument("--T", type=_ints, default=(1, 5, 20))
    p.add_argument("--activations", type=_words, default=("tanh", "relu", "identity"))
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--report", type=Path)
    p.set_defaults(func=cmd_flatten_verify)

    p = sub.add_parser("benchmark", help="single-threaded forward latency at matched size")
    p.add_argument("--archs", type=_words, default=BenchConfig.archs,
                   help="comma-separated arch/layers/hidden/delay; the first sets the size")
    p.add_argument("--T", type=int, default=180)
    p.add_argument("--batch", type=int, default=BenchConfig.batch)
    p.add_argument("--warmup", type=int, default=BenchConfig.warmup)
    p.add_argument("--batches", type=int, default=BenchConfig.batches)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_benchmark)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
