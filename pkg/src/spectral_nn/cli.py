"""Command-line interface: ``train``, ``gradcheck``, ``bench`` and ``decompose``.

Exit codes
----------
0  success
1  invalid flags or input (usage printed)
2  training diverged (non-finite loss)
3  gradcheck error above threshold
4  decompose: singular values outside the representable range
5  decompose: reconstruction error above threshold
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import diagnostics
from .flops import FlopCounter, leading_flops, predicted_flops
from .householder import hprod
from .layers import RnnCell, spectral_apply, spectral_backward
from .svd_param import SigmaRangeError, SpectralMatrix, decompose_square, dumps_spectral, materialize
from .training import DivergenceError, MetricRecord, TrainConfig, dumps_model, train

log = logging.getLogger("spectral_nn")

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_GRADCHECK, EXIT_RANGE, EXIT_RECON = range(6)
SEED_ENV = "SPECTRAL_NN_SEED"
GRADCHECK_THRESHOLD = 1e-5
RECON_THRESHOLD = 1e-8


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Exit with code 1 instead of argparse's 2 so codes stay distinct."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------- config file


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _coerce(name: str, value, kind):
    kind = {"int": int, "float": float, "str": str}.get(kind, kind)
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise UsageError(f"bad value for {name}: {value!r}") from None


def resolve_train_config(args: argparse.Namespace) -> TrainConfig:
    """Merge built-in defaults < config file < flags (< env seed if unset)."""
    types = TrainConfig.field_types()
    merged = {}
    if args.seed is None and os.environ.get(SEED_ENV):
        merged["seed"] = _coerce("seed", os.environ[SEED_ENV], "int")
    if args.config:
        for key, value in read_config_file(args.config).items():
            if key not in types:
                raise UsageError(f"unknown config key {key!r}")
            merged[key] = _coerce(key, value, types[key])
    for f in fields(TrainConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            merged[f.name] = value
    try:
        return TrainConfig(**merged)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def write_resolved(config: TrainConfig, out_dir: Path) -> Path:
    path = out_dir / "config.resolved"
    lines = [f"{k} = {v}" for k, v in config.to_dict().items()]
    path.write_text("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------- commands


def cmd_train(args) -> int:
    config = resolve_train_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved(config, out_dir)
    metrics = out_dir / "metrics.csv"
    with open(metrics, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MetricRecord.CSV_FIELDS)

        def sink(rec, _model):
            writer.writerow(rec.csv_row())
            fh.flush()

        try:
            records, model = train(config, on_record=sink, log_every=args.log_every)
        except DivergenceError as exc:
            print(f"diverged: {exc}", file=sys.stderr)
            return EXIT_DIVERGED
    (out_dir / "model.ckpt").write_text(dumps_model(model))
    last = records[-1]
    print(f"iter {last.iter} loss {last.loss:.6g} eval {last.eval_metric:.6g} "
          f"margin {last.spectral_margin:.3g}  -> {metrics}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if not 1 <= args.hidden <= 8:
        raise UsageError("gradcheck needs 1 <= --hidden <= 8")
    if not 1 <= args.steps <= 5:
        raise UsageError("gradcheck needs 1 <= --steps <= 5")
    m1 = args.hidden if args.m1 is None else args.m1
    m2 = args.hidden if args.m2 is None else args.m2
    if not (0 <= m1 <= args.hidden and 0 <= m2 <= args.hidden):
        raise UsageError("reflector counts must lie in [0, hidden]")
    seed = _seed(args)
    rng = np.random.default_rng(seed)
    if args.model == "vanilla":
        cell = RnnCell.vanilla_random(args.hidden, args.inputs, args.outputs, args.activation, rng)
    else:
        cell = RnnCell.spectral_random(args.hidden, args.inputs, args.outputs, m1, m2, args.r,
                                       1.0, args.activation, rng)
        cell.W.sigma.sigma_hat[:] = rng.standard_normal(cell.W.p)
    cell.b[:] = 0.1 * rng.standard_normal(args.hidden)
    xs = rng.standard_normal((args.steps, args.inputs, args.batch))
    weights = rng.standard_normal((args.steps, args.outputs, args.batch))
    result = diagnostics.rnn_gradcheck(cell, xs, weights, break_gradient=args.break_gradient)
    if args.break_gradient:
        print("note: analytic gradient deliberately corrupted")
    print(diagnostics.format_report(result.rows, args.show))
    print(f"max relative error {result.max_error:.3e} at {result.worst}")
    return EXIT_OK if result.max_error < GRADCHECK_THRESHOLD else EXIT_GRADCHECK


def bench_rows(n: int, m1: int, m2: int, k: int, repeats: int, seed) -> list:
    """``(kernel, predicted, leading, measured, seconds)`` per kernel."""
    rng = np.random.default_rng(seed)
    rows = []
    counter = FlopCounter()
    h = rng.standard_normal(n)
    u = rng.standard_normal(k)
    start = time.perf_counter()
    for _ in range(repeats):
        hprod(h, u, counter=counter)
    rows.append(("hprod", predicted_flops("hprod", k=k), leading_flops("hprod", k=k),
                 counter.total / repeats, (time.perf_counter() - start) / repeats))

    W = SpectralMatrix.random(n, n, m1, m2, rng=rng)
    counter = FlopCounter()
    fp_time = bp_time = 0.0
    for _ in range(repeats):
        t0 = time.perf_counter()
        _, tape = spectral_apply(W, h, counter)
        t1 = time.perf_counter()
        spectral_backward(W, tape, rng.standard_normal(n), counter)
        fp_time += t1 - t0
        bp_time += time.perf_counter() - t1
    for kernel, seconds in (("spectral_fp", fp_time), ("spectral_bp", bp_time)):
        rows.append((kernel, predicted_flops(kernel, n, m1, m2), leading_flops(kernel, n, m1, m2),
                     counter[kernel] / repeats, seconds / repeats))
    return rows


def cmd_bench(args) -> int:
    for name in ("m1", "m2"):
        if not 0 <= getattr(args, name) <= args.hidden:
            raise UsageError(f"--{name} must lie in [0, hidden]")
    k = args.k if args.k is not None else min(args.hidden, 32)
    if not 1 <= k <= args.hidden:
        raise UsageError("--k must lie in [1, hidden]")
    rows = bench_rows(args.hidden, args.m1, args.m2, k, args.repeats, _seed(args))
    print(f"n={args.hidden} m1={args.m1} m2={args.m2} k={k}")
    print(f"{'kernel':<12} {'predicted':>12} {'leading':>12} {'measured':>12} "
          f"{'ratio':>8} {'usec':>10}")
    for kernel, pred, lead, measured, seconds in rows:
        ratio = measured / pred if pred else float("nan")
        print(f"{kernel:<12} {pred:>12.0f} {lead:>12.0f} {measured:>12.0f} "
              f"{ratio:>8.4f} {seconds * 1e6:>10.1f}")
    return EXIT_OK


def read_matrix(path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if row and any(cell.strip() for cell in row):
                rows.append([float(cell) for cell in row])
    if not rows or len({len(r) for r in rows}) != 1:
        raise UsageError(f"{path}: expected a rectangular comma-separated matrix")
    return np.array(rows)


def cmd_decompose(args) -> int:
    try:
        A = read_matrix(args.input)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if A.shape[0] != A.shape[1]:
        raise UsageError(f"decompose needs a square matrix, got {A.shape[0]}x{A.shape[1]}")
    try:
        W = decompose_square(A, sigma_star=args.sigma_star, r=args.r)
    except SigmaRangeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"suggested --sigma-star {exc.suggested_sigma_star!r} --r {exc.suggested_r!r}",
              file=sys.stderr)
        return EXIT_RANGE
    err = float(np.linalg.norm(materialize(W) - A) / max(np.linalg.norm(A), np.finfo(float).tiny))
    text = dumps_spectral(W)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    print(f"relative reconstruction error {err:.3e}", file=sys.stderr)
    return EXIT_OK if err < RECON_THRESHOLD else EXIT_RECON


def _seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    return int(env) if env else 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spectral-nn", description=__doc__.split("\n")[0],
                     allow_abbrev=False)
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train an RNN on a synthetic task", allow_abbrev=False)
    t.add_argument("--config", help="key=value file; flags take precedence")
    t.add_argument("--out", default="run", help="output directory (default: %(default)s)")
    t.add_argument("--log-every", type=int, default=0)
    t.add_argument("--task", choices=["addition", "copy"])
    t.add_argument("--seq-len", dest="seq_len", type=int)
    t.add_argument("--lag", type=int)
    t.add_argument("--hidden", type=int)
    t.add_argument("--m1", type=int)
    t.add_argument("--m2", type=int)
    t.add_argument("--r", type=float)
    t.add_argument("--sigma-star", dest="sigma_star", type=float)
    t.add_argument("--activation")
    t.add_argument("--lr", type=float)
    t.add_argument("--decay", type=float)
    t.add_argument("--epoch-iters", dest="epoch_iters", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--test-batch", dest="test_batch", type=int)
    t.add_argument("--iters", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--model", choices=["spectral", "vanilla", "spectral_rnn", "vanilla_rnn"])
    t.add_argument("--mode", choices=["local", "materialized"])
    t.add_argument("--record-every", dest="record_every", type=int)
    t.add_argument("--clip", type=float)
    t.add_argument("--vanilla-scale", dest="vanilla_scale", type=float)
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("gradcheck", help="finite-difference check of BPTT", allow_abbrev=False)
    g.add_argument("--hidden", type=int, default=6)
    g.add_argument("--inputs", type=int, default=3)
    g.add_argument("--outputs", type=int, default=2)
    g.add_argument("--m1", type=int)
    g.add_argument("--m2", type=int)
    g.add_argument("--r", type=float, default=0.1)
    g.add_argument("--steps", type=int, default=4, help="sequence length t (at most 5)")
    g.add_argument("--batch", type=int, default=2)
    g.add_argument("--activation", default="tanh")
    g.add_argument("--model", choices=["spectral", "vanilla"], default="spectral")
    g.add_argument("--seed", type=int)
    g.add_argument("--show", type=int, default=5, help="rows of the report to print")
    g.add_argument("--break-gradient", action="store_true",
                   help="corrupt one analytic coordinate by x2 (checker sanity)")
    g.set_defaults(func=cmd_gradcheck)

    b = sub.add_parser("bench", help="predicted vs measured flops", allow_abbrev=False)
    b.add_argument("--hidden", type=int, default=64)
    b.add_argument("--m1", type=int, default=8)
    b.add_argument("--m2", type=int, default=8)
    b.add_argument("--k", type=int, help="reflector length for hprod (default min(n, 32))")
    b.add_argument("--repeats", type=int, default=20)
    b.add_argument("--seed", type=int)
    b.set_defaults(func=cmd_bench)

    d = sub.add_parser("decompose", help="write a square matrix in reflector form",
                       allow_abbrev=False)
    d.add_argument("--input", required=True, help="CSV matrix, one row per line")
    d.add_argument("--output", help="serialization path (default: stdout)")
    d.add_argument("--sigma-star", dest="sigma_star", type=float)
    d.add_argument("--r", type=float)
    d.set_defaults(func=cmd_decompose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"spectral-nn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
