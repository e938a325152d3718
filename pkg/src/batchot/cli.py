"""Command-line entry point: ``train``, ``eval``, ``check-gradients``, ``sinkhorn-demo``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import MISSING, fields

import numpy as np

from batchot import embed, gradcheck
from batchot.config import ALIASES, RunConfig, convert_value, load_config
from batchot.data import batch_pair_stream, synth_blobs
from batchot.errors import BatchOTError, InputError
from batchot.ground import GroundParams, ground_matrices
from batchot.metrics import report_csv, report_table
from batchot.ot import Marginals, SinkhornConfig, sinkhorn, transport_cost
from batchot.train import REPORT_FILE, evaluate, load_datasets, train

log = logging.getLogger("batchot")

DEMO_MAX_N = 64


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value file; flags override it")
    group = parser.add_argument_group("run configuration (defaults in parentheses)")
    reverse_alias = {v: k for k, v in ALIASES.items()}
    for f in fields(RunConfig):
        names = [f"--{f.name.replace('_', '-')}"]
        if f.name in reverse_alias:
            names.append(f"--{reverse_alias[f.name]}")
        default = f.default if f.default is not MISSING else None
        if f.type in ("bool", bool):
            group.add_argument(*names, dest=f.name, action=argparse.BooleanOptionalAction, default=None,
                               help=f"({default})")
        else:
            group.add_argument(*names, dest=f.name, type=_converter(f.name), default=None, metavar=f.name.upper(),
                               help=f"({default!r})")


def _converter(name: str):
    def convert(raw: str):
        return convert_value(name, raw)

    convert.__name__ = name
    return convert


def _config_from(args) -> RunConfig:
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig)}
    return load_config(args.config, overrides)


def cmd_train(args) -> int:
    cfg = _config_from(args)
    result = train(cfg)
    print(f"wrote {os.path.join(cfg.output_dir, 'curves.csv')} ({len(result.rows)} rows)")
    print(report_table(result.report, {"accuracy": result.accuracy}))
    return 0


def cmd_eval(args) -> int:
    cfg = _config_from(args)
    if not os.path.isfile(args.checkpoint):
        raise InputError(f"checkpoint not found: {args.checkpoint}")
    net = embed.load_checkpoint(args.checkpoint)
    train_ds, test_ds = load_datasets(cfg)
    if net.input_dim != test_ds.dim:
        raise InputError(f"checkpoint expects {net.input_dim} input features, dataset has {test_ds.dim}")
    report, acc = evaluate(net, train_ds, test_ds, cfg)
    os.makedirs(cfg.output_dir, exist_ok=True)
    path = os.path.join(cfg.output_dir, REPORT_FILE)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report_csv(report, {"accuracy": acc}))
    if report.excluded_queries:
        log.warning("%d queries had no relevant item and were excluded", report.excluded_queries)
    print(report_table(report, {"accuracy": acc}))
    print(f"wrote {path}")
    return 0


def cmd_check_gradients(args) -> int:
    failed = False
    for seed in range(args.seed, args.seed + args.seeds):
        results = gradcheck.run_suite(seed, perturb=args.perturb)
        ok = all(r.passed for r in results)
        failed |= not ok
        for r in results:
            print(f"  {r.line()}")
        worst = max(r.max_rel_error for r in results)
        print(f"seed {seed}: {'PASS' if ok else 'FAIL'} (max rel err {worst:.3e})")
    return 1 if failed else 0


def _matrix_csv(matrix: np.ndarray) -> str:
    return "\n".join(",".join(repr(float(v)) for v in row) for row in matrix)


def _write_matrix(path: str, matrix: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows([[repr(float(v)) for v in row] for row in matrix])


def cmd_sinkhorn_demo(args) -> int:
    n = args.n
    if not 1 <= n <= DEMO_MAX_N:
        raise InputError(f"n must be in [1, {DEMO_MAX_N}], got {n}")
    if args.constant_cost is not None:
        m_star = np.full((n, n), args.constant_cost)
    else:
        blobs = synth_blobs(5, max(n, 40), 10, 0.08, args.seed)
        pair = next(batch_pair_stream(blobs, n, args.seed))
        g = ground_matrices(pair.x1, pair.x2, pair.labels1, pair.labels2, GroundParams(args.gamma, args.epsilon))
        m_star = g.m_star
    cfg = SinkhornConfig(
        lam=args.lam, max_iterations=args.max_iterations, convergence_tolerance=args.tolerance, stabilized=True
    )
    plan = sinkhorn(m_star, Marginals.uniform(n), cfg)
    print("# M*")
    print(_matrix_csv(m_star))
    print("# T*")
    print(_matrix_csv(plan.t))
    print(f"# row marginal residual {plan.marginal_residual:.3e}")
    print(f"# column marginal residual {plan.column_residual:.3e}")
    print(f"# tolerance {args.tolerance:.3e}, iterations {plan.converged_iterations}")
    print(f"# <T,M> {transport_cost(plan.t, m_star)!r}")
    if args.output_dir:
        os.makedirs(args.output_dir, exist_ok=True)
        _write_matrix(os.path.join(args.output_dir, "m_star.csv"), m_star)
        _write_matrix(os.path.join(args.output_dir, "plan.csv"), plan.t)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="batchot", description="Batch-wise optimal transport metric learning.")
    parser.add_argument("-q", "--quiet", action="store_true", help="only print results and errors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an embedding network and write run artifacts")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the configured test set")
    p.add_argument("--checkpoint", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("check-gradients", help="finite-difference checks of all analytic gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds to run")
    p.add_argument("--perturb", type=float, default=0.0, help="scale analytic gradients by 1+PERTURB (test hook)")
    p.set_defaults(func=cmd_check_gradients)

    p = sub.add_parser("sinkhorn-demo", help="print the ground matrix and plan for one blobs batch pair")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--lambda", dest="lam", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gamma", type=float, default=10.0)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.add_argument("--max-iterations", type=int, default=10_000)
    p.add_argument("--constant-cost", type=float, default=None, help="use this value for every cost cell")
    p.add_argument("--output-dir", default="", help="also write m_star.csv and plan.csv here")
    p.set_defaults(func=cmd_sinkhorn_demo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr
    )
    try:
        return args.func(args)
    except (BatchOTError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
