"""``msac`` command line.

Exit codes: 0 all checks pass, 1 a check failed (or training diverged),
2 usage or configuration error.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import bench as benchmod
from .applications import (
    LMConfig,
    SimilarityConfig,
    lm_task,
    lm_forward,
    similarity_accuracy,
    train_lm,
    train_similarity,
)
from .errors import DivergenceError, FormatError
from .gradcheck import REGISTRY, grad_check
from .io import read_tensor, save_params, write_tensor
from .verify import SUITES, run_suite

OK, FAILED, USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def default_seed():
    raw = os.environ.get("MSAC_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"MSAC_SEED must be an integer, got {raw!r}") from None


def parse_shape(text):
    try:
        shape = [int(s) for s in text.lower().split("x")]
    except ValueError:
        raise UsageError(f"bad shape {text!r}; expected e.g. 3x4x2") from None
    if not shape or any(s < 1 for s in shape):
        raise UsageError(f"shape entries must be positive: {text!r}")
    return shape


def emit(obj):
    print(json.dumps(obj), flush=True)


def cmd_verify(args):
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    names = SUITES if args.suite == "all" else (args.suite,)
    reports = [run_suite(name, args.trials, args.seed) for name in names]
    passed = all(r["passed"] for r in reports)
    emit({"command": "verify", "seed": args.seed, "suites": reports, "passed": passed})
    return OK if passed else FAILED


def cmd_gradcheck(args):
    if not args.eps > 0:
        raise UsageError("--eps must be positive")
    if not args.tol > 0:
        raise UsageError("--tol must be positive")
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    if args.op != "all" and args.op not in REGISTRY:
        raise UsageError(f"unknown op {args.op!r}; known: {', '.join(sorted(REGISTRY))}")
    ops = sorted(REGISTRY) if args.op == "all" else [args.op]
    passed = True
    for op in ops:
        rep = grad_check(op, args.trials, args.seed, args.eps)
        ok = rep.passed(args.tol)
        passed &= ok
        emit({"op": rep.op, "max_abs_error": rep.max_abs_error, "max_rel_error": rep.max_rel_error,
              "probe_count": rep.probe_count, "tolerance": args.tol, "passed": ok})
    return OK if passed else FAILED


def cmd_bench(args):
    try:
        grid = benchmod.parse_grid(args.grid)
        n, m = parse_shape(args.filter)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.repeats < 1:
        raise UsageError("--repeats must be at least 1")
    records = benchmod.run_grid(
        args.operator, grid, n=n, m=m, L=args.scales, C=args.heads, d=args.d, d_a=args.d_a, d_o=args.d_o,
        repeats=args.repeats, seed=args.seed, mem_cap=args.mem_cap * (1 << 20),
    )
    if args.out:
        with open(args.out, "w", newline="") as fh:
            benchmod.write_csv(records, fh)
    else:
        benchmod.write_csv(records, sys.stdout)
    return OK


def _write_curve(path, losses):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "loss"])
        for step, loss in enumerate(losses):
            writer.writerow([step, repr(loss)])


def cmd_train(args):
    cls = LMConfig if args.task == "lm" else SimilarityConfig
    if args.config:
        try:
            cfg = cls.load(args.config)
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}") from None
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise UsageError(f"invalid config {args.config}: {exc}") from None
    else:
        cfg = cls()
    if args.seed_given:
        cfg.seed = args.seed
    if not cfg.lr > 0 or cfg.steps < 1:
        raise UsageError("config needs a positive lr and steps")
    out = args.out or f"run-{args.task}"
    os.makedirs(out, exist_ok=True)
    curve = os.path.join(out, "loss.csv")
    try:
        if args.task == "lm":
            model, losses = train_lm(cfg)
            inputs, targets = lm_task(cfg)
            final = float(-np.mean(lm_forward(inputs, model)[np.arange(len(targets)), targets]))
            summary = {"final_loss": final, "target_loss": cfg.target_loss, "passed": final < cfg.target_loss}
        else:
            model, losses, (pairs, labels) = train_similarity(cfg)
            acc = similarity_accuracy(model, pairs, labels)
            summary = {"final_loss": losses[-1], "accuracy": acc, "passed": acc == 1.0}
    except DivergenceError as exc:
        _write_curve(curve, exc.losses)
        emit({"command": "train", "task": args.task, "diverged_at": exc.step, "passed": False})
        return FAILED
    _write_curve(curve, losses)
    save_params(os.path.join(out, "params"), model, extra={"task": args.task, "config": vars(cfg)})
    emit({"command": "train", "task": args.task, "steps": len(losses), "out": out, **summary})
    return OK if summary["passed"] else FAILED


def cmd_tensor(args):
    if args.action == "random":
        if not args.out:
            raise UsageError("tensor random needs --out")
        shape = parse_shape(args.shape)
        t = np.random.default_rng(args.seed).normal(size=shape)
        write_tensor(args.out, t)
        print(f"wrote {args.out} shape: {'x'.join(map(str, shape))}")
        return OK
    if not args.path:
        raise UsageError(f"tensor {args.action} needs a file path")
    try:
        t = read_tensor(args.path)
    except FileNotFoundError:
        raise UsageError(f"no such file: {args.path}") from None
    except FormatError as exc:
        raise UsageError(f"{args.path}: {exc}") from None
    print(f"shape: {'x'.join(map(str, t.shape))}")
    if args.action == "info":
        print(f"elements: {t.size}")
        for label, v in (("min", t.min()), ("max", t.max()), ("mean", t.mean()), ("std", t.std())):
            print(f"{label}: {float(v)!r}")
    else:
        for v in t.reshape(-1):
            print(repr(float(v)))
    return OK


def build_parser():
    parser = argparse.ArgumentParser(prog="msac", description="Multiscale self attentive convolution toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="random seed (default: $MSAC_SEED or 0)")

    p = sub.add_parser("verify", help="randomized equivalence suites")
    p.add_argument("suite", choices=SUITES + ("all",))
    p.add_argument("--trials", type=int, default=100)
    common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gradcheck", help="reverse mode vs central differences")
    p.add_argument("op", nargs="?", default="all")
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-4)
    common(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="time operators over a shape grid, CSV out")
    p.add_argument("operator", choices=benchmod.OPERATORS)
    p.add_argument("--grid", default="4x4,8x8,16x16")
    p.add_argument("--filter", default="1x1", help="filter size n x m")
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--scales", type=int, default=3, help="msac: use scales 1x1 .. LxL")
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--d-a", dest="d_a", type=int, default=4)
    p.add_argument("--d-o", dest="d_o", type=int, default=4)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--mem-cap", dest="mem_cap", type=int, default=1024, help="MiB of live tensor data")
    p.add_argument("--out")
    common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("train", help="toy training runs")
    p.add_argument("task", choices=("lm", "similarity"))
    p.add_argument("--config")
    p.add_argument("--out")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tensor", help="MST1 file utilities")
    p.add_argument("action", choices=("info", "dump", "random"))
    p.add_argument("path", nargs="?")
    p.add_argument("--shape", default="2x2")
    p.add_argument("--out")
    common(p)
    p.set_defaults(func=cmd_tensor)
    return parser


def main(argv=None):
    try:
        seed = default_seed()
    except UsageError as exc:
        print(f"msac: error: {exc}", file=sys.stderr)
        return USAGE
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = seed
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"msac: error: {exc}", file=sys.stderr)
        return USAGE


if __name__ == "__main__":
    sys.exit(main())
