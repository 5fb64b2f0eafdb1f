"""Command line entry point.

    bregml train --config PATH [--jobs N]
    bregml verify {prox,transfer,optimizer,vr,flops,all}
    bregml flops (--run DIR | --config PATH)
    bregml datagen GENERATOR --out PATH [--seed S] [key=value ...]

Exit codes: 0 success, 1 failed checks, 2 bad config or arguments,
3 non-finite gradient during training.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError
from .diagnostics import RunRecord, expected_step_flops, training_flop_ratio
from .errors import NonFiniteGradient
from .models import make_sparse_regression, make_two_blobs, write_csv
from .models.problems import NetworkProblem
from .optimizers import run
from .param_space import conv_sparsity, save_checkpoint, total_sparsity
from .verify import run_suite

log = logging.getLogger("bregml")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _num(x):
    """JSON-safe float: NaN and inf become null."""
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def support_f1(theta, truth) -> float:
    sup, ref = np.asarray(theta) != 0, np.asarray(truth) != 0
    denom = sup.sum() + ref.sum()
    return 1.0 if denom == 0 else float(2 * np.sum(sup & ref) / denom)


def _metrics(exp, state) -> dict:
    prob = exp.problem
    out = {"loss": prob.loss(state.theta)}
    acc = prob.accuracy(state.theta)
    if acc is not None:
        out["accuracy"] = acc
    if exp.eval_set is not None:
        X, Y = exp.eval_set
        if isinstance(prob, NetworkProblem):
            out["eval_loss"] = float(prob.net.losses(state.theta, X, Y).mean())
            acc = prob.accuracy(state.theta, X=X, Y=Y)
            if acc is not None:
                out["eval_accuracy"] = acc
        else:
            r = X @ state.theta - Y
            out["eval_loss"] = float(0.5 * np.mean(r * r))
    out["sparsity"] = total_sparsity(state.theta)
    return out


def train_one(tag: str, cfg: dict, root: str) -> dict:
    """Run one (config, seed) pair and write its outputs under ``root/tag``."""
    exp = cfgmod.build_experiment(cfg)
    outdir = Path(root) / tag
    outdir.mkdir(parents=True, exist_ok=True)
    state, record, traces = run(
        exp.problem, exp.spec, exp.config, exp.state, exp.steps, exp.streams["batches"],
        evaluate=lambda s, t: _metrics(exp, s), eval_every=cfg["run"]["eval_every"])
    record.write_csv(outdir / "trace.csv")
    record.write_evals_csv(outdir / "evals.csv")
    save_checkpoint(outdir / "checkpoint.json", exp.spec.layout, state.theta, v=state.v)
    final = record.evals[-1]
    layout = exp.spec.layout
    summary = {
        "tag": tag,
        "seed": cfg["run"]["seeds"][0],
        "steps": len(record),
        "final_loss": _num(final["loss"]),
        "total_sparsity": _num(total_sparsity(state.theta)),
        "conv_sparsity": _num(conv_sparsity(layout, state.theta)) if layout.conv_groups() else None,
        "accuracy": _num(final.get("accuracy")),
        "eval_accuracy": _num(final.get("eval_accuracy")),
        "eval_loss": _num(final.get("eval_loss")),
        "support_f1": support_f1(state.theta, exp.truth) if exp.truth is not None else None,
        "f_dense": record.f_dense,
        "mean_f_sparse": float(np.mean(record.column("f_sparse"))),
        "flop_ratio": training_flop_ratio(record),
        "coarse_phases": sum(t.coarse for t in traces),
        "config": cfg,
        "config_hash": cfgmod.config_hash(cfg),
    }
    with open(outdir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return summary


AGGREGATE_COLUMNS = ["tag", "seed", "steps", "final_loss", "total_sparsity", "conv_sparsity",
                     "accuracy", "eval_accuracy", "support_f1", "flop_ratio"]


def write_aggregate(path, summaries):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_COLUMNS)
        for s in summaries:
            w.writerow(["" if s[k] is None else (repr(s[k]) if isinstance(s[k], float) else s[k])
                        for k in AGGREGATE_COLUMNS])


def cmd_train(args) -> int:
    try:
        cfg = cfgmod.load(args.config)
        runs = cfgmod.expand(cfg)
        for _, single in runs:
            cfgmod.build_experiment(single)
    except (ConfigError, KeyError, TypeError, ValueError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    root = cfgmod.output_root(cfg)
    root.mkdir(parents=True, exist_ok=True)
    try:
        if args.jobs > 1 and len(runs) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                futures = [pool.submit(train_one, tag, c, str(root)) for tag, c in runs]
                summaries = [f.result() for f in futures]
        else:
            summaries = [train_one(tag, c, str(root)) for tag, c in runs]
    except NonFiniteGradient as exc:
        log.error("non-finite gradient at step %s: %s", getattr(exc, "step", "?"), exc)
        return EXIT_NUMERIC
    write_aggregate(root / "aggregate.csv", summaries)
    for s in summaries:
        print(f"{s['tag']}: loss {s['final_loss']:.6g}  sparsity {s['total_sparsity']:.4f}  "
              f"flop ratio {s['flop_ratio']:.4f}")
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        checks = run_suite(args.suite)
    except KeyError:
        log.error("unknown suite %r", args.suite)
        return EXIT_CONFIG
    width = max(len(c.name) for c in checks)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<{width}}  {c.detail}")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_FAIL


def _flops_report(name, f_dense, f_sparse, m, ratio):
    print(f"{name}")
    print(f"  f_D                      {f_dense:.6g}")
    print(f"  mean f_S                 {f_sparse:.6g}")
    print(f"  expected FLOPs per step  {expected_step_flops(min(f_sparse, f_dense), f_dense, m):.6g}")
    print(f"  training FLOP ratio      {ratio:.6g}")


def cmd_flops(args) -> int:
    if args.run is not None:
        base = Path(args.run)
        if not base.is_dir():
            log.error("run directory %s not found", base)
            return EXIT_CONFIG
        dirs = [base] if (base / "trace.csv").exists() else sorted(
            p.parent for p in base.rglob("trace.csv"))
        if not dirs:
            log.error("no trace.csv under %s", base)
            return EXIT_CONFIG
        for d in dirs:
            with open(d / "summary.json") as fh:
                summary = json.load(fh)
            rec = RunRecord.read_csv(d / "trace.csv", summary["f_dense"])
            _flops_report(str(d), rec.f_dense, float(np.mean(rec.column("f_sparse"))),
                          summary["config"]["optimizer"]["m"], training_flop_ratio(rec))
        return EXIT_OK
    try:
        cfg = cfgmod.load(args.config)
        exp = cfgmod.build_experiment(cfgmod.expand(cfg)[0][1])
    except (ConfigError, KeyError, TypeError, ValueError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    f_d = float(exp.problem.forward_flops())
    f_s = float(exp.problem.forward_flops(exp.state.theta))
    m = cfg["optimizer"]["m"]
    _flops_report(str(args.config) + " (at initialization)", f_d, f_s, m,
                  expected_step_flops(f_s, f_d, m) / (3.0 * f_d))
    return EXIT_OK


GENERATORS = {
    "sparse_regression": {"n": int, "d": int, "k_true": int, "noise": float},
    "two_blobs": {"n": int, "d": int, "separation": float},
}
GENERATOR_DEFAULTS = {
    "sparse_regression": {"n": 200, "d": 500, "k_true": 10, "noise": 0.05},
    "two_blobs": {"n": 200, "d": 10, "separation": 4.0},
}


def cmd_datagen(args) -> int:
    if args.generator not in GENERATORS:
        log.error("unknown generator %r", args.generator)
        return EXIT_CONFIG
    types = GENERATORS[args.generator]
    params = dict(GENERATOR_DEFAULTS[args.generator])
    try:
        for item in args.params:
            key, _, value = item.partition("=")
            if key not in types or not value:
                raise ValueError(f"bad parameter {item!r}")
            params[key] = types[key](value)
        meta = {"generator": args.generator, "params": params, "seed": args.seed}
        if args.generator == "sparse_regression":
            prob, truth = make_sparse_regression(params["n"], params["d"], params["k_true"],
                                                 params["noise"], args.seed)
            X, y = prob.X, prob.y
            support = np.flatnonzero(truth)
            meta["support"] = support.tolist()
            meta["signs"] = truth[support].tolist()
        else:
            prob = make_two_blobs(params["n"], params["d"], params["separation"], args.seed)
            X, y = prob.X, prob.Y
    except ValueError as exc:
        log.error("invalid parameters: %s", exc)
        return EXIT_CONFIG
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, X, y)
    with open(out.with_suffix(".json"), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote {out} ({X.shape[0]} rows x {X.shape[1] + 1} columns)")
    return EXIT_OK


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bregml", description="Sparse training with (multilevel) LinBreg.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run an experiment config")
    t.add_argument("--config", required=True)
    t.add_argument("--jobs", type=int, default=1)
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("verify", help="run invariant and oracle suites")
    v.add_argument("suite")
    v.set_defaults(func=cmd_verify)

    f = sub.add_parser("flops", help="FLOP report for a run or a config")
    g = f.add_mutually_exclusive_group(required=True)
    g.add_argument("--run")
    g.add_argument("--config")
    f.set_defaults(func=cmd_flops)

    d = sub.add_parser("datagen", help="write a synthetic dataset")
    d.add_argument("generator")
    d.add_argument("--out", required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("params", nargs="*", help="key=value generator parameters")
    d.set_defaults(func=cmd_datagen)
    return p


def main(argv=None) -> int:
    p = parser()
    try:
        # key=value tokens after --out land in the leftovers
        args, extra = p.parse_known_args(argv)
        if extra and args.command != "datagen":
            p.error(f"unrecognized arguments: {' '.join(extra)}")
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.command == "datagen":
        args.params = list(args.params) + extra
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
