"""JSON experiment configs: validation, defaults and problem construction.

A config has five blocks::

    {"problem": {...}, "regularizer": {...}, "optimizer": {...},
     "init": {...}, "run": {...}}

Unknown keys anywhere raise :class:`ConfigError`.  ``run.sweep`` maps dotted
paths (e.g. ``"regularizer.weights.lam"``) to value lists; every combination
is run for every seed.
"""
from __future__ import annotations

import copy
import hashlib
import itertools
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .initialization import InitScheme, run_streams, sparse_weights
from .models import (
    LeastSquaresProblem,
    NetworkProblem,
    build_network,
    make_quadratic,
    make_sparse_regression,
    make_two_blobs,
    read_csv,
    read_idx,
)
from .optimizers import MLConfig, constant, cosine, harmonic
from .regularizers import RegularizerSpec, initial_state


class ConfigError(ValueError):
    """Invalid experiment configuration."""


PROBLEM_KEYS = {
    "sparse_regression": {"kind", "n", "d", "k_true", "noise", "seed"},
    "two_blobs": {"kind", "n", "d", "separation", "hidden", "seed"},
    "quadratic": {"kind", "n", "d", "cond", "seed"},
    "dataset": {"kind", "path", "format", "labels", "model", "input_shape", "seed"},
}
OPTIMIZER_DEFAULTS = {
    "m": 99, "policy": "always", "kappa": 0.5, "eps": 1e-8, "restriction": "nonzero",
    "tau": 0.1, "schedule": "cosine", "coarse_tau": None, "coarse_schedule": None,
    "batch_fine": None, "batch_coarse": None, "vr": False, "check": False,
}
INIT_DEFAULTS = {"scheme": "zeros", "mask": "uniform", "sparsity": 0.99, "rescale": "variance"}
RUN_DEFAULTS = {"steps": 1000, "epochs": None, "eval_fraction": 0.0, "eval_every": None,
                "seeds": [0], "output": "runs", "sweep": {}}
BLOCKS = ("problem", "regularizer", "optimizer", "init", "run")


def _reject_unknown(block: dict, allowed, where: str):
    if not isinstance(block, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = set(block) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _positive_int_or_none(value, where):
    if value is None:
        return None
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise ConfigError(f"{where} must be a positive integer or null")
    return value


def normalize(cfg: dict) -> dict:
    """Validated copy of ``cfg`` with defaults filled in."""
    _reject_unknown(cfg, BLOCKS, "config")
    if "problem" not in cfg:
        raise ConfigError("config needs a problem block")
    out = {}
    prob = dict(cfg["problem"])
    kind = prob.get("kind")
    if kind not in PROBLEM_KEYS:
        raise ConfigError(f"unknown problem kind {kind!r}")
    _reject_unknown(prob, PROBLEM_KEYS[kind], "problem")
    if kind == "sparse_regression":
        prob.setdefault("noise", 0.05)
        if any(k not in prob for k in ("n", "d", "k_true")):
            raise ConfigError("sparse_regression needs n, d and k_true")
        if not 0 <= prob["k_true"] <= prob["d"]:
            raise ConfigError("k_true must lie in [0, d]")
    elif kind == "two_blobs":
        prob.setdefault("separation", 4.0)
        prob.setdefault("hidden", [])
        if any(k not in prob for k in ("n", "d")):
            raise ConfigError("two_blobs needs n and d")
    elif kind == "quadratic":
        prob.setdefault("cond", 10.0)
        if any(k not in prob for k in ("n", "d")):
            raise ConfigError("quadratic needs n and d")
    else:
        if "path" not in prob:
            raise ConfigError("dataset needs a path")
        prob.setdefault("format", "csv")
        prob.setdefault("model", "linear")
        if prob["format"] not in ("csv", "idx"):
            raise ConfigError("dataset format must be csv or idx")
        if prob["format"] == "idx" and "labels" not in prob:
            raise ConfigError("idx datasets need a labels path")
        model = prob["model"]
        if model != "linear":
            _reject_unknown(model, {"layers", "head"}, "problem.model")
            if "layers" not in model:
                raise ConfigError("problem.model needs layers")
    out["problem"] = prob

    reg = copy.deepcopy(cfg.get("regularizer", {}))
    _reject_unknown(reg, {"delta", "weights", "bias", "groups"}, "regularizer")
    if not float(reg.get("delta", 1.0)) > 0:
        raise ConfigError("regularizer.delta must be positive")
    out["regularizer"] = reg

    opt = {**OPTIMIZER_DEFAULTS, **cfg.get("optimizer", {})}
    _reject_unknown(opt, OPTIMIZER_DEFAULTS, "optimizer")
    if not isinstance(opt["m"], int) or opt["m"] < 0:
        raise ConfigError("optimizer.m must be a nonnegative integer")
    if opt["policy"] not in ("always", "criterion"):
        raise ConfigError("optimizer.policy must be always or criterion")
    if opt["schedule"] not in ("constant", "cosine"):
        raise ConfigError("optimizer.schedule must be constant or cosine")
    if opt["coarse_schedule"] not in (None, "constant", "cosine", "harmonic"):
        raise ConfigError("optimizer.coarse_schedule must be constant, cosine or harmonic")
    if not float(opt["tau"]) > 0 or (opt["coarse_tau"] is not None and not float(opt["coarse_tau"]) > 0):
        raise ConfigError("step sizes must be positive")
    if not (opt["restriction"] in ("nonzero", "all") or isinstance(opt["restriction"], list)):
        raise ConfigError("optimizer.restriction must be nonzero, all or a list of groups")
    for key in ("batch_fine", "batch_coarse"):
        _positive_int_or_none(opt[key], f"optimizer.{key}")
    out["optimizer"] = opt

    init = {**INIT_DEFAULTS, **cfg.get("init", {})}
    _reject_unknown(init, INIT_DEFAULTS, "init")
    if init["scheme"] not in ("zeros", "sparse"):
        raise ConfigError("init.scheme must be zeros or sparse")
    try:
        InitScheme(init["mask"], float(init["sparsity"]), init["rescale"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"init: {exc}") from None
    out["init"] = init

    run = {**RUN_DEFAULTS, **cfg.get("run", {})}
    _reject_unknown(run, RUN_DEFAULTS, "run")
    if run["epochs"] is None:
        if _positive_int_or_none(run["steps"], "run.steps") is None:
            raise ConfigError("run needs steps or epochs")
    else:
        _positive_int_or_none(run["epochs"], "run.epochs")
    _positive_int_or_none(run["eval_every"], "run.eval_every")
    if not 0.0 <= float(run["eval_fraction"]) < 1.0:
        raise ConfigError("run.eval_fraction must lie in [0, 1)")
    if not isinstance(run["seeds"], list) or not run["seeds"] or not all(
            isinstance(s, int) and s >= 0 for s in run["seeds"]):
        raise ConfigError("run.seeds must be a nonempty list of nonnegative integers")
    if not isinstance(run["sweep"], dict):
        raise ConfigError("run.sweep must map dotted paths to value lists")
    for path, values in run["sweep"].items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep values for {path!r} must be a nonempty list")
        if path.split(".")[0] not in BLOCKS or path.startswith("run."):
            raise ConfigError(f"cannot sweep {path!r}")
    out["run"] = run
    return out


def load(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return normalize(raw)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _set_path(cfg: dict, path: str, value):
    keys = path.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def expand(cfg: dict) -> list[tuple[str, dict]]:
    """One ``(tag, config)`` per sweep point and seed; each is a single run.

    The tag names the output subdirectory, e.g. ``lam=0.01/seed_3``.
    """
    sweep = cfg["run"]["sweep"]
    paths = sorted(sweep)
    runs = []
    for combo in itertools.product(*(sweep[p] for p in paths)):
        point = copy.deepcopy(cfg)
        point["run"]["sweep"] = {}
        label = []
        for p, v in zip(paths, combo):
            _set_path(point, p, v)
            label.append(f"{p.split('.')[-1]}={v}")
        for seed in cfg["run"]["seeds"]:
            single = copy.deepcopy(point)
            single["run"]["seeds"] = [seed]
            tag = "/".join(label + [f"seed_{seed}"])
            runs.append((tag, normalize(single)))
    return runs


def output_root(cfg: dict) -> Path:
    return Path(os.environ.get("BREGML_OUT") or cfg["run"]["output"])


@dataclass
class Experiment:
    """Everything a single run needs, built from a one-seed config."""

    problem: object
    spec: RegularizerSpec
    config: MLConfig
    state: object
    steps: int
    streams: dict
    eval_set: tuple | None = None
    truth: np.ndarray | None = None


def _dataset(prob: dict):
    base = Path(prob["path"])
    if prob["format"] == "csv":
        X, y = read_csv(base)
    else:
        X = read_idx(base)
        y = read_idx(prob["labels"])
    truth = None
    sidecar = base.with_suffix(".json")
    if sidecar.exists():
        with open(sidecar) as fh:
            meta = json.load(fh)
        if "support" in meta and "d" in meta.get("params", {}):
            truth = np.zeros(meta["params"]["d"])
            truth[meta["support"]] = meta.get("signs", 1.0)
    return X, y, truth


def build_problem(prob: dict, seed: int):
    """``(problem, X, Y, ground_truth)``; ``X, Y`` are the full data arrays."""
    data_seed = seed if prob.get("seed") is None else prob["seed"]
    kind = prob["kind"]
    if kind == "sparse_regression":
        p, truth = make_sparse_regression(prob["n"], prob["d"], prob["k_true"], prob["noise"], data_seed)
        return p, p.X, p.y, truth
    if kind == "two_blobs":
        p = make_two_blobs(prob["n"], prob["d"], prob["separation"], data_seed, tuple(prob["hidden"]))
        return p, p.X, p.Y, None
    if kind == "quadratic":
        p = make_quadratic(prob["n"], prob["d"], data_seed, prob["cond"])
        return p, None, None, None
    X, y, truth = _dataset(prob)
    if prob["model"] == "linear":
        X = X.reshape(X.shape[0], -1)
        return LeastSquaresProblem(X, y), X, y, truth
    model = prob["model"]
    shape = tuple(prob.get("input_shape") or X.shape[1:])
    head = model.get("head", "softmax_ce")
    net = build_network(shape, model["layers"], head)
    X = X.reshape((X.shape[0],) + shape)
    Y = y.astype(np.int64) if head == "softmax_ce" else y.reshape(X.shape[0], -1)
    return NetworkProblem(net, X, Y), X, Y, truth


def _split(problem, X, Y, fraction, rng):
    """Hold out ``fraction`` of the samples; returns the training problem and the held-out pair."""
    n = X.shape[0]
    n_eval = int(round(fraction * n))
    if n_eval == 0:
        return problem, None
    perm = rng.permutation(n)
    ev, tr = np.sort(perm[:n_eval]), np.sort(perm[n_eval:])
    if isinstance(problem, LeastSquaresProblem):
        return LeastSquaresProblem(X[tr], Y[tr], problem.layout), (X[ev], Y[ev])
    return NetworkProblem(problem.net, X[tr], Y[tr]), (X[ev], Y[ev])


def _schedule(kind, tau, total, step_offset=0):
    if kind == "constant":
        return constant(tau)
    if kind == "cosine":
        return cosine(tau, total)
    return harmonic(tau, step_offset)


def build_experiment(cfg: dict) -> Experiment:
    """Instantiate problem, regularizer, optimizer and initial state for one seed."""
    seed = cfg["run"]["seeds"][0]
    streams = run_streams(seed)
    problem, X, Y, truth = build_problem(cfg["problem"], seed)
    eval_set = None
    if X is not None and float(cfg["run"]["eval_fraction"]) > 0:
        problem, eval_set = _split(problem, X, Y, float(cfg["run"]["eval_fraction"]), streams["batches"])
    try:
        spec = RegularizerSpec.from_config(problem.layout, cfg["regularizer"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"regularizer: {exc}") from None

    opt = cfg["optimizer"]
    run = cfg["run"]
    if run["epochs"] is not None:
        per_epoch = -(-problem.n // (opt["batch_fine"] or problem.n))
        steps = run["epochs"] * per_epoch
    else:
        steps = run["steps"]
    tau = _schedule(opt["schedule"], float(opt["tau"]), steps)
    coarse_tau = None
    if opt["coarse_tau"] is not None or opt["coarse_schedule"] is not None:
        tau0 = float(opt["coarse_tau"] if opt["coarse_tau"] is not None else opt["tau"])
        coarse_tau = _schedule(opt["coarse_schedule"] or opt["schedule"], tau0, steps, opt["m"] + 1)
    for key in ("batch_fine", "batch_coarse"):
        if opt[key] is not None and opt[key] > problem.n:
            raise ConfigError(f"optimizer.{key} exceeds the number of training samples")
    restriction = opt["restriction"]
    if isinstance(restriction, list):
        restriction = [problem.layout.index(g) if isinstance(g, str) else int(g) for g in restriction]
    ml = MLConfig(m=opt["m"], policy=opt["policy"], kappa=float(opt["kappa"]), eps=float(opt["eps"]),
                  restriction=restriction, tau=tau, coarse_tau=coarse_tau,
                  batch_fine=opt["batch_fine"], batch_coarse=opt["batch_coarse"],
                  vr=bool(opt["vr"]), check=bool(opt["check"]))

    init = cfg["init"]
    if init["scheme"] == "sparse":
        if not isinstance(problem, NetworkProblem):
            raise ConfigError("sparse init needs a network problem")
        scheme = InitScheme(init["mask"], float(init["sparsity"]), init["rescale"])
        theta0 = sparse_weights(problem.net, scheme, streams)
    else:
        theta0 = np.zeros(problem.dim)
    state = initial_state(spec, theta0)
    return Experiment(problem, spec, ml, state, steps, streams, eval_set, truth)
