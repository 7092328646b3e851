"""Train and evaluate block-oriented models built from differentiable transfer functions.

    tfgrad generate  --config gen.yaml [--out DIR] [--seed N]
    tfgrad train     --config run.yaml --dataset DATA [--out DIR] [--seed N] [--iterations N] [--lr X]
    tfgrad eval      --config run.yaml --dataset DATA [--params params.npz] [--out DIR]
    tfgrad gradcheck --config run.yaml [--seed N]

``DATA`` is either a directory holding ``train.csv`` and ``test.csv`` or a
single CSV whose header records the train/test split. The output directory
is ``--out``, else ``$TFGRAD_OUT_DIR``, else ``./out``.

Exit codes: 0 success, 1 validation error, 2 numerical failure (divergence
or a failed gradient check).
"""
from __future__ import annotations

import argparse
import io
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from . import benchdata as bd
from .autodiff import grad_check
from .errors import (ConfigError, DatasetFormatError, GraphError, NumericalRangeError, ShapeError,
                     TrainingDivergedError)
from .experiments import generate_datasets
from .model import Model, parse_model_config
from .training import TrainConfig, init_params, metrics, train

log = logging.getLogger("tfgrad")

OUT_ENV = "TFGRAD_OUT_DIR"
EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2
GRADCHECK_TOL = 1e-5


# config and file helpers ------------------------------------------------------

def load_yaml(path) -> dict:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"malformed YAML in {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a mapping")
    return raw


def train_config(raw: dict, seed=None, iterations=None, lr=None) -> TrainConfig:
    section = dict(raw.get("train") or {})
    if not isinstance(raw.get("train", {}), (dict, type(None))):
        raise ConfigError("train", "expected a mapping")
    known = set(TrainConfig.__dataclass_fields__)
    for key in section:
        if key not in known:
            raise ConfigError(f"train.{key}", "unknown field")
    for key, val in (("seed", seed), ("iterations", iterations), ("lr", lr)):
        if val is not None:
            section[key] = val
    try:
        return TrainConfig(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError("train", str(exc)) from None


def out_dir(arg) -> Path:
    path = Path(arg or os.environ.get(OUT_ENV) or "out")
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_json(path, obj):
    bd.atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def save_params(path, params):
    buf = io.BytesIO()
    np.savez(buf, **params)
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)


def load_params(path) -> dict:
    try:
        with np.load(path) as data:
            return {k: data[k] for k in data.files}
    except OSError as exc:
        raise ConfigError("params", f"cannot read {path}: {exc}") from None


def load_dataset(path):
    """Return ``(train, test)`` as ``(u, y)`` pairs; test is None when absent."""
    path = Path(path)
    if path.is_dir():
        tr = bd.load_csv(path / "train.csv")
        te_path = path / "test.csv"
        te = bd.load_csv(te_path) if te_path.exists() else None
        return (tr.u, tr.y), (None if te is None else (te.u, te.y))
    if not path.exists():
        raise ConfigError("dataset", f"no such file or directory: {path}")
    d = bd.load_csv(path)
    train_u, train_y = d.train_part()
    test = d.test_part() if d.split < d.T else None
    return (train_u, train_y), test


def _fmt_row(values):
    return ",".join(f"{v:.17g}" for v in values)


def _table(header, columns) -> str:
    rows = np.column_stack(columns)
    return ",".join(header) + "\n" + "".join(_fmt_row(r) + "\n" for r in rows)


def _build_model(raw) -> Model:
    if "model" not in raw:
        raise ConfigError("model", "missing")
    return Model(parse_model_config(raw["model"]))


# commands ------------------------------------------------------------------------

def cmd_generate(args) -> int:
    raw = load_yaml(args.config)
    gen = raw.get("generator")
    if gen is None:
        raise ConfigError("generator", "missing")
    train_ds, test_ds, info = generate_datasets(gen, seed=args.seed)
    out = out_dir(args.out)
    bd.save_csv(train_ds, out / "train.csv")
    bd.save_csv(test_ds, out / "test.csv")
    resolved = dict(gen, seed=info["seed"])
    write_json(out / "manifest.json", {
        "command": "generate",
        "config": resolved,
        "seed": info["seed"],
        "files": {"train": "train.csv", "test": "test.csv"},
        "T_train": train_ds.T,
        "T_test": test_ds.T,
        "info": info,
    })
    print(f"wrote {out / 'train.csv'} ({train_ds.T} samples) and {out / 'test.csv'} ({test_ds.T} samples)")
    if "rk4_step_halving_change" in info:
        print(f"rk4 step-halving change: {info['rk4_step_halving_change']:.3e}")
    return EXIT_OK


def cmd_train(args) -> int:
    raw = load_yaml(args.config)
    model = _build_model(raw)
    cfg = train_config(raw, args.seed, args.iterations, args.lr)
    dataset = args.dataset or raw.get("dataset")
    if dataset is None:
        raise ConfigError("dataset", "missing (pass --dataset)")
    (u, y), test = load_dataset(dataset)
    _check_io(model, u, y)
    start = time.perf_counter()
    result = train(model, u, y, cfg, test=test)
    wall = time.perf_counter() - start
    out = out_dir(args.out)
    save_params(out / "params.npz", result.params)
    iters = np.arange(len(result.loss_trace))
    bd.atomic_write(out / "loss_trace.csv", _table(["iteration", "loss"], [iters, result.loss_trace]))
    report = {"train": result.train_metrics.as_dict()}
    if result.test_metrics is not None:
        report["test"] = result.test_metrics.as_dict()
    write_json(out / "metrics.json", report)
    resolved = dict(raw, train=asdict(cfg), dataset=str(dataset))
    write_json(out / "manifest.json", {
        "command": "train",
        "config": resolved,
        "seed": cfg.seed,
        "metrics": report,
        "loss_trace": "loss_trace.csv",
        "params": "params.npz",
        "wall_time_s": wall,
    })
    for part, m in report.items():
        print(f"{part}: fit {m['fit']:.2f} %  rmse {m['rmse']:.6g}")
    return EXIT_OK


def _check_io(model: Model, u, y):
    if u.shape[1] != model.input.channels:
        raise ShapeError(f"{model.input.name}: dataset has {u.shape[1]} input channels, "
                         f"model expects {model.input.channels}")
    if y.shape[1] != model.output_channels:
        raise ShapeError(f"{model.output.name}: dataset has {y.shape[1]} output channels, "
                         f"model produces {model.output_channels}")


def cmd_eval(args) -> int:
    raw = load_yaml(args.config)
    model = _build_model(raw)
    cfg = train_config(raw, args.seed)
    dataset = args.dataset or raw.get("dataset")
    if dataset is None:
        raise ConfigError("dataset", "missing (pass --dataset)")
    train_pair, test_pair = load_dataset(dataset)
    u, y = test_pair if test_pair is not None else train_pair
    _check_io(model, u, y)
    init_params(model.graph, cfg)
    if args.params:
        params = load_params(args.params)
        expected = model.graph.param_values()
        missing = sorted(set(expected) - set(params))
        if missing:
            raise ShapeError(f"{missing[0].split('.')[0]}: parameter {missing[0]!r} missing from {args.params}")
        model.graph.set_param_values({k: params[k] for k in expected})
    y_sim = model.simulate(u)
    rep = metrics(y, y_sim)
    out = out_dir(args.out)
    ch = y.shape[1]
    suffix = [""] if ch == 1 else [str(i) for i in range(ch)]
    header = ["t"] + [f"{n}{s}" for n in ("y_meas", "y_sim", "error") for s in suffix]
    cols = [np.arange(len(y))] + [y[:, i] for i in range(ch)] + [y_sim[:, i] for i in range(ch)] \
        + [(y - y_sim)[:, i] for i in range(ch)]
    bd.atomic_write(out / "simulated.csv", _table(header, cols))
    write_json(out / "eval.json", {"config": str(args.config), "params": args.params,
                                   "dataset": str(dataset), "metrics": rep.as_dict()})
    print(f"fit: {rep.fit:.4f} %")
    print(f"rmse: {rep.rmse:.6g}")
    return EXIT_OK


def gradcheck_settings(raw: dict, length=None) -> dict:
    """Optional ``gradcheck:`` section: input_rms, length, rel_step."""
    section = raw.get("gradcheck") or {}
    if not isinstance(section, dict):
        raise ConfigError("gradcheck", "expected a mapping")
    out = {"input_rms": 1.0, "length": 128, "rel_step": 1e-5}
    for key, val in section.items():
        if key not in out:
            raise ConfigError(f"gradcheck.{key}", "unknown field")
        try:
            out[key] = type(out[key])(val)
        except (TypeError, ValueError):
            raise ConfigError(f"gradcheck.{key}", f"expected a number, got {val!r}") from None
        if out[key] <= 0:
            raise ConfigError(f"gradcheck.{key}", "must be positive")
    if length is not None:
        out["length"] = length
    return out


def cmd_gradcheck(args) -> int:
    raw = load_yaml(args.config)
    model = _build_model(raw)
    cfg = train_config(raw, args.seed)
    opts = gradcheck_settings(raw, args.length)
    rng = np.random.default_rng(cfg.seed)
    init_params(model.graph, cfg)
    # push the LTI coefficients a little further from zero so every path
    # through the graph carries a gradient well above finite-difference noise
    for p in model.graph.parameters.values():
        if p.group == "lti":
            p.value = p.value + rng.uniform(-0.05, 0.05, p.value.shape)
    u = opts["input_rms"] * rng.standard_normal((opts["length"], model.input.channels))
    y = rng.standard_normal((opts["length"], model.output_channels))
    report = grad_check(model.graph, {model.input.name: u, Model.TARGET: y},
                        rel_step=opts["rel_step"], output=model.loss)
    print(report)
    ok = report.passed(GRADCHECK_TOL)
    print(f"max relative error {report.max_error:.3e} ({'pass' if ok else 'FAIL'}, tol {GRADCHECK_TOL:g})")
    return EXIT_OK if ok else EXIT_NUMERIC


# entry point ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tfgrad", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=True):
        p.add_argument("--config", required=True, help="YAML config file")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
        p.add_argument("--seed", type=int)
        if dataset:
            p.add_argument("--dataset", help="dataset directory or CSV file")

    p = sub.add_parser("generate", help="simulate a benchmark plant and write train/test CSV files")
    common(p, dataset=False)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a configured model")
    common(p)
    p.add_argument("--iterations", type=int)
    p.add_argument("--lr", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="simulate a model on a dataset and report fit and RMSE")
    common(p)
    p.add_argument("--params", help="trained parameters (.npz written by train)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    common(p, dataset=False)
    p.add_argument("--length", type=int, help="length of the random test sequence (default 128)")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ShapeError, DatasetFormatError, GraphError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TrainingDivergedError, NumericalRangeError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
