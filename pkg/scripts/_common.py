"""Shared driver for the experiment scripts: generate, train, report."""
import argparse
import json
import time
from pathlib import Path

import numpy as np

from tfgrad.cli import load_yaml, train_config
from tfgrad.experiments import generate_datasets
from tfgrad.model import Model
from tfgrad.training import smoothed, train

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(name, description):
    parser = argparse.ArgumentParser(description=description)
    parser.add_argument("--iterations", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", default=f"results/{name}")
    args = parser.parse_args()

    gen = load_yaml(CONFIGS / f"{name}_generate.yaml")["generator"]
    raw = load_yaml(CONFIGS / f"{name}_model.yaml")
    cfg = train_config(raw, args.seed, args.iterations, args.lr)
    train_ds, test_ds, info = generate_datasets(gen)
    if "rk4_step_halving_change" in info:
        print(f"RK4 step-halving change: {info['rk4_step_halving_change']:.2e}")

    model = Model(raw["model"])
    t0 = time.perf_counter()
    res = train(model, train_ds.u, train_ds.y, cfg, test=(test_ds.u, test_ds.y))
    wall = time.perf_counter() - t0
    print(f"{cfg.iterations} iterations in {wall:.1f} s")
    print(f"train  fit {res.train_metrics.fit:6.2f} %   rmse {res.train_metrics.rmse:.4g}")
    print(f"test   fit {res.test_metrics.fit:6.2f} %   rmse {res.test_metrics.rmse:.4g}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savez(out / "params.npz", **res.params)
    trace = np.column_stack([np.arange(cfg.iterations), res.loss_trace, smoothed(res.loss_trace)])
    np.savetxt(out / "loss_trace.csv", trace, delimiter=",", header="iteration,loss,loss_smoothed",
               comments="")
    y_sim = model.simulate(test_ds.u)
    sim = np.column_stack([np.arange(test_ds.T), test_ds.y[:, 0], y_sim[:, 0], test_ds.y[:, 0] - y_sim[:, 0]])
    np.savetxt(out / "test_simulation.csv", sim, delimiter=",", header="t,y_meas,y_sim,error", comments="")
    (out / "metrics.json").write_text(json.dumps({
        "train": res.train_metrics.as_dict(), "test": res.test_metrics.as_dict(),
        "iterations": cfg.iterations, "lr": cfg.lr, "seed": cfg.seed, "wall_time_s": wall,
        "generator": info,
    }, indent=2))
    return res
