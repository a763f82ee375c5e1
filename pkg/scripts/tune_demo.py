#!/usr/bin/env python3
"""GP/EI tuner against random search on (x - 0.3)^2, then on forecaster learning rate."""

import argparse
from dataclasses import replace

import numpy as np

from graphrl.bayestune import Dimension, SearchSpace, random_search, tune
from graphrl.graphsig import prepare_forecast_data
from graphrl.reference import forecast_config, forecast_spec
from graphrl.synth import generate
from graphrl.tgcn import train


def quadratic_study(seeds, budget):
    space = SearchSpace([Dimension("x", 0.0, 1.0)])

    def f(p):
        return (p["x"] - 0.3) ** 2

    bo, rs = [], []
    for seed in seeds:
        a = tune(f, space, budget, seed)
        b = random_search(f, space, budget, seed)
        bo.append(a.best_objective)
        rs.append(b.best_objective)
        print(f"seed {seed}  tuner x={a.best_point['x']:.4f} loss={a.best_objective:.2e}"
              f"  random x={b.best_point['x']:.4f} loss={b.best_objective:.2e}")
    print(f"mean best loss: tuner {np.mean(bo):.3e}  random {np.mean(rs):.3e}")


def lr_study(seed, budget, epochs):
    series, adj = generate(forecast_spec(seed))
    cfg = forecast_config(seed)
    train_rows = series[:1600]

    def objective(p):
        c = replace(cfg, lr=p["lr"], epochs=epochs)
        data = prepare_forecast_data(train_rows, adj, c.window, c.horizons, 0.8)
        model, _ = train(data.train, c, data.graph, data.scaler)
        return float(np.mean((model.predict(data.test.windows) - data.test.targets) ** 2))

    space = SearchSpace([Dimension("lr", 1e-4, 3e-2, "log10")])
    res = tune(objective, space, budget, seed)
    for row in res.log:
        print(f"  iter {row['iteration']:2d}  lr={row['point'][0]:.2e}  val mse={row['objective']:.3e}"
              + ("  *" if row["is_best"] else ""))
    print(f"best lr {res.best_point['lr']:.3e}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(10)))
    ap.add_argument("--budget", type=int, default=20)
    ap.add_argument("--lr-study", action="store_true", help="also tune the T-GCN learning rate")
    ap.add_argument("--lr-budget", type=int, default=8)
    ap.add_argument("--lr-epochs", type=int, default=20)
    args = ap.parse_args()
    quadratic_study(args.seeds, args.budget)
    if args.lr_study:
        lr_study(args.seeds[0], args.lr_budget, args.lr_epochs)


if __name__ == "__main__":
    main()
