#!/usr/bin/env python3
"""Train the DQN monitor on the reference threshold walk and score it on held-out rows."""

import argparse
import json

from graphrl.reference import agent_learning_run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(10)))
    ap.add_argument("--episodes", type=int, default=50)
    ap.add_argument("--eval-episodes", type=int, default=10)
    ap.add_argument("--json", help="also write per-seed results here")
    args = ap.parse_args()

    results, passed = {}, 0
    for seed in args.seeds:
        out = agent_learning_run(seed, args.episodes, args.eval_episodes)
        passed += out.eval_mean >= 4500
        results[seed] = {"eval": out.eval_scores, "random": out.random_scores, "train": out.train_scores,
                         "seconds": out.seconds}
        print(f"seed {seed}  {out.seconds:5.1f}s  eval mean {out.eval_mean:7.1f}  random mean {out.random_mean:7.1f}"
              f"  last train score {out.train_scores[-1]:7.1f}")
    print(f"{passed}/{len(args.seeds)} seeds reach an evaluation mean of 4500")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
