"""Slowdown attack over lambda_per in {1e3, 1e4, 1e5} with one trained model.

    python3 scripts/lambda_sweep.py --model runs/main/model/model.ckpt --data runs/main/data --out runs/sweep
"""

import argparse
from pathlib import Path

from run_pipeline import step


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--lambdas", type=float, nargs="+", default=[1e3, 1e4, 1e5])
    p.add_argument("--norm", choices=("l2", "linf"), default="l2")
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=3)
    p.add_argument("--latency-trials", type=int, default=0)
    p.add_argument("--force", action="store_true")
    return p.parse_args()


def run(args):
    force = ["--force"] if args.force else []
    dirs = []
    for lam in args.lambdas:
        d = args.out / f"lambda_{lam:g}"
        step(
            "attack", "--model", args.model, "--data", args.data, "--method", "slowdown", "--norm", args.norm,
            "--iters", args.iters, "--lr", args.lr, "--seed", args.seed, "--lambda-per", lam,
            "--latency-trials", args.latency_trials, "--out", d, *force,
        )
        dirs.append(d)
    step("report", "--results", *dirs, "--labels", *[f"lambda{lam:g}" for lam in args.lambdas], "--out", args.out / "report", *force)


if __name__ == "__main__":
    run(parse_args())
