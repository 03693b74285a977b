"""Full desk-scale experiment: gen-data -> train -> attack with every method -> report.

    python3 scripts/run_pipeline.py --out runs/main

Defaults reproduce the acceptance run (50 test images, T = 300, lr = 1).
"""

import argparse
import sys
import time
from pathlib import Path

from slowcap.attacks import METHODS
from slowcap.cli import main


def step(*argv):
    t0 = time.perf_counter()
    code = main([str(a) for a in argv])
    print(f"[{argv[0]}] exit {code} in {time.perf_counter() - t0:.1f}s", flush=True)
    if code != 0:
        sys.exit(code)


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--norm", choices=("l2", "linf"), default="l2")
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--data-seed", type=int, default=1)
    p.add_argument("--train-seed", type=int, default=7)
    p.add_argument("--attack-seed", type=int, default=3)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=50)
    p.add_argument("--latency-trials", type=int, default=10)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--force", action="store_true")
    return p.parse_args()


def run(args):
    out, force = args.out, ["--force"] if args.force else []
    step("gen-data", "--seed", args.data_seed, "--train", args.n_train, "--test", args.n_test, "--out", out / "data", *force)
    step("train", "--data", out / "data", "--seed", args.train_seed, "--epochs", args.epochs, "--out", out / "model", *force)
    dirs = []
    for method in METHODS:
        d = out / f"{method}_{args.norm}"
        step(
            "attack", "--model", out / "model" / "model.ckpt", "--data", out / "data", "--method", method,
            "--norm", args.norm, "--iters", args.iters, "--lr", args.lr, "--seed", args.attack_seed,
            "--latency-trials", args.latency_trials, "--jobs", args.jobs, "--out", d, *force,
        )
        dirs.append(d)
    step("report", "--results", *dirs, "--labels", *METHODS, "--out", out / "report", *force)


if __name__ == "__main__":
    run(parse_args())
