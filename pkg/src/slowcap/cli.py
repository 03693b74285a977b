"""Command line: gen-data -> train -> attack (x7 methods) -> report.

Exit codes: 0 success, 2 usage or config error, 3 numeric failure, 4 I/O.
If --out is omitted, outputs go under $SLOWCAP_OUT/<command>.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import METHODS, AttackConfig, run_attack
from .captioner import load_checkpoint, save_checkpoint
from .datagen import generate_dataset, load_dataset, save_dataset
from .errors import CheckpointError, ConfigError
from .metrics import (
    ImageRow,
    bleu,
    build_report,
    decode_step_flops,
    measure_latency,
    write_aggregate_csv,
    write_histogram_csv,
    write_per_image_csv,
    write_rcdf_svg,
)
from .trainer import TrainConfig, train, write_log_csv

log = logging.getLogger("slowcap")
OUT_ENV = "SLOWCAP_OUT"
EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class UsageError(Exception):
    pass


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: dict
    inputs: dict
    out_dir: str
    artifacts: dict = field(default_factory=dict)
    started: float = field(default_factory=time.time)
    finished: float | None = None
    version: str = __version__

    def add(self, path):
        path = Path(path)
        self.artifacts[path.name] = sha256_file(path)

    def write(self):
        self.finished = time.time()
        path = Path(self.out_dir) / "manifest.json"
        data = dict(self.__dict__)
        if path.exists():  # a dataset manifest may already live here
            path = Path(self.out_dir) / "run_manifest.json"
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        return path


def _out_dir(args, command):
    out = args.out
    if out is None:
        root = os.environ.get(OUT_ENV)
        if not root:
            raise UsageError(f"--out is required (or set {OUT_ENV})")
        out = os.path.join(root, command)
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise FileExistsError(f"{out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    if args.force:
        for name in ("manifest.json", "run_manifest.json"):
            (out / name).unlink(missing_ok=True)
    return out


# -- gen-data -------------------------------------------------------------------------


def cmd_gen_data(args):
    out = _out_dir(args, "data")
    ds = generate_dataset(args.seed, args.train, args.val, args.test)
    written = save_dataset(ds, out)
    run = RunManifest("gen-data", vars_clean(args), {"data": args.seed}, {}, str(out))
    for p in written:
        run.add(p)
    run.write()
    print(f"wrote {len(written)} files to {out} (vocabulary {len(ds.vocab)} tokens)")
    return EXIT_OK


# -- train ------------------------------------------------------------------------------


def cmd_train(args):
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed)
    out = _out_dir(args, "model")
    ds = load_dataset(args.data)
    model, history = train(ds, cfg, progress=lambda e: print(f"epoch {e.epoch}: train {e.train_loss:.4f} val {e.val_loss:.4f} bleu {e.val_bleu:.4f}", flush=True))
    ckpt = out / "model.ckpt"
    save_checkpoint(model, ckpt, extra={"train_config": cfg.__dict__})
    write_log_csv(history, out / "train_log.csv")
    run = RunManifest("train", vars_clean(args), {"train": args.seed, "data": ds.seed}, {"data": str(args.data)}, str(out))
    run.add(ckpt)
    run.add(out / "train_log.csv")
    run.write()
    print(f"checkpoint {ckpt}")
    return EXIT_OK


# -- attack -------------------------------------------------------------------------------


def _attack_chunk(payload):
    ckpt, xs, ids, method, cfg = payload
    return run_attack(load_checkpoint(ckpt), xs, method, cfg, ids)


def attack_config_from_args(args):
    return AttackConfig(
        norm=args.norm,
        eps=args.eps,
        iters=args.iters,
        lr=args.lr,
        lambda_dep=args.lambda_dep,
        lambda_per=args.lambda_per,
        seed=args.seed,
    )


def cmd_attack(args):
    cfg = attack_config_from_args(args)
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    out = _out_dir(args, f"attack_{args.method}")
    model = load_checkpoint(args.model)
    ds = load_dataset(args.data)
    if ds.vocab.tokens != model.vocab.tokens:
        raise ConfigError("dataset vocabulary does not match the model's")
    examples = getattr(ds, args.split)
    if args.n_images is not None:
        examples = examples[: args.n_images]
    xs = np.stack([ex.image for ex in examples])
    ids = list(range(len(examples)))
    chunks = np.array_split(np.arange(len(ids)), args.jobs)
    payloads = [(args.model, xs[c], [ids[i] for i in c], args.method, cfg) for c in chunks if len(c)]
    if args.jobs == 1:
        results = _attack_chunk(payloads[0])
    else:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = [r for part in pool.map(_attack_chunk, payloads) for r in part]

    # timing runs after all attacks finish, one image at a time
    unit = decode_step_flops(model.cfg, model.vocab_size)
    rows, records = [], []
    frozen = model.frozen()
    sidecar = out / "adv.f64"
    with open(sidecar, "wb") as fh:
        for k, (res, ex) in enumerate(zip(results, examples)):
            fh.write(np.ascontiguousarray(res.x_adv, dtype="<f8").tobytes())
            b_words = model.vocab.decode(res.benign.tokens)
            a_words = model.vocab.decode(res.adversarial.tokens)
            lat_b = lat_a = None
            if args.latency_trials > 0:
                lat_b = measure_latency(frozen, res.x, trials=args.latency_trials).median_ns
                lat_a = measure_latency(frozen, res.x_adv, trials=args.latency_trials).median_ns
            row = ImageRow(
                image=res.image_id,
                benign_loops=res.benign_loops,
                adv_loops=res.adv_loops,
                l2=res.l2,
                linf=res.linf,
                benign_bleu=bleu(b_words, ex.captions),
                adv_bleu=bleu(a_words, ex.captions),
                benign_latency_ns=lat_b,
                adv_latency_ns=lat_a,
                benign_proxy=float(res.benign_loops * unit),
                adv_proxy=float(res.adv_loops * unit),
                success=res.success,
            )
            rows.append(row)
            records.append(
                {
                    "image": res.image_id,
                    "method": res.method,
                    "config": res.config,
                    "sidecar_index": k,
                    "image_shape": list(res.x_adv.shape),
                    "benign_caption": " ".join(b_words),
                    "adv_caption": " ".join(a_words),
                    "benign_tokens": res.benign.tokens,
                    "adv_tokens": res.adversarial.tokens,
                    "benign_terminated_by": res.benign.terminated_by,
                    "adv_terminated_by": res.adversarial.terminated_by,
                    "iterations": res.iterations,
                    "loss_curve": res.loss_curve,
                    **{k2: v for k2, v in row.__dict__.items() if k2 != "image"},
                }
            )
    with open(out / "results.jsonl", "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    report = build_report(rows, max_len=model.max_len)
    write_per_image_csv(report, out / "per_image.csv")
    write_aggregate_csv(report, out / "aggregate.csv")
    write_histogram_csv(report.loop_hist, out / "loop_hist.csv")
    run = RunManifest(
        "attack",
        {**vars_clean(args), "attack_config": cfg.to_dict()},
        {"attack": args.seed, "train": model.seed},
        {"model": str(args.model), "data": str(args.data)},
        str(out),
    )
    for name in ("adv.f64", "results.jsonl", "per_image.csv", "aggregate.csv", "loop_hist.csv"):
        run.add(out / name)
    run.write()
    agg = report.aggregates
    print(
        f"{args.method}: mean I-Loop {agg['i_loop'][0]:.2f}%  loops {agg['benign_loops'][0]:.2f} -> {agg['adv_loops'][0]:.2f}  "
        f"L2 {agg['l2'][0]:.4f}  BLEU {agg['benign_bleu'][0]:.4f} -> {agg['adv_bleu'][0]:.4f}"
    )
    return EXIT_OK


# -- report --------------------------------------------------------------------------------


def load_results(result_dir):
    """Read an attack output directory back into (label info, ImageRows)."""
    rows, meta = [], None
    with open(Path(result_dir) / "results.jsonl") as fh:
        for line in fh:
            rec = json.loads(line)
            meta = meta or {"method": rec["method"], "config": rec["config"]}
            rows.append(ImageRow(image=rec["image"], **{f: rec[f] for f in ImageRow.__dataclass_fields__ if f != "image"}))
    if meta is None:
        raise CheckpointError(f"{result_dir}/results.jsonl holds no records")
    return meta, rows


TABLE_METRICS = ("i_loop", "i_latency_proxy", "i_latency_cpu")


def comparison_table(sets):
    """Rows = metrics, one column per result set, plus the column holding the row max."""
    labels = [s[0] for s in sets]
    table = []
    for metric in TABLE_METRICS:
        vals = [rep.aggregates.get(metric, (None,))[0] for _, rep in sets]
        known = [v for v in vals if v is not None]
        best = labels[vals.index(max(known))] if known else ""
        table.append([metric] + vals + [best])
    return ["metric"] + labels + ["best"], table


def perturbation_table(sets):
    header = ["metric"] + [s[0] for s in sets]
    return header, [[m] + [rep.aggregates[m][0] for _, rep in sets] for m in ("l2", "linf")]


def bleu_table(sets):
    header = ["metric"] + [s[0] for s in sets]
    return header, [[m] + [rep.aggregates[m][0] for _, rep in sets] for m in ("benign_bleu", "adv_bleu")]


def lambda_table(sets, metas):
    """Slowdown runs grouped by lambda_per; None when fewer than two values are present."""
    by_lam = {}
    for (label, rep), meta in zip(sets, metas):
        if meta["method"] == "slowdown":
            by_lam.setdefault(meta["config"]["lambda_per"], rep)
    if len(by_lam) < 2:
        return None
    lams = sorted(by_lam)
    header = ["metric"] + [f"lambda_per={lam:g}" for lam in lams]
    rows = [[m] + [by_lam[lam].aggregates.get(m, (None,))[0] for lam in lams] for m in ("i_loop", "i_latency_proxy", "l2")]
    return header, rows


def _cell(v):
    if v is None:
        return "unavailable"
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def write_table(header, rows, path):
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def markdown_table(header, rows):
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(_cell(v) for v in r) + " |" for r in rows]
    return "\n".join(lines)


def cmd_report(args):
    out = _out_dir(args, "report")
    metas, sets = [], []
    labels = args.labels or []
    if labels and len(labels) != len(args.results):
        raise ConfigError("--labels must match --results in number")
    for i, d in enumerate(args.results):
        meta, rows = load_results(d)
        label = labels[i] if labels else f"{meta['method']}-{meta['config']['norm']}"
        if label in [s[0] for s in sets]:
            label = f"{label}-{i}"
        rep = build_report(rows)
        sets.append((label, rep))
        metas.append(meta)
        write_histogram_csv(rep.loop_hist, out / f"loop_hist_{label}.csv")
        write_rcdf_svg(rep.loop_hist, out / f"loop_rcdf_{label}.svg", title=f"{label}: reversed CDF of decoder calls")
        if rep.latency_hist:
            write_histogram_csv(rep.latency_hist, out / f"latency_hist_{label}.csv")
            write_rcdf_svg(rep.latency_hist, out / f"latency_rcdf_{label}.svg", title=f"{label}: latency", xlabel="ns")
    tables = {
        "comparison": comparison_table(sets),
        "perturbation": perturbation_table(sets),
        "bleu": bleu_table(sets),
    }
    lam = lambda_table(sets, metas)
    if lam is not None:
        tables["lambda_sweep"] = lam
    md = []
    for name, (header, rows) in tables.items():
        write_table(header, rows, out / f"{name}.csv")
        md += [f"## {name}", "", markdown_table(header, rows), ""]
    (out / "tables.md").write_text("\n".join(md))
    run = RunManifest("report", vars_clean(args), {}, {"results": [str(r) for r in args.results]}, str(out))
    for p in sorted(out.iterdir()):
        if p.name not in ("manifest.json", "run_manifest.json"):
            run.add(p)
    run.write()
    print("\n".join(md))
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------------


def vars_clean(args):
    def clean(v):
        if isinstance(v, Path):
            return str(v)
        if isinstance(v, list):
            return [clean(x) for x in v]
        return v

    return {k: clean(v) for k, v in vars(args).items() if k != "func"}


def build_parser():
    p = argparse.ArgumentParser(prog="slowcap", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", type=Path, default=None, help=f"output directory (default ${OUT_ENV}/<command>)")
        sp.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")

    g = sub.add_parser("gen-data", help="generate the synthetic captioned-shapes corpus")
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--train", type=int, default=2000)
    g.add_argument("--val", type=int, default=200)
    g.add_argument("--test", type=int, default=50)
    common(g)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the victim captioner")
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--epochs", type=int, default=15)
    t.add_argument("--seed", type=int, default=7)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--lr", type=float, default=1e-3)
    common(t)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attack", help="attack test images with one method")
    a.add_argument("--model", type=Path, required=True)
    a.add_argument("--data", type=Path, required=True)
    a.add_argument("--method", choices=METHODS, required=True)
    a.add_argument("--norm", choices=("l2", "linf"), default="l2")
    a.add_argument("--eps", type=float, default=None, help="budget; default 5.71 for l2, 0.03 for linf")
    a.add_argument("--iters", type=int, default=1000)
    a.add_argument("--lambda-dep", type=float, default=1.0)
    a.add_argument("--lambda-per", type=float, default=1e4)
    a.add_argument("--lr", type=float, default=1e-2)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--split", choices=("train", "val", "test"), default="test")
    a.add_argument("--n-images", type=int, default=None)
    a.add_argument("--jobs", type=int, default=1, help="worker processes for the attack phase")
    a.add_argument("--latency-trials", type=int, default=10, help="timed decodes per image; 0 disables wall-clock timing")
    common(a)
    a.set_defaults(func=cmd_attack)

    r = sub.add_parser("report", help="tables and charts across attack result directories")
    r.add_argument("--results", type=Path, nargs="+", required=True)
    r.add_argument("--labels", nargs="+", default=None)
    common(r)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if getattr(args, "latency_trials", 0) and 0 < args.latency_trials < 10:
            raise ConfigError("--latency-trials must be 0 or at least 10")
        return args.func(args)
    except (UsageError, ValueError) as exc:  # ConfigError, DomainError, ShapeError
        print(f"slowcap: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:  # NonFiniteError and DivergenceError
        print(f"slowcap: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, CheckpointError) as exc:
        print(f"slowcap: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
