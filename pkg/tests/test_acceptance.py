"""Acceptance suite: one pass/fail line per criterion, printed in the terminal summary.

The pipeline fixture runs the full desk-scale experiment through the CLI
(data seed 1, train seed 7, attack seed 3; 2000 training examples, 15 epochs,
50 test images, T = 300) and takes roughly ten minutes on one core.
"""

import json
import time

import numpy as np
import pytest

from slowcap import autodiff as ad
from slowcap.attacks import DEFAULT_EPS, METHODS, eos_log_likelihood, eos_loss, init_latent, to_image
from slowcap.autodiff import Tape, Tensor, backward
from slowcap.captioner import ModelConfig, load_checkpoint, rollout
from slowcap.cli import main, sha256_file
from slowcap.datagen import load_dataset
from slowcap.metrics import bleu, measure_latency, spearman

from conftest import ACCEPTANCE_LINES, make_tiny_model
from helpers import numerical_gradient, relative_error
from test_autodiff import OPS, SEEDS, _check_op
from test_metrics import BLEU_CASES

ATTACK_ITERS = 300
ATTACK_LR = 1.0
ATTACK_SEED = 3
N_IMAGES = 50


def record(n, title, passed, detail):
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {n:>2}. {title}: {detail}")
    assert passed, detail


def _run(*argv):
    code = main([str(a) for a in argv])
    assert code == 0, f"slowcap {' '.join(map(str, argv[:1]))} exited with {code}"


def _pipeline(root):
    """gen-data -> train -> slowdown attack; returns wall-clock seconds."""
    t0 = time.perf_counter()
    _run("gen-data", "--seed", 1, "--train", 2000, "--val", 200, "--test", N_IMAGES, "--out", root / "data")
    _run("train", "--data", root / "data", "--seed", 7, "--epochs", 15, "--out", root / "model")
    _attack(root, "slowdown")
    return time.perf_counter() - t0


def _attack(root, method, *extra, out=None):
    _run(
        "attack", "--model", root / "model" / "model.ckpt", "--data", root / "data", "--method", method,
        "--norm", "l2", "--iters", ATTACK_ITERS, "--lr", ATTACK_LR, "--seed", ATTACK_SEED,
        "--latency-trials", 0, "--out", out or root / method, *extra,
    )


def _records(d):
    return [json.loads(line) for line in open(d / "results.jsonl")]


def _adv_images(d, shape):
    flat = np.fromfile(d / "adv.f64", dtype="<f8")
    return flat.reshape((-1,) + tuple(shape))


@pytest.fixture(scope="session")
def experiment(tmp_path_factory):
    root = tmp_path_factory.mktemp("experiment")
    seconds = _pipeline(root)
    for method in METHODS[1:]:
        _attack(root, method)
    for lam in ("1e3", "1e5"):
        _attack(root, "slowdown", "--lambda-per", lam, out=root / f"slowdown_lambda{lam}")
    dirs = [root / m for m in METHODS] + [root / "slowdown_lambda1e3", root / "slowdown_lambda1e5"]
    labels = list(METHODS) + ["slowdown-lambda1e3", "slowdown-lambda1e5"]
    _run("report", "--results", *dirs, "--labels", *labels, "--out", root / "report")
    return {"root": root, "seconds": seconds}


def _mean_i_loop(d):
    return float(np.mean([r["adv_loops"] / r["benign_loops"] * 100 - 100 for r in _records(d)]))


# -- 1 -----------------------------------------------------------------------------------------


def _end_to_end_error(seed, vocab):
    cfg = ModelConfig(image_size=2, channels=1, patch=2, d_h=5, d_e=4, d_a=3, max_len=5)
    model = make_tiny_model(seed, vocab, cfg=cfg, scale=2.0).frozen()
    w0 = np.random.default_rng(seed).normal(size=(1, 1, 2, 2))
    teacher = np.array([[vocab.sos, 4, 5, 6]])

    def loss(w):
        ro = rollout(model, to_image(w), teacher=teacher)
        logits = ad.concat(ro.logits, axis=0)
        return eos_log_likelihood(logits, vocab.eos) + ad.log_softmax(logits, axis=1)[np.arange(4), np.array([4, 5, 6, 2])].sum()

    w = Tensor(w0, requires_grad=True)
    with Tape():
        out = loss(w)
    backward(out)
    return relative_error(w.grad, numerical_gradient(lambda v: loss(Tensor(v)).item(), w0))


def test_criterion_01_gradient_correctness(tiny_vocab):
    t0 = time.perf_counter()
    op_err = max(_check_op(*OPS[name], s) for name in OPS for s in SEEDS)
    e2e_err = max(_end_to_end_error(s, tiny_vocab) for s in SEEDS)
    secs = time.perf_counter() - t0
    ok = op_err < 1e-4 and e2e_err < 1e-3 and secs < 60
    record(1, "gradient correctness", ok,
           f"{len(OPS)} ops x {len(SEEDS)} seeds worst rel {op_err:.1e} (<1e-4); image->loss worst rel {e2e_err:.1e} (<1e-3); {secs:.1f}s (<60s)")


# -- 2 -----------------------------------------------------------------------------------------


def _image_grad(model, x0, make_loss):
    x = Tensor(x0, requires_grad=True)
    with Tape():
        ro = rollout(model, x)
        loss = make_loss(ad.concat(ro.logits, axis=0))
    backward(loss)
    return x.grad


def test_criterion_02_eos_gradient_identity_and_monte_carlo(tiny_vocab):
    worst, mc_wins = 0.0, 0
    for seed in range(10):
        model = make_tiny_model(seed, tiny_vocab, scale=2.0, eos_bias=1.0).frozen()
        x0 = np.random.default_rng(100 + seed).uniform(0.05, 0.95, size=(1, 3, 16, 16))
        eos = tiny_vocab.eos
        exact = _image_grad(model, x0, lambda l: eos_loss(l, eos))
        ref = _image_grad(model, x0, lambda l: eos_log_likelihood(l, eos))
        worst = max(worst, relative_error(exact, ref))
        errs = {}
        for m in (4, 256):
            rng = np.random.default_rng(seed)
            errs[m] = relative_error(_image_grad(model, x0, lambda l: eos_loss(l, eos, mc_samples=m, rng=rng)), exact)
        mc_wins += errs[256] < errs[4]
    ok = worst < 1e-6 and mc_wins >= 9
    record(2, "EOS-loss gradient identity", ok,
           f"exact-expectation worst rel {worst:.1e} (<1e-6); m=256 beats m=4 in {mc_wins}/10 trials (>=9)")


# -- 3 -----------------------------------------------------------------------------------------


def test_criterion_03_box_constraint():
    rng = np.random.default_rng(0)
    inside, worst_rt = True, 0.0
    for k in range(1000):
        scale = 50.0 * (k + 1) / 1000
        w = rng.uniform(-scale, scale, size=(3, 8, 8))
        w.flat[rng.integers(w.size)] = scale * rng.choice([-1.0, 1.0])  # hit the extreme exactly
        x = to_image(w).data
        inside &= bool(x.min() > 0.0 and x.max() < 1.0)
        x0 = rng.uniform(0, 1, size=(3, 8, 8))
        x0.flat[:2] = [0.0, 1.0]
        worst_rt = max(worst_rt, float(np.abs(to_image(init_latent(x0)).data - x0).max()))
    ok = inside and worst_rt < 1e-5
    record(3, "box constraint", ok,
           f"1000 latents up to |w|=50 strictly inside (0,1): {inside}; round trip Linf {worst_rt:.1e} (<1e-5)")


# -- 4..10 -----------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_04_end_to_end_slowdown(experiment):
    recs = _records(experiment["root"] / "slowdown")
    i_loop = _mean_i_loop(experiment["root"] / "slowdown")
    frac = np.mean([r["adv_terminated_by"] == "max_len" for r in recs])
    secs = experiment["seconds"]
    ok = len(recs) == N_IMAGES and i_loop >= 100 and frac >= 0.30 and secs < 900
    record(4, "end-to-end slowdown", ok,
           f"mean I-Loop {i_loop:.1f}% (>=100); max_len fraction {frac:.2f} (>=0.30); gen+train+attack {secs:.0f}s (<900s)")


@pytest.mark.slow
def test_criterion_05_baseline_dominance(experiment):
    root = experiment["root"]
    ours = _mean_i_loop(root / "slowdown")
    others = {m: _mean_i_loop(root / m) for m in METHODS[1:]}
    ok = all(ours > v for v in others.values())
    detail = ", ".join(f"{m} {v:.1f}%" for m, v in others.items())
    record(5, "baseline dominance", ok, f"slowdown {ours:.1f}% vs {detail}")


@pytest.mark.slow
def test_criterion_06_budget_compliance(experiment):
    root = experiment["root"]
    ds = load_dataset(root / "data")
    xs = np.stack([ex.image for ex in ds.test])
    adv = _adv_images(root / "slowdown", xs.shape[1:])
    l2 = np.sqrt(((adv - xs) ** 2).reshape(len(xs), -1).sum(axis=1))
    eps = DEFAULT_EPS["l2"]
    in_box = bool(adv.min() >= 0.0 and adv.max() <= 1.0)
    ok = bool(np.all(l2 <= eps * 1.001)) and in_box
    table = (root / "report" / "perturbation.csv").read_text().splitlines()
    record(6, "budget compliance", ok,
           f"max L2 {l2.max():.4f} <= {eps:.4f}*1.001; in [0,1]: {in_box}; mean L2 {l2.mean():.4f}; table row {table[1].split(',')[:2]}")


@pytest.mark.slow
def test_criterion_07_bleu_side_effect(experiment):
    recs = _records(experiment["root"] / "slowdown")
    benign = float(np.mean([r["benign_bleu"] for r in recs]))
    adv = float(np.mean([r["adv_bleu"] for r in recs]))
    ok = adv <= 0.5 * benign
    record(7, "accuracy side effect", ok, f"mean BLEU benign {benign:.4f} -> attacked {adv:.4f} (<= {0.5 * benign:.4f})")


@pytest.mark.slow
def test_criterion_08_latency_coupling(experiment):
    root = experiment["root"]
    model = load_checkpoint(root / "model" / "model.ckpt").frozen()
    ds = load_dataset(root / "data")
    xs = np.stack([ex.image for ex in ds.test])
    adv = _adv_images(root / "slowdown", xs.shape[1:])
    recs = _records(root / "slowdown")
    i_loop = [r["adv_loops"] / r["benign_loops"] * 100 - 100 for r in recs]
    i_lat, i_proxy = [], []
    for x, xa, r in zip(xs, adv, recs):
        b = measure_latency(model, x, trials=10)
        a = measure_latency(model, xa, trials=10)
        assert (b.loops, a.loops) == (r["benign_loops"], r["adv_loops"])
        i_lat.append((a.median_ns - b.median_ns) / b.median_ns * 100)
        i_proxy.append((a.proxy - b.proxy) / b.proxy * 100)
    rho_cpu, rho_proxy = spearman(i_lat, i_loop), spearman(i_proxy, i_loop)
    ok = rho_cpu >= 0.8 and rho_proxy >= 0.99
    record(8, "latency coupling", ok, f"Spearman(CPU I-Latency, I-Loop) {rho_cpu:.3f} (>=0.8); proxy {rho_proxy:.4f} (>=0.99)")


@pytest.mark.slow
def test_criterion_09_lambda_stability(experiment):
    root = experiment["root"]
    base = _mean_i_loop(root / "slowdown")
    runs = {lam: _mean_i_loop(root / f"slowdown_lambda{lam}") for lam in ("1e3", "1e5")}
    worst = max(abs(v - base) / base for v in runs.values())
    sweep = (root / "report" / "lambda_sweep.csv").read_text().splitlines()[0].split(",")
    ok = worst < 0.25 and len(sweep) == 4
    record(9, "hyperparameter stability", ok,
           f"I-Loop 1e3 {runs['1e3']:.1f}%, 1e4 {base:.1f}%, 1e5 {runs['1e5']:.1f}%; max rel change {worst:.3f} (<0.25)")


DETERMINISTIC_FILES = [
    "data/manifest.json", "data/train.f64", "data/train.jsonl", "data/val.f64", "data/val.jsonl",
    "data/test.f64", "data/test.jsonl",
    "model/model.ckpt", "model/train_log.csv",
    "slowdown/adv.f64", "slowdown/results.jsonl", "slowdown/per_image.csv",
    "slowdown/aggregate.csv", "slowdown/loop_hist.csv",
]


@pytest.mark.slow
def test_criterion_10_determinism(experiment, tmp_path_factory):
    first = experiment["root"]
    second = tmp_path_factory.mktemp("rerun")
    _pipeline(second)
    names = [n for n in DETERMINISTIC_FILES if (first / n).exists()]
    same = [n for n in names if sha256_file(first / n) == sha256_file(second / n)]
    ok = len(names) == len(DETERMINISTIC_FILES) and same == names
    differ = sorted(set(names) - set(same))
    record(10, "determinism", ok, f"{len(same)}/{len(names)} artifacts bit-identical on rerun" + (f"; differ: {differ}" if differ else ""))


# -- 11 ------------------------------------------------------------------------------------------


def test_criterion_11_bleu_oracle():
    errs = [abs(bleu(c.split(), [r.split() for r in refs]) - want) for c, refs, want in BLEU_CASES]
    ok = len(errs) == 5 and max(errs) < 1e-6 and abs(BLEU_CASES[1][2] - 0.7788) < 1e-4
    record(11, "BLEU oracle", ok, f"{len(errs)} hand-computed cases, worst abs error {max(errs):.1e} (<1e-6)")
