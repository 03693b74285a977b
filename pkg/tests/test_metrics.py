import csv
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from slowcap.metrics import (
    AGGREGATE_COLUMNS,
    HISTOGRAM_COLUMNS,
    PER_IMAGE_COLUMNS,
    ImageRow,
    bleu,
    build_report,
    corpus_bleu,
    decode_step_flops,
    i_latency,
    i_loop,
    measure_latency,
    rcdf_area,
    reversed_cdf,
    spearman,
    write_aggregate_csv,
    write_histogram_csv,
    write_per_image_csv,
    write_rcdf_svg,
)

from conftest import TINY_CFG, make_tiny_model

S = 1e-9  # precision smoothing


def _p(m, t):
    return (m + S) / (t + S)


# hand-counted n-gram matches: (candidate, references, expected score)
BLEU_CASES = [
    ("a red circle .", ["a red circle ."], 1.0),
    ("a b c d", ["a b c d e"], math.exp(1 - 5 / 4)),
    # 7/8 unigrams, 5/7 bigrams, 3/6 trigrams, 2/5 four-grams; equal lengths
    ("a red circle and a blue square .", ["a red circle and a green square ."], (7 / 8 * 5 / 7 * 3 / 6 * 2 / 5) ** 0.25),
    # reference lengths 3 and 5 tie around 4 -> shorter wins -> no penalty; no four-gram match
    ("a red circle .", ["red circle .", "a small red circle ."], (_p(4, 4) * _p(2, 3) * _p(1, 2) * _p(0, 1)) ** 0.25),
    # two-token candidate: empty trigram/four-gram sets are neutral, penalty exp(1 - 3/2)
    ("red circle", ["red circle ."], math.exp(1 - 3 / 2)),
]


@pytest.mark.parametrize("cand,refs,expected", BLEU_CASES)
def test_bleu_hand_computed(cand, refs, expected):
    assert abs(bleu(cand.split(), [r.split() for r in refs]) - expected) < 1e-6


def test_bleu_edge_cases():
    assert bleu([], [["a"]]) == 0.0
    assert bleu("x y z w".split(), ["a b c d".split()]) < 1e-6
    with pytest.raises(ValueError):
        bleu(["a"], [])


words = st.lists(st.sampled_from("a b c d e".split()), min_size=1, max_size=8)


@given(words, st.lists(words, min_size=1, max_size=4), st.randoms())
def test_bleu_reference_properties(cand, refs, rnd):
    score = bleu(cand, refs)
    assert 0.0 <= score <= 1.0 + 1e-12
    shuffled = list(refs)
    rnd.shuffle(shuffled)
    assert bleu(cand, shuffled) == pytest.approx(score, abs=1e-12)
    # adding an exact match can only help
    assert bleu(cand, refs + [cand]) >= score - 1e-12
    assert bleu(cand, refs + [cand]) == pytest.approx(1.0)


def test_corpus_bleu_is_mean_of_sentences():
    cands = [c.split() for c, _, _ in BLEU_CASES]
    refs = [[r.split() for r in rs] for _, rs, _ in BLEU_CASES]
    assert corpus_bleu(cands, refs) == pytest.approx(np.mean([e for _, _, e in BLEU_CASES]), abs=1e-6)


def test_i_loop_examples():
    assert i_loop(10, 25) == 150.0
    assert i_loop(7, 7) == 0.0
    assert i_latency(2.0, 3.0) == pytest.approx(50.0)
    with pytest.raises(ValueError):
        i_loop(0, 5)


def test_latency_needs_enough_trials(tiny_vocab):
    model = make_tiny_model(0, tiny_vocab)
    x = np.full((3, 16, 16), 0.5)
    with pytest.raises(ValueError):
        measure_latency(model, x, trials=9)
    with pytest.raises(ValueError):
        measure_latency(model, x, warmups=2)


def test_latency_sample_with_fake_clock(tiny_vocab):
    model = make_tiny_model(0, tiny_vocab)
    ticks = iter(range(0, 10_000, 100))
    sample = measure_latency(model, np.full((3, 16, 16), 0.5), clock=lambda: next(ticks))
    assert sample.trials == 10 and sample.warmups == 3
    assert sample.durations_ns == [100] * 10 and sample.median_ns == 100.0
    assert sample.proxy == sample.loops * decode_step_flops(TINY_CFG, len(tiny_vocab))


def _forced(vocab, eos_logit):
    model = make_tiny_model(0, vocab)
    model.params["out_w"].data[:] = 0.0
    model.params["out_b"].data[:] = 0.0
    model.params["out_b"].data[vocab.eos] = eos_logit
    return model


def test_latency_grows_with_decode_length(tiny_vocab):
    from slowcap.captioner import ModelConfig

    cfg = ModelConfig(image_size=16, channels=3, patch=8, d_h=64, d_e=32, d_a=32, max_len=60)
    x = np.full((3, 16, 16), 0.5)
    short = make_tiny_model(0, tiny_vocab, cfg=cfg, eos_bias=50.0)
    long = make_tiny_model(0, tiny_vocab, cfg=cfg, eos_bias=-50.0)
    a = measure_latency(short, x, trials=10)
    b = measure_latency(long, x, trials=10)
    assert (a.loops, b.loops) == (1, 60)
    assert b.median_ns > a.median_ns
    # the proxy is exactly linear in the loop count
    assert b.proxy == 60 * a.proxy


def test_equal_loops_give_similar_latency(tiny_vocab):
    model = _forced(tiny_vocab, -10.0)
    xs = [np.full((3, 16, 16), v) for v in (0.3, 0.7)]
    # medians of repeated measurements; retry once to absorb scheduler noise
    for _ in range(3):
        meds = [measure_latency(model, x, trials=15).median_ns for x in xs]
        if abs(meds[0] - meds[1]) / min(meds) < 0.15:
            break
    assert abs(meds[0] - meds[1]) / min(meds) < 0.15


def test_spearman_known_values():
    assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
    assert spearman([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)


def _rows(n=6, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n):
        b = int(rng.integers(5, 20))
        a = int(rng.integers(b, 61))
        rows.append(
            ImageRow(i, b, a, float(rng.uniform(0, 5)), float(rng.uniform(0, 0.1)), 0.8, 0.2,
                     benign_latency_ns=1e5 * b, adv_latency_ns=1e5 * a, benign_proxy=10.0 * b,
                     adv_proxy=10.0 * a, success=a > b)
        )
    return rows


def test_single_image_aggregates_equal_its_values():
    row = _rows(1)[0]
    rep = build_report([row])
    assert rep.aggregates["i_loop"] == (row.i_loop, row.i_loop)
    assert rep.aggregates["l2"] == (row.l2, row.l2)
    assert rep.aggregates["adv_bleu"] == (0.2, 0.2)


def test_aggregates_recompute_from_rows():
    rows = _rows(9, seed=3)
    rep = build_report(rows)
    for name in ("i_loop", "l2", "adv_loops", "i_latency_cpu"):
        vals = [getattr(r, name if name != "i_latency_cpu" else "i_latency") for r in rows]
        assert rep.aggregates[name] == (float(np.mean(vals)), float(np.median(vals)))
    with pytest.raises(ValueError):
        build_report([])


def test_reversed_cdf_shape_and_area():
    rep = build_report(_rows(12, seed=1))
    for col in (2, 3):
        rc = reversed_cdf(rep.loop_hist, col)
        assert rc[0] == 1.0 and np.all(np.diff(rc) <= 0)
    assert sum(h[2] for h in rep.loop_hist) == 12 and sum(h[3] for h in rep.loop_hist) == 12
    # adversarial counts dominate benign ones row by row here
    assert rcdf_area(rep.loop_hist, 3) > rcdf_area(rep.loop_hist, 2)


def test_csv_schemas_and_svg(tmp_path):
    rep = build_report(_rows(4))
    write_per_image_csv(rep, tmp_path / "p.csv")
    write_aggregate_csv(rep, tmp_path / "a.csv")
    write_histogram_csv(rep.loop_hist, tmp_path / "h.csv")
    write_rcdf_svg(rep.loop_hist, tmp_path / "r.svg", title="loops")
    with open(tmp_path / "p.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == PER_IMAGE_COLUMNS and len(rows) == 4
    assert all(r["i_latency_gpu"] == "unavailable" for r in rows)
    assert float(rows[0]["i_loop"]) == pytest.approx(rep.rows[0].i_loop)
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == ",".join(AGGREGATE_COLUMNS)
    assert (tmp_path / "h.csv").read_text().splitlines()[0] == ",".join(HISTOGRAM_COLUMNS)
    root = ET.parse(tmp_path / "r.svg").getroot()
    assert root.tag.endswith("svg")
    assert len(root.findall("{http://www.w3.org/2000/svg}polyline")) == 2


def test_missing_latency_is_reported_unavailable(tmp_path):
    rows = [ImageRow(0, 10, 20, 1.0, 0.01, 0.5, 0.1, benign_proxy=1.0, adv_proxy=2.0)]
    rep = build_report(rows)
    assert "i_latency_cpu" not in rep.aggregates and rep.latency_hist == []
    write_per_image_csv(rep, tmp_path / "p.csv")
    row = next(csv.DictReader(open(tmp_path / "p.csv")))
    assert row["i_latency_cpu"] == "unavailable"
