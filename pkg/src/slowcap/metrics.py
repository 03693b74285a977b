"""Efficiency and accuracy measurements plus report exports."""

from __future__ import annotations

import csv
import math
import statistics
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BLEU_SMOOTHING = 1e-9


def i_loop(loop_benign, loop_adv):
    """Percent increase in decoder calls."""
    if loop_benign < 1:
        raise ValueError(f"benign loop count must be >= 1, got {loop_benign}")
    return (loop_adv - loop_benign) / loop_benign * 100.0


def i_latency(latency_benign, latency_adv):
    if latency_benign <= 0:
        raise ValueError("benign latency must be positive")
    return (latency_adv - latency_benign) / latency_benign * 100.0


# -- BLEU -------------------------------------------------------------------------


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate, references, max_n=4, smoothing=BLEU_SMOOTHING):
    """Sentence BLEU with clipped n-gram precisions and brevity penalty.

    Each precision is (matches + s) / (total + s) with s = ``smoothing``, so a
    zero match count gives a tiny but nonzero precision. The reference length
    is the one closest to the candidate length (shorter wins ties).
    """
    if not references:
        raise ValueError("bleu needs at least one reference")
    candidate = list(candidate)
    c = len(candidate)
    if c == 0:
        return 0.0
    log_p = 0.0
    for n in range(1, max_n + 1):
        cand = _ngrams(candidate, n)
        best = Counter()
        for ref in references:
            for g, k in _ngrams(list(ref), n).items():
                best[g] = max(best[g], k)
        matches = sum(min(k, best[g]) for g, k in cand.items())
        total = sum(cand.values())
        log_p += math.log((matches + smoothing) / (total + smoothing)) / max_n
    r = min((abs(len(ref) - c), len(ref)) for ref in references)[1]
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_p)


def corpus_bleu(candidates, references_list, max_n=4):
    """Mean of sentence scores."""
    scores = [bleu(c, refs, max_n) for c, refs in zip(candidates, references_list)]
    return float(np.mean(scores)) if scores else 0.0


# -- latency ------------------------------------------------------------------------


def decode_step_flops(cfg, vocab_size):
    """Multiply-add count of one decoder step, used as the latency proxy unit."""
    k, dh, de, da = cfg.n_patches, cfg.d_h, cfg.d_e, cfg.d_a
    attention = dh * da + k * da + k * da + k * dh
    gru = (de + dh) * 3 * dh + dh * 3 * dh + 6 * dh
    return 2 * (attention + gru + dh * vocab_size)


@dataclass
class LatencySample:
    durations_ns: list
    warmups: int
    trials: int
    loops: int
    proxy: float  # loops * decode_step_flops

    @property
    def median_ns(self):
        return float(statistics.median(self.durations_ns))


class MeasurementError(RuntimeError):
    pass


def _single_thread():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        import contextlib

        return contextlib.nullcontext()
    return threadpool_limits(limits=1)


def measure_latency(model, image, trials=10, warmups=3, clock=time.perf_counter_ns):
    """Median wall-clock time of greedy decoding one image.

    Runs ``warmups`` untimed decodes then ``trials`` timed ones, with BLAS
    pinned to one thread. Also returns the deterministic proxy
    loops * per-step cost for noise-free comparisons.
    """
    from .captioner import greedy_decode

    if trials < 10:
        raise ValueError(f"need at least 10 trials, got {trials}")
    if warmups < 3:
        raise ValueError(f"need at least 3 warmups, got {warmups}")
    if time.get_clock_info("perf_counter").resolution > 1e-6:
        raise MeasurementError("timer resolution is coarser than 1 microsecond")
    image = np.asarray(image)
    with _single_thread():
        for _ in range(warmups):
            trace = greedy_decode(model, image)
        durations = []
        for _ in range(trials):
            t0 = clock()
            trace = greedy_decode(model, image)
            durations.append(clock() - t0)
    if min(durations) <= 0:
        raise MeasurementError("non-positive duration measured")
    proxy = trace.steps * decode_step_flops(model.cfg, model.vocab_size)
    return LatencySample(durations, warmups, trials, trace.steps, float(proxy))


# -- rank statistics -------------------------------------------------------------------


def spearman(a, b):
    from scipy.stats import spearmanr

    return float(spearmanr(a, b).statistic)


# -- report ---------------------------------------------------------------------------

PER_IMAGE_COLUMNS = [
    "image",
    "benign_loops",
    "adv_loops",
    "i_loop",
    "benign_latency_ns",
    "adv_latency_ns",
    "i_latency_cpu",
    "i_latency_gpu",
    "benign_proxy",
    "adv_proxy",
    "i_latency_proxy",
    "l2",
    "linf",
    "benign_bleu",
    "adv_bleu",
    "success",
]
AGGREGATE_COLUMNS = ["metric", "mean", "median"]
HISTOGRAM_COLUMNS = ["bin_lo", "bin_hi", "benign_count", "adv_count"]
UNAVAILABLE = "unavailable"


@dataclass
class ImageRow:
    image: int
    benign_loops: int
    adv_loops: int
    l2: float
    linf: float
    benign_bleu: float
    adv_bleu: float
    benign_latency_ns: float | None = None
    adv_latency_ns: float | None = None
    benign_proxy: float = 0.0
    adv_proxy: float = 0.0
    success: bool = False

    @property
    def i_loop(self):
        return i_loop(self.benign_loops, self.adv_loops)

    @property
    def i_latency(self):
        if self.benign_latency_ns is None or self.adv_latency_ns is None:
            return None
        return i_latency(self.benign_latency_ns, self.adv_latency_ns)

    @property
    def i_latency_proxy(self):
        return i_latency(self.benign_proxy, self.adv_proxy)


@dataclass
class EfficiencyReport:
    rows: list
    aggregates: dict = field(default_factory=dict)
    loop_hist: list = field(default_factory=list)
    latency_hist: list = field(default_factory=list)

    def column(self, name):
        return [getattr(r, name) for r in self.rows]


def _aggregate(rows):
    metrics = {
        "benign_loops": [r.benign_loops for r in rows],
        "adv_loops": [r.adv_loops for r in rows],
        "i_loop": [r.i_loop for r in rows],
        "i_latency_proxy": [r.i_latency_proxy for r in rows],
        "l2": [r.l2 for r in rows],
        "linf": [r.linf for r in rows],
        "benign_bleu": [r.benign_bleu for r in rows],
        "adv_bleu": [r.adv_bleu for r in rows],
    }
    lat = [r.i_latency for r in rows]
    if all(v is not None for v in lat):
        metrics["i_latency_cpu"] = lat
        metrics["benign_latency_ns"] = [r.benign_latency_ns for r in rows]
        metrics["adv_latency_ns"] = [r.adv_latency_ns for r in rows]
    return {k: (float(np.mean(v)), float(np.median(v))) for k, v in metrics.items()}


def histogram(benign, adv, edges):
    b, _ = np.histogram(benign, bins=edges)
    a, _ = np.histogram(adv, bins=edges)
    return [(float(edges[i]), float(edges[i + 1]), int(b[i]), int(a[i])) for i in range(len(edges) - 1)]


def reversed_cdf(hist, column):
    """Fraction of samples at or above each bin's lower edge (starts at 1)."""
    counts = np.array([h[column] for h in hist], dtype=float)
    total = counts.sum()
    if total == 0:
        return np.zeros(len(counts))
    above = total - np.concatenate([[0.0], np.cumsum(counts)[:-1]])
    return above / total


def rcdf_area(hist, column):
    widths = np.array([h[1] - h[0] for h in hist])
    return float((reversed_cdf(hist, column) * widths).sum())


def build_report(rows, max_len=60, loop_bin=5, latency_bins=20) -> EfficiencyReport:
    if not rows:
        raise ValueError("report needs at least one result")
    loop_edges = np.arange(0, max_len + loop_bin, loop_bin) + 0.5
    loop_hist = histogram([r.benign_loops for r in rows], [r.adv_loops for r in rows], loop_edges)
    latency_hist = []
    if all(r.benign_latency_ns is not None for r in rows):
        vals = [r.benign_latency_ns for r in rows] + [r.adv_latency_ns for r in rows]
        lo, hi = min(vals), max(vals)
        edges = np.linspace(lo, hi if hi > lo else lo + 1.0, latency_bins + 1)
        latency_hist = histogram([r.benign_latency_ns for r in rows], [r.adv_latency_ns for r in rows], edges)
    return EfficiencyReport(rows, _aggregate(rows), loop_hist, latency_hist)


def _fmt(v):
    if v is None:
        return UNAVAILABLE
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def write_per_image_csv(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PER_IMAGE_COLUMNS)
        for r in report.rows:
            w.writerow(
                [
                    _fmt(v)
                    for v in (
                        r.image,
                        r.benign_loops,
                        r.adv_loops,
                        r.i_loop,
                        r.benign_latency_ns,
                        r.adv_latency_ns,
                        r.i_latency,
                        None,
                        r.benign_proxy,
                        r.adv_proxy,
                        r.i_latency_proxy,
                        r.l2,
                        r.linf,
                        r.benign_bleu,
                        r.adv_bleu,
                        r.success,
                    )
                ]
            )


def write_aggregate_csv(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_COLUMNS)
        for k, (mean, median) in report.aggregates.items():
            w.writerow([k, _fmt(mean), _fmt(median)])
        w.writerow(["i_latency_gpu", UNAVAILABLE, UNAVAILABLE])


def write_histogram_csv(hist, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTOGRAM_COLUMNS)
        for lo, hi, b, a in hist:
            w.writerow([_fmt(lo), _fmt(hi), b, a])


def write_rcdf_svg(hist, path, title="", xlabel="decoder calls", width=480, height=300):
    """Step plot of benign and adversarial reversed CDFs (1 at the left, falling to 0)."""
    pad = 40
    x0, x1 = hist[0][0], hist[-1][1]
    span = (x1 - x0) or 1.0

    def sx(v):
        return pad + (v - x0) / span * (width - 2 * pad)

    def sy(v):
        return height - pad - v * (height - 2 * pad)

    def polyline(column, color):
        rc = reversed_cdf(hist, column)
        pts = []
        for (lo, hi, *_), y in zip(hist, rc):
            pts += [(sx(lo), sy(y)), (sx(hi), sy(y))]
        pts.append((sx(x1), sy(0.0)))
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
        return f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>'

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2:.0f}" y="{height - 8}" text-anchor="middle" font-size="12">{xlabel}</text>',
        f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" font-size="13">{title}</text>',
        f'<text x="{pad - 6}" y="{sy(1.0) + 4:.0f}" text-anchor="end" font-size="10">1</text>',
        f'<text x="{pad - 6}" y="{sy(0.0) + 4:.0f}" text-anchor="end" font-size="10">0</text>',
        polyline(2, "green"),
        polyline(3, "red"),
        f'<text x="{width - pad}" y="{pad}" text-anchor="end" font-size="11" fill="green">benign</text>',
        f'<text x="{width - pad}" y="{pad + 14}" text-anchor="end" font-size="11" fill="red">adversarial</text>',
        "</svg>",
    ]
    Path(path).write_text("\n".join(parts) + "\n")
