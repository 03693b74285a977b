"""Slowdown attack on caption length, plus accuracy attacks and corruptions as baselines.

The slowdown attack optimizes a latent ``w`` with ``x' = (tanh(w) + 1) / 2``
so the adversarial image always stays inside the pixel box. Each iteration
re-runs greedy decoding on the current ``x'`` and minimizes

    L_total = L_eos + lambda_dep * L_dep + lambda_per * L_per

by plain gradient descent on ``w``. The update direction is descent: both
efficiency terms are written as quantities whose decrease delays EOS, so a
literal ``w + lr * grad`` would make the model stop sooner.

Expectations over the output distribution treat the probabilities as
constants (no gradient through ``p``). That makes the gradient of ``L_eos``
equal the gradient of the mean EOS log-likelihood, which is what lets the
logit-level loss stand in for the cross-entropy objective.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .captioner import CaptionModel, DecodeTrace, greedy_decode_batch, rollout
from .errors import ConfigError, NonFiniteError
from .trainer import pad_captions

LATENT_EPS = 1e-6  # clamp applied before arctanh
LATENT_MAX = 15.0  # |w| beyond this saturates tanh to 1.0 in float64
BUDGET_SLACK = 1e-3
REFERENCE_L2_EPS = 40.0
REFERENCE_SIDE = 224


def scaled_l2_budget(side=32, channels=3, ref_eps=REFERENCE_L2_EPS, ref_side=REFERENCE_SIDE):
    """Rescale an L2 budget set for ref_side x ref_side images to side x side."""
    return ref_eps * math.sqrt(side * side * channels) / math.sqrt(ref_side * ref_side * channels)


DEFAULT_EPS = {"l2": scaled_l2_budget(), "linf": 0.03}
METHODS = ("slowdown", "pgd", "cw", "quantize", "gaussian", "jpeg", "tvm")
CORRUPTIONS = {"quantize": "quantize", "gaussian": "gaussian", "jpeg": "jpeg_like", "tvm": "tvm"}


@dataclass(frozen=True)
class AttackConfig:
    norm: str = "l2"
    eps: float | None = None  # None -> DEFAULT_EPS[norm]
    iters: int = 1000
    lr: float = 1e-2
    lambda_dep: float = 1.0
    lambda_per: float = 1e4
    seed: int = 0
    mc_samples: int | None = None  # None -> exact expectation
    pgd_step: float | None = None  # None -> 2.5 * eps / iters
    cw_c: float = 1.0
    cw_rounds: int = 3
    cw_lr: float = 1e-2
    quant_bits: int = 3
    jpeg_quality: int = 50
    tv_weight: float = 0.03
    tv_iters: int = 50
    tv_step: float = 0.05

    def __post_init__(self):
        if self.norm not in DEFAULT_EPS:
            raise ConfigError(f"norm must be one of {sorted(DEFAULT_EPS)}, got {self.norm!r}")
        if self.eps is None:
            object.__setattr__(self, "eps", DEFAULT_EPS[self.norm])
        if not self.eps > 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")
        if self.iters < 1:
            raise ConfigError(f"iters must be >= 1, got {self.iters}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.lambda_dep < 0 or self.lambda_per < 0:
            raise ConfigError("lambda_dep and lambda_per must be >= 0")
        if self.mc_samples is not None and self.mc_samples < 1:
            raise ConfigError("mc_samples must be >= 1")
        if not 1 <= self.quant_bits <= 16:
            raise ConfigError("quant_bits must lie in [1, 16]")
        if not 1 <= self.jpeg_quality <= 100:
            raise ConfigError("jpeg_quality must lie in [1, 100]")
        if self.cw_rounds < 1:
            raise ConfigError("cw_rounds must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class AttackResult:
    method: str
    x: np.ndarray
    x_adv: np.ndarray
    benign: DecodeTrace
    adversarial: DecodeTrace
    config: dict
    iterations: int = 0
    loss_curve: dict = field(default_factory=dict)
    image_id: int = 0

    @property
    def delta(self):
        return self.x_adv - self.x

    @property
    def l2(self):
        return float(np.sqrt((self.delta**2).sum()))

    @property
    def linf(self):
        return float(np.abs(self.delta).max())

    @property
    def benign_loops(self):
        return self.benign.steps

    @property
    def adv_loops(self):
        return self.adversarial.steps

    @property
    def success(self):
        """Only a strict increase in decoder calls counts as success."""
        return self.adv_loops > self.benign_loops


# -- change of variables ---------------------------------------------------------------


def to_image(w):
    """x' = (tanh(w) + 1) / 2, strictly inside (0, 1) for any finite w."""
    w = ad.as_tensor(w)
    # clamp in value only: keeps float64 tanh below 1.0
    if np.abs(w.data).max() > LATENT_MAX:
        w = _clamp(w, LATENT_MAX)
    return (ad.tanh(w) + 1.0) * 0.5


def _clamp(w, bound):
    inside = (np.abs(w.data) <= bound).astype(np.float64)
    outside = np.clip(w.data, -bound, bound) * (1.0 - inside)
    return w * Tensor(inside) + Tensor(outside)


def init_latent(x, eta=LATENT_EPS):
    x = np.asarray(x, dtype=np.float64)
    if x.min() < 0 or x.max() > 1:
        raise ValueError("image must lie in [0, 1]")
    return np.arctanh(2.0 * np.clip(x, eta, 1.0 - eta) - 1.0)


# -- efficiency losses ----------------------------------------------------------------------


def _expectation_weights(probs, mc_samples=None, rng=None):
    """Constant weights q with sum_k q_k l_k estimating E_{k~p} l_k."""
    if mc_samples is None:
        return probs
    rng = np.random.default_rng() if rng is None else rng
    p = probs / probs.sum(axis=1, keepdims=True)
    return rng.multinomial(mc_samples, p) / float(mc_samples)


def _row_weights(n_rows, weights):
    return np.full(n_rows, 1.0 / n_rows) if weights is None else np.asarray(weights, dtype=np.float64)


def _contrast_loss(logits, targets, weights, mc_samples, rng):
    logits = ad.as_tensor(logits)
    n = logits.shape[0]
    probs = ad.softmax_np(logits.data, axis=1)
    q = _expectation_weights(probs, mc_samples, rng)
    picked = logits[np.arange(n), np.asarray(targets)]
    expected = (logits * Tensor(q)).sum(axis=1)
    return ((picked - expected) * Tensor(_row_weights(n, weights))).sum()


def eos_loss(logits, eos, weights=None, mc_samples=None, rng=None):
    """Weighted sum over rows of l[eos] - E_{k~p} l[k] for logits (n, V).

    Default weights 1/n give the per-trace mean.
    """
    n = ad.as_tensor(logits).shape[0]
    return _contrast_loss(logits, np.full(n, eos), weights, mc_samples, rng)


def dep_loss(logits, tokens=None, weights=None, mc_samples=None, rng=None):
    """Same contrast as :func:`eos_loss` with each row's own argmax token."""
    logits = ad.as_tensor(logits)
    if tokens is None:
        tokens = np.argmax(logits.data, axis=1)
    return _contrast_loss(logits, tokens, weights, mc_samples, rng)


def eos_log_likelihood(logits, eos, weights=None):
    """Mean log p[eos] over rows; the cross-entropy counterpart of :func:`eos_loss`."""
    logits = ad.as_tensor(logits)
    n = logits.shape[0]
    logp = ad.log_softmax(logits, axis=1)[:, eos]
    return (logp * Tensor(_row_weights(n, weights))).sum()


def norms(delta, norm):
    """Per-image L2 or Linf norms of a (B, ...) perturbation tensor."""
    delta = ad.as_tensor(delta)
    flat = delta.reshape(delta.shape[0], -1)
    if norm == "l2":
        return ad.sqrt((flat * flat).sum(axis=1))
    return ad.amax(ad.absolute(flat), axis=1)


def perturbation_penalty(delta, eps, norm):
    """Hinge max(||delta|| - eps, 0); delta is (B, ...) and the result is per image."""
    return ad.relu(norms(delta, norm) - eps)


def _np_norms(delta, norm):
    flat = delta.reshape(delta.shape[0], -1)
    return np.sqrt((flat**2).sum(axis=1)) if norm == "l2" else np.abs(flat).max(axis=1)


# -- slowdown -------------------------------------------------------------------------------


def slowdown_objective(model, w, x, cfg: AttackConfig, rng=None):
    """Build L_total for a batch on the active tape.

    Returns (total, rollout, per-image parts) where parts holds numpy arrays
    for L_eos, L_dep, L_per and L_total of each image.
    """
    x_adv = to_image(w)
    delta = x_adv - Tensor(x)
    ro = rollout(model, x_adv)
    b = x.shape[0]
    mask = ro.active.astype(np.float64)  # (T, B)
    row_w = (mask / ro.lengths[None, :]).reshape(-1)
    logits = ad.concat(ro.logits, axis=0)
    tokens = ro.tokens.reshape(-1)
    eos = model.vocab.eos
    l_eos = eos_loss(logits, eos, weights=row_w, mc_samples=cfg.mc_samples, rng=rng)
    l_dep = dep_loss(logits, tokens, weights=row_w, mc_samples=cfg.mc_samples, rng=rng)
    l_per = perturbation_penalty(delta, cfg.eps, cfg.norm)
    total = l_eos + cfg.lambda_dep * l_dep + cfg.lambda_per * l_per.sum()

    # per-image values for the loss curve (exact expectation)
    probs = ro.probs()  # (T, B, V)
    lg = np.stack([l.data for l in ro.logits])
    expect = (probs * lg).sum(axis=2)
    eos_term = ((lg[:, :, eos] - expect) * mask).sum(axis=0) / ro.lengths
    chosen = np.take_along_axis(lg, ro.tokens[:, :, None], axis=2)[:, :, 0]
    dep_term = ((chosen - expect) * mask).sum(axis=0) / ro.lengths
    per_term = l_per.data
    parts = {
        "eos": eos_term,
        "dep": dep_term,
        "per": per_term,
        "total": eos_term + cfg.lambda_dep * dep_term + cfg.lambda_per * per_term,
        "norm": _np_norms(delta.data, cfg.norm),
        "x_adv": x_adv.data,
    }
    assert parts["eos"].shape == (b,)
    return total, ro, parts


def slowdown_attack_batch(model: CaptionModel, xs, cfg: AttackConfig, image_ids=None):
    """Attack a batch of images; returns one AttackResult per image.

    The returned image is the iterate with the most decoder calls among those
    within ``eps * (1 + 1e-3)``, ties broken by the smaller norm.
    """
    xs = np.asarray(xs, dtype=np.float64)
    b = xs.shape[0]
    model = model.frozen()
    rng = np.random.default_rng(cfg.seed)
    benign = greedy_decode_batch(model, xs)
    w = init_latent(xs)
    best_x = xs.copy()
    best_loops = np.full(b, -1)
    best_norm = np.full(b, np.inf)
    curves = {k: [[] for _ in range(b)] for k in ("eos", "dep", "per", "total", "loops")}
    limit = cfg.eps * (1.0 + BUDGET_SLACK)
    for it in range(cfg.iters):
        wt = Tensor(w, requires_grad=True)
        try:
            with ad.Tape():
                total, ro, parts = slowdown_objective(model, wt, xs, cfg, rng)
            ad.backward(total)
        except NonFiniteError as exc:
            raise NonFiniteError(f"slowdown attack: non-finite value at iteration {it}: {exc}") from exc
        loops = ro.lengths
        ok = parts["norm"] <= limit
        better = ok & ((loops > best_loops) | ((loops == best_loops) & (parts["norm"] < best_norm)))
        best_x[better] = parts["x_adv"][better]
        best_loops = np.where(better, loops, best_loops)
        best_norm = np.where(better, parts["norm"], best_norm)
        for i in range(b):
            for k in ("eos", "dep", "per", "total"):
                curves[k][i].append(float(parts[k][i]))
            curves["loops"][i].append(int(loops[i]))
        if cfg.lr > 0:
            w = w - cfg.lr * wt.grad
    adversarial = greedy_decode_batch(model, best_x)
    ids = range(b) if image_ids is None else image_ids
    return [
        AttackResult(
            "slowdown",
            xs[i],
            best_x[i],
            benign[i],
            adversarial[i],
            cfg.to_dict(),
            cfg.iters,
            {k: v[i] for k, v in curves.items()},
            int(iid),
        )
        for i, iid in enumerate(ids)
    ]


def slowdown_attack(model, x, cfg: AttackConfig):
    return slowdown_attack_batch(model, np.asarray(x)[None], cfg)[0]


# -- accuracy attacks -------------------------------------------------------------------------


def _benign_captions(model, traces):
    # tokens end with EOS unless the trace hit max_len
    return [[model.vocab.sos] + list(t.tokens) for t in traces]


def _caption_ce(model, x_adv, captions):
    """Per-image mean cross-entropy of ``captions`` under teacher forcing.

    Returns (sum over images as a Tensor, per-image values, per-image flag
    telling whether greedy decoding would leave the caption).
    """
    pad = model.vocab.pad
    caps = pad_captions(captions, pad)
    inputs, targets = caps[:, :-1], caps[:, 1:]
    ro = rollout(model, x_adv, teacher=inputs)
    steps, b = targets.shape[1], targets.shape[0]
    logp = ad.log_softmax(ad.concat(ro.logits, axis=0), axis=1)
    flat = targets.T.reshape(-1)
    # mask by length: an untrained model may emit the pad index itself
    counts = np.array([len(c) - 1 for c in captions], dtype=np.float64)
    valid = np.arange(steps)[None, :] < counts[:, None]  # (B, T)
    row_w = (valid / counts[:, None]).T.reshape(-1)
    picked = logp[np.arange(steps * b), flat]
    total = -(picked * Tensor(row_w)).sum()
    per_image = -(picked.data * row_w).reshape(steps, b).sum(axis=0)
    deviates = ((ro.tokens.T != targets) & valid).any(axis=1)
    return total, per_image, deviates


def pgd_attack_batch(model, xs, cfg: AttackConfig, captions=None, image_ids=None):
    """Projected gradient ascent on the benign caption's cross-entropy.

    Linf takes sign steps; L2 takes normalized-gradient steps. After each
    step the perturbation is projected onto the eps-ball and the pixel box.
    """
    xs = np.asarray(xs, dtype=np.float64)
    b = xs.shape[0]
    model = model.frozen()
    benign = greedy_decode_batch(model, xs)
    captions = _benign_captions(model, benign) if captions is None else captions
    step = cfg.pgd_step if cfg.pgd_step is not None else 2.5 * cfg.eps / cfg.iters
    delta = np.zeros_like(xs)
    curve = [[] for _ in range(b)]
    for it in range(cfg.iters):
        xt = Tensor(xs + delta, requires_grad=True)
        with ad.Tape():
            total, per_image, _ = _caption_ce(model, xt, captions)
        ad.backward(total)
        for i in range(b):
            curve[i].append(float(per_image[i]))
        g = xt.grad
        if cfg.norm == "linf":
            delta = np.clip(delta + step * np.sign(g), -cfg.eps, cfg.eps)
        else:
            gn = np.sqrt((g.reshape(b, -1) ** 2).sum(axis=1)).reshape(b, 1, 1, 1)
            delta = delta + step * g / np.maximum(gn, 1e-12)
            dn = np.sqrt((delta.reshape(b, -1) ** 2).sum(axis=1)).reshape(b, 1, 1, 1)
            delta = delta * np.minimum(1.0, cfg.eps / np.maximum(dn, 1e-12))
        delta = np.clip(xs + delta, 0.0, 1.0) - xs
    x_adv = np.clip(xs + delta, 0.0, 1.0)
    adversarial = greedy_decode_batch(model, x_adv)
    ids = range(b) if image_ids is None else image_ids
    return [
        AttackResult("pgd", xs[i], x_adv[i], benign[i], adversarial[i], cfg.to_dict(), cfg.iters, {"ce": curve[i]}, int(iid))
        for i, iid in enumerate(ids)
    ]


def cw_attack_batch(model, xs, cfg: AttackConfig, captions=None, image_ids=None):
    """Carlini-Wagner style L2 attack on the benign caption.

    Minimizes c * ||delta||_2^2 - CE(benign caption) over the tanh latent with
    Adam. Runs ``cw_rounds`` restarts; after each, c grows tenfold for images
    that left the caption (seeking a smaller perturbation) and shrinks tenfold
    otherwise. Returns the smallest in-budget perturbation that changes the
    greedy caption; images never fooled come back unchanged.
    """
    xs = np.asarray(xs, dtype=np.float64)
    b = xs.shape[0]
    model = model.frozen()
    benign = greedy_decode_batch(model, xs)
    captions = _benign_captions(model, benign) if captions is None else captions
    c = np.full(b, float(cfg.cw_c))
    per_round = max(1, cfg.iters // cfg.cw_rounds)
    limit = cfg.eps * (1.0 + BUDGET_SLACK)
    best_x = xs.copy()
    best_norm = np.full(b, np.inf)
    curve = [[] for _ in range(b)]
    w0 = init_latent(xs)
    b1, b2, eps_adam = 0.9, 0.999, 1e-8
    for _ in range(cfg.cw_rounds):
        w = w0.copy()
        m = np.zeros_like(w)
        v = np.zeros_like(w)
        hit = np.zeros(b, dtype=bool)
        for t in range(1, per_round + 1):
            wt = Tensor(w, requires_grad=True)
            with ad.Tape():
                x_adv = to_image(wt)
                delta = x_adv - Tensor(xs)
                flat = delta.reshape(b, -1)
                sq = (flat * flat).sum(axis=1)
                ce_sum, ce, deviates = _caption_ce(model, x_adv, captions)
                total = (sq * Tensor(c)).sum() - ce_sum
            ad.backward(total)
            l2 = np.sqrt(sq.data)
            ok = l2 <= limit
            success = ok & deviates
            improve = success & (l2 < best_norm)
            best_x[improve] = x_adv.data[improve]
            best_norm[improve] = l2[improve]
            hit |= success
            for i in range(b):
                curve[i].append(float(sq.data[i] * c[i] - ce[i]))
            g = wt.grad
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            w = w - cfg.cw_lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps_adam)
        c = np.where(hit, c * 10.0, c / 10.0)
    adversarial = greedy_decode_batch(model, best_x)
    ids = range(b) if image_ids is None else image_ids
    return [
        AttackResult("cw", xs[i], best_x[i], benign[i], adversarial[i], cfg.to_dict(), per_round * cfg.cw_rounds, {"objective": curve[i]}, int(iid))
        for i, iid in enumerate(ids)
    ]


# -- corruptions ---------------------------------------------------------------------------------

JPEG_LUMA = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


def quantize(x, bits=3):
    levels = 2**bits - 1
    return np.round(np.asarray(x) * levels) / levels


def expected_noise_norm(n, norm):
    """E||z|| for z ~ N(0, I_n) under the L2 or Linf norm."""
    from scipy import integrate, special

    if norm == "l2":
        return math.sqrt(2.0) * math.exp(special.gammaln((n + 1) / 2) - special.gammaln(n / 2))
    # E max_i |z_i| = int_0^inf 1 - P(|z| <= t)^n dt
    val, _ = integrate.quad(lambda t: 1.0 - special.erf(t / math.sqrt(2.0)) ** n, 0, np.inf, limit=200)
    return val


def gaussian_noise(x, sigma, rng):
    x = np.asarray(x)
    if sigma < 0:
        raise ConfigError("sigma must be >= 0")
    if sigma == 0:
        return x.copy()
    return np.clip(x + sigma * rng.standard_normal(x.shape), 0.0, 1.0)


def jpeg_table(quality):
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.clip(np.floor((JPEG_LUMA * scale + 50.0) / 100.0), 1.0, 255.0)


def jpeg_like(x, quality=50):
    """Per-channel 8x8 blockwise DCT quantization on the 0-255 scale."""
    from scipy.fft import dctn, idctn

    x = np.asarray(x, dtype=np.float64)
    c, h, wd = x.shape
    if h % 8 or wd % 8:
        raise ConfigError("image sides must be multiples of 8")
    q = jpeg_table(quality)
    blocks = (x * 255.0 - 128.0).reshape(c, h // 8, 8, wd // 8, 8).transpose(0, 1, 3, 2, 4)
    coef = dctn(blocks, axes=(-2, -1), norm="ortho")
    coef = np.round(coef / q) * q
    rec = idctn(coef, axes=(-2, -1), norm="ortho")
    rec = rec.transpose(0, 1, 3, 2, 4).reshape(c, h, wd)
    return np.clip((rec + 128.0) / 255.0, 0.0, 1.0)


TV_SMOOTH = 1e-4


def tv_energy(y, x, weight, smooth=TV_SMOOTH):
    dx = np.diff(y, axis=-1)
    dy = np.diff(y, axis=-2)
    tv = np.sqrt(dx * dx + smooth).sum() + np.sqrt(dy * dy + smooth).sum()
    return float(((y - x) ** 2).sum() + weight * tv)


def tv_gradient(y, x, weight, smooth=TV_SMOOTH):
    dx = np.diff(y, axis=-1)
    dy = np.diff(y, axis=-2)
    gx = dx / np.sqrt(dx * dx + smooth)
    gy = dy / np.sqrt(dy * dy + smooth)
    g = 2.0 * (y - x)
    g[..., :, 1:] += weight * gx
    g[..., :, :-1] -= weight * gx
    g[..., 1:, :] += weight * gy
    g[..., :-1, :] -= weight * gy
    return g


def tv_minimize(x, weight=0.03, iters=50, step=0.05):
    """Gradient descent on ||y - x||^2 + weight * TV(y), clamped to [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    y = x.copy()
    for _ in range(iters):
        y = np.clip(y - step * tv_gradient(y, x, weight), 0.0, 1.0)
    return y


def corruptions(x, kind, params: AttackConfig | None = None, rng=None):
    """Apply one natural corruption to an image in [0, 1]."""
    params = AttackConfig() if params is None else params
    x = np.asarray(x, dtype=np.float64)
    if x.min() < 0 or x.max() > 1:
        raise ValueError("image must lie in [0, 1]")
    if kind == "quantize":
        return quantize(x, params.quant_bits)
    if kind == "gaussian":
        sigma = params.eps / expected_noise_norm(x.size, params.norm)
        return gaussian_noise(x, sigma, np.random.default_rng(params.seed) if rng is None else rng)
    if kind == "jpeg_like":
        return jpeg_like(x, params.jpeg_quality)
    if kind == "tvm":
        return tv_minimize(x, params.tv_weight, params.tv_iters, params.tv_step)
    raise ConfigError(f"unknown corruption {kind!r}; expected one of {sorted(CORRUPTIONS.values())}")


def corruption_attack_batch(model, xs, kind, cfg: AttackConfig, image_ids=None):
    xs = np.asarray(xs, dtype=np.float64)
    ids = list(range(xs.shape[0]) if image_ids is None else image_ids)
    model = model.frozen()
    # per-image generators keep the noise independent of batch composition
    x_adv = np.stack(
        [corruptions(x, kind, cfg, rng=np.random.default_rng([cfg.seed, int(iid)])) for x, iid in zip(xs, ids)]
    )
    benign = greedy_decode_batch(model, xs)
    adversarial = greedy_decode_batch(model, x_adv)
    return [
        AttackResult(kind, xs[i], x_adv[i], benign[i], adversarial[i], cfg.to_dict(), 0, {}, int(iid))
        for i, iid in enumerate(ids)
    ]


def run_attack(model, xs, method, cfg: AttackConfig, image_ids=None):
    """Dispatch by method name (see METHODS)."""
    if method == "slowdown":
        return slowdown_attack_batch(model, xs, cfg, image_ids)
    if method == "pgd":
        return pgd_attack_batch(model, xs, cfg, image_ids=image_ids)
    if method == "cw":
        return cw_attack_batch(model, xs, cfg, image_ids=image_ids)
    if method in CORRUPTIONS:
        return corruption_attack_batch(model, xs, CORRUPTIONS[method], cfg, image_ids)
    raise ConfigError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
