"""Teacher-forcing maximum-likelihood training of the victim captioner."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .captioner import CaptionModel, ModelConfig, init_model, greedy_decode_batch, rollout
from .datagen import Dataset
from .errors import ConfigError, DivergenceError, NonFiniteError
from .metrics import corpus_bleu

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 7
    clip: float = 5.0
    bucket: int = 16  # batches per length-sorted bucket

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in (0, 1)")
        if self.clip <= 0:
            raise ConfigError(f"clip must be > 0, got {self.clip}")


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def clip_by_global_norm(grads, max_norm):
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if norm > max_norm:
        scale = max_norm / norm
        return [g * scale for g in grads], norm
    return list(grads), norm


def adaptive_update(params, grads, state: AdamState, config: TrainConfig):
    """Adam with bias correction, after global-norm clipping of ``grads``.

    ``params`` and ``grads`` are lists of arrays; returns new parameter arrays
    and mutates ``state``.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"parameter shape {p.shape} != gradient shape {g.shape}")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    grads, _ = clip_by_global_norm(grads, config.clip)
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        out.append(p - config.lr * m_hat / (np.sqrt(v_hat) + config.eps))
    return out


# -- loss ---------------------------------------------------------------------------


def pad_captions(captions, pad):
    width = max(len(c) for c in captions)
    arr = np.full((len(captions), width), pad, dtype=np.int64)
    for i, c in enumerate(captions):
        arr[i, : len(c)] = c
    return arr


def caption_loss(model: CaptionModel, images, captions):
    """Mean token cross-entropy under teacher forcing.

    ``captions`` are id lists framed by SOS ... EOS. Padding is masked; the
    EOS target is part of the loss.
    """
    pad = model.vocab.pad
    caps = pad_captions(captions, pad)
    inputs, targets = caps[:, :-1], caps[:, 1:]
    ro = rollout(model, images, teacher=inputs)
    steps, batch = targets.shape[1], targets.shape[0]
    logp = ad.log_softmax(ad.concat(ro.logits, axis=0), axis=1)  # rows ordered (t, b)
    flat_targets = targets.T.reshape(-1)
    mask = (flat_targets != pad).astype(np.float64)
    picked = logp[np.arange(steps * batch), flat_targets]
    return -(picked * ad.Tensor(mask / mask.sum())).sum()


def _pairs(examples, vocab):
    return [(i, vocab.encode(c)) for i, ex in enumerate(examples) for c in ex.captions]


def _batches(pairs, batch_size, bucket, rng):
    """Shuffle, sort by length inside buckets, then shuffle batch order."""
    order = rng.permutation(len(pairs))
    chunk = batch_size * bucket
    batches = []
    for start in range(0, len(order), chunk):
        part = sorted(order[start : start + chunk], key=lambda j: (len(pairs[j][1]), j))
        batches += [part[k : k + batch_size] for k in range(0, len(part), batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]


def evaluate_loss(model, examples, vocab, batch_size=128):
    pairs = _pairs(examples, vocab)
    pairs.sort(key=lambda p: len(p[1]))
    images = np.stack([ex.image for ex in examples])
    total = count = 0.0
    for k in range(0, len(pairs), batch_size):
        chunk = pairs[k : k + batch_size]
        ntok = sum(len(c) - 1 for _, c in chunk)
        loss = caption_loss(model, images[[i for i, _ in chunk]], [c for _, c in chunk])
        total += loss.item() * ntok
        count += ntok
    return total / count


def evaluate_bleu(model, examples, batch_size=256):
    images = np.stack([ex.image for ex in examples])
    traces = []
    for k in range(0, len(examples), batch_size):
        traces += greedy_decode_batch(model, images[k : k + batch_size])
    cands = [model.vocab.decode(t.tokens) for t in traces]
    return corpus_bleu(cands, [ex.captions for ex in examples])


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    val_bleu: float


def train(dataset: Dataset, config: TrainConfig = TrainConfig(), model_cfg: ModelConfig = ModelConfig(), progress=None):
    """Train from scratch; returns (best-validation model, list of EpochLog).

    Epoch 0 in the log holds the losses of the untrained model.
    """
    if not dataset.train:
        raise ConfigError("training set is empty")
    vocab = dataset.vocab
    longest = max(len(c) for ex in dataset.train for c in ex.captions)
    if model_cfg.max_len < longest + 2:
        raise ConfigError(f"max_len={model_cfg.max_len} shorter than longest caption {longest} + 2")
    rng = np.random.default_rng(config.seed)
    model = init_model(vocab, model_cfg, seed=config.seed)
    names = list(model.params)
    pairs = _pairs(dataset.train, vocab)
    images = np.stack([ex.image for ex in dataset.train])
    val = dataset.val or dataset.train

    def score(epoch, train_loss):
        frozen = model.frozen()
        return EpochLog(epoch, train_loss, evaluate_loss(frozen, val, vocab), evaluate_bleu(frozen, val))

    history = [score(0, evaluate_loss(model.frozen(), dataset.train, vocab))]
    best = (history[0].val_loss, {k: v.data.copy() for k, v in model.params.items()})
    state = AdamState()
    for epoch in range(1, config.epochs + 1):
        losses, weights = [], []
        for step, idx in enumerate(_batches(pairs, config.batch_size, config.bucket, rng)):
            try:
                with ad.Tape():
                    loss = caption_loss(model, images[[pairs[j][0] for j in idx]], [pairs[j][1] for j in idx])
                ad.backward(loss)
                params = model.parameters()
                new = adaptive_update([p.data for p in params], [p.grad for p in params], state, config)
                for name, arr in zip(names, new):
                    if not np.isfinite(arr).all():
                        raise NonFiniteError(f"parameter {name} became non-finite")
                    model.params[name] = ad.Tensor(arr, requires_grad=True)
            except NonFiniteError as exc:
                raise DivergenceError(f"training diverged at epoch {epoch}, step {step}: {exc}", epoch, step) from exc
            losses.append(loss.item())
            weights.append(len(idx))
        entry = score(epoch, float(np.average(losses, weights=weights)))
        history.append(entry)
        log.info("epoch %d train %.4f val %.4f bleu %.4f", epoch, entry.train_loss, entry.val_loss, entry.val_bleu)
        if progress is not None:
            progress(entry)
        if entry.val_loss < best[0]:
            best = (entry.val_loss, {k: v.data.copy() for k, v in model.params.items()})
    params = {k: ad.Tensor(v) for k, v in best[1].items()}
    final = CaptionModel(model_cfg, vocab, params, config.seed, {"train_seed": config.seed, "data_seed": dataset.seed})
    return final, history


def write_log_csv(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_bleu"])
        for e in history:
            w.writerow([e.epoch, f"{e.train_loss:.10g}", f"{e.val_loss:.10g}", f"{e.val_bleu:.10g}"])
