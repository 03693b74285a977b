"""Toy attention captioner: patch-MLP encoder, additive attention, GRU decoder.

All decode paths go through :func:`rollout`, which runs a batch of images
step by step. Under an active tape the same code yields differentiable
logits; outside a tape it is plain inference.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .datagen import Vocabulary
from .errors import CheckpointError, DomainError, ShapeError

FORMAT_VERSION = 1
MAGIC = b"SLOWCAP\x00"


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 32
    channels: int = 3
    patch: int = 8
    d_h: int = 64
    d_e: int = 64
    d_a: int = 64
    max_len: int = 60

    @property
    def grid(self):
        return self.image_size // self.patch

    @property
    def n_patches(self):
        return self.grid * self.grid

    @property
    def patch_dim(self):
        return self.channels * self.patch * self.patch


def param_shapes(cfg: ModelConfig, vocab_size: int):
    """Parameter names and shapes in checkpoint order."""
    dh, de, da = cfg.d_h, cfg.d_e, cfg.d_a
    return {
        "patch_w": (cfg.patch_dim, dh),
        "pos": (cfg.n_patches, dh),
        "enc_w1": (dh, dh),
        "enc_b1": (dh,),
        "enc_w2": (dh, dh),
        "enc_b2": (dh,),
        "init_w": (dh, dh),
        "init_b": (dh,),
        "embed": (vocab_size, de),
        "att_wh": (dh, da),
        "att_wk": (dh, da),
        "att_b": (da,),
        "att_v": (da, 1),
        "gru_wx": (de + dh, 3 * dh),
        "gru_bx": (3 * dh,),
        "gru_wh": (dh, 3 * dh),
        "gru_bh": (3 * dh,),
        "out_w": (dh, vocab_size),
        "out_b": (vocab_size,),
    }


@dataclass
class CaptionModel:
    cfg: ModelConfig
    vocab: Vocabulary
    params: dict
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = param_shapes(self.cfg, len(self.vocab))
        if list(self.params) != list(expected):
            raise ShapeError(f"parameter names {list(self.params)} do not match {list(expected)}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ShapeError(f"{name}: expected {shape}, got {self.params[name].shape}")

    @property
    def max_len(self):
        return self.cfg.max_len

    @property
    def vocab_size(self):
        return len(self.vocab)

    def parameters(self):
        return list(self.params.values())

    def frozen(self):
        """Shallow copy whose parameters share data but do not require grad."""
        params = {k: Tensor(v.data) for k, v in self.params.items()}
        return CaptionModel(self.cfg, self.vocab, params, self.seed, dict(self.meta))

    def trainable(self):
        params = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.params.items()}
        return CaptionModel(self.cfg, self.vocab, params, self.seed, dict(self.meta))


def init_model(vocab: Vocabulary, cfg: ModelConfig = ModelConfig(), seed=0) -> CaptionModel:
    """Glorot-uniform weights, zero biases, small random positions and embeddings."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg, len(vocab)).items():
        if len(shape) == 1:
            arr = np.zeros(shape)
        elif name in ("pos", "embed"):
            arr = rng.normal(0.0, 0.1, size=shape)
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            arr = rng.uniform(-limit, limit, size=shape)
        params[name] = Tensor(arr, requires_grad=True)
    return CaptionModel(cfg, vocab, params, seed)


# -- forward pieces ------------------------------------------------------------------


def _linear(x, w, b):
    y = x @ w
    return y + ad.broadcast_to(b, y.shape)


def _check_pixels(images):
    data = images.data
    if data.min() < 0.0 or data.max() > 1.0:
        raise DomainError(f"pixel values must lie in [0, 1], got [{data.min():.4g}, {data.max():.4g}]")


def encode(model: CaptionModel, images) -> Tensor:
    """Images (3, H, W) or (B, 3, H, W) in [0, 1] -> feature grid (K, d_h) or (B, K, d_h)."""
    images = ad.as_tensor(images)
    single = images.ndim == 3
    if single:
        images = images.reshape(1, *images.shape)
    cfg, p = model.cfg, model.params
    if images.shape[1:] != (cfg.channels, cfg.image_size, cfg.image_size):
        raise ShapeError(f"expected images of shape (B, {cfg.channels}, {cfg.image_size}, {cfg.image_size}), got {images.shape}")
    _check_pixels(images)
    b, g, s = images.shape[0], cfg.grid, cfg.patch
    patches = ad.transpose(images.reshape(b, cfg.channels, g, s, g, s), (0, 2, 4, 1, 3, 5))
    patches = patches.reshape(b * cfg.n_patches, cfg.patch_dim)
    emb = (patches @ p["patch_w"]).reshape(b, cfg.n_patches, cfg.d_h)
    emb = emb + ad.broadcast_to(p["pos"], emb.shape)
    h1 = ad.relu(_linear(emb.reshape(b * cfg.n_patches, cfg.d_h), p["enc_w1"], p["enc_b1"]))
    feats = _linear(h1, p["enc_w2"], p["enc_b2"]).reshape(b, cfg.n_patches, cfg.d_h)
    return feats.reshape(cfg.n_patches, cfg.d_h) if single else feats


@dataclass
class DecoderContext:
    """Per-image quantities computed once before the decode loop."""

    feats: Tensor  # (B, K, d_h)
    keys: Tensor  # (B, K, d_a)
    h0: Tensor  # (B, d_h)


def prepare(model: CaptionModel, feats: Tensor) -> DecoderContext:
    if feats.ndim == 2:
        feats = feats.reshape(1, *feats.shape)
    p, cfg = model.params, model.cfg
    b, k = feats.shape[0], feats.shape[1]
    flat = feats.reshape(b * k, cfg.d_h)
    keys = _linear(flat, p["att_wk"], p["att_b"]).reshape(b, k, cfg.d_a)
    mean = feats.sum(axis=1) * (1.0 / k)
    h0 = ad.tanh(_linear(mean, p["init_w"], p["init_b"]))
    return DecoderContext(feats, keys, h0)


def decode_step(model: CaptionModel, prev_tokens, state: Tensor, ctx: DecoderContext):
    """One GRU step with additive attention.

    prev_tokens: (B,) int array; state: (B, d_h). Returns raw logits (B, V)
    and the new state.
    """
    prev_tokens = np.asarray(prev_tokens, dtype=np.int64)
    if prev_tokens.min() < 0 or prev_tokens.max() >= model.vocab_size:
        raise IndexError(f"token index out of range [0, {model.vocab_size})")
    p, cfg = model.params, model.cfg
    b, k = ctx.feats.shape[0], ctx.feats.shape[1]
    dh = cfg.d_h

    emb = p["embed"][prev_tokens]
    query = (state @ p["att_wh"]).reshape(b, 1, cfg.d_a)
    energy = ad.tanh(ctx.keys + ad.broadcast_to(query, ctx.keys.shape))
    scores = (energy.reshape(b * k, cfg.d_a) @ p["att_v"]).reshape(b, k)
    alpha = ad.softmax(scores, axis=1)
    context = (ad.broadcast_to(alpha.reshape(b, k, 1), ctx.feats.shape) * ctx.feats).sum(axis=1)

    gx = _linear(ad.concat([emb, context], axis=1), p["gru_wx"], p["gru_bx"])
    gh = _linear(state, p["gru_wh"], p["gru_bh"])
    r = ad.sigmoid(gx[:, :dh] + gh[:, :dh])
    z = ad.sigmoid(gx[:, dh : 2 * dh] + gh[:, dh : 2 * dh])
    n = ad.tanh(gx[:, 2 * dh :] + r * gh[:, 2 * dh :])
    new_state = n + z * (state - n)
    logits = _linear(new_state, p["out_w"], p["out_b"])
    return logits, new_state


@dataclass
class Rollout:
    """Result of decoding a batch.

    ``logits[t]`` is the (B, V) logits tensor of step t; ``tokens`` and
    ``active`` are (T, B) arrays; ``lengths`` holds each image's loop count.
    """

    logits: list
    tokens: np.ndarray
    active: np.ndarray
    lengths: np.ndarray
    hit_eos: np.ndarray

    def probs(self):
        return np.stack([ad.softmax_np(l.data, axis=1) for l in self.logits])


def rollout(model: CaptionModel, images, teacher=None, max_len=None) -> Rollout:
    """Decode a batch of images.

    Greedy mode (``teacher is None``): each image feeds back argmax of its own
    logits (lowest index on ties) until it emits EOS or reaches ``max_len``.
    Images that finished keep stepping with EOS as input while others run;
    those steps are masked out by ``active``.

    Teacher mode: ``teacher`` is a (B, T) int array of input tokens starting
    with SOS; exactly T steps run and every step is active.
    """
    images = ad.as_tensor(images)
    if images.ndim == 3:
        images = images.reshape(1, *images.shape)
    ctx = prepare(model, encode(model, images))
    b = images.shape[0]
    eos = model.vocab.eos
    state = ctx.h0
    if teacher is not None:
        teacher = np.asarray(teacher, dtype=np.int64)
        if teacher.ndim != 2 or teacher.shape[0] != b:
            raise ShapeError(f"teacher tokens must be (B, T) with B={b}, got {teacher.shape}")
        n_steps = teacher.shape[1]
    else:
        n_steps = model.max_len if max_len is None else max_len

    logits, tokens, active = [], [], []
    prev = np.full(b, model.vocab.sos, dtype=np.int64) if teacher is None else teacher[:, 0]
    running = np.ones(b, dtype=bool)
    lengths = np.zeros(b, dtype=np.int64)
    hit_eos = np.zeros(b, dtype=bool)
    for t in range(n_steps):
        step_logits, state = decode_step(model, prev, state, ctx)
        chosen = np.argmax(step_logits.data, axis=1)
        logits.append(step_logits)
        tokens.append(chosen)
        active.append(running.copy())
        lengths += running
        if teacher is None:
            stop = running & (chosen == eos)
            hit_eos |= stop
            running = running & ~stop
            prev = np.where(running, chosen, eos)
            if not running.any():
                break
        elif t + 1 < n_steps:
            prev = teacher[:, t + 1]
    return Rollout(logits, np.array(tokens), np.array(active), lengths, hit_eos)


@dataclass
class DecodeTrace:
    """Greedy decode of one image; ``steps`` is the loop count."""

    steps: int
    tokens: list
    logits: np.ndarray  # (steps, V)
    probs: np.ndarray  # (steps, V)
    terminated_by: str  # "eos" or "max_len"

    @property
    def loops(self):
        return self.steps


def traces_from_rollout(ro: Rollout) -> list:
    out = []
    stacked = np.stack([l.data for l in ro.logits])  # (T, B, V)
    for i, n in enumerate(ro.lengths):
        n = int(n)
        lg = stacked[:n, i, :].copy()
        out.append(
            DecodeTrace(
                steps=n,
                tokens=[int(t) for t in ro.tokens[:n, i]],
                logits=lg,
                probs=ad.softmax_np(lg, axis=1),
                terminated_by="eos" if ro.hit_eos[i] else "max_len",
            )
        )
    return out


def greedy_decode_batch(model: CaptionModel, images) -> list:
    return traces_from_rollout(rollout(model, images))


def greedy_decode(model: CaptionModel, image) -> DecodeTrace:
    return greedy_decode_batch(model, image)[0]


def teacher_forced_logits(model: CaptionModel, image, caption) -> Tensor:
    """Logits (n, V) where row i predicts the token after ``caption[i]``.

    ``caption`` must start with SOS. A caption of just [SOS] gives one row.
    """
    caption = list(caption)
    if not caption or caption[0] != model.vocab.sos:
        raise ValueError("caption must begin with the SOS index")
    if len(caption) > model.max_len:
        raise ValueError(f"caption of {len(caption)} tokens exceeds max_len={model.max_len}")
    ro = rollout(model, image, teacher=np.asarray([caption]))
    return ad.concat(ro.logits, axis=0)


def caption_words(model: CaptionModel, trace: DecodeTrace):
    return model.vocab.decode(trace.tokens)


# -- checkpoints ------------------------------------------------------------------------
# layout: MAGIC | u64 header length | JSON header | float64 LE params | sha256 of all preceding bytes


def save_checkpoint(model: CaptionModel, path, extra=None):
    header = {
        "format_version": FORMAT_VERSION,
        "config": asdict(model.cfg),
        "vocabulary": model.vocab.tokens,
        "min_frequency": model.vocab.min_frequency,
        "seed": model.seed,
        "params": [[name, list(t.shape)] for name, t in model.params.items()],
        "meta": {**model.meta, **(extra or {})},
    }
    head = json.dumps(header, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(t.data, dtype="<f8").tobytes() for t in model.params.values())
    blob = MAGIC + struct.pack("<Q", len(head)) + head + body
    Path(path).write_bytes(blob + hashlib.sha256(blob).digest())


def load_checkpoint(path) -> CaptionModel:
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 8 + 32 or not blob.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    payload, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch")
    (hlen,) = struct.unpack("<Q", payload[len(MAGIC) : len(MAGIC) + 8])
    start = len(MAGIC) + 8
    header = json.loads(payload[start : start + hlen])
    if header["format_version"] != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format {header['format_version']}")
    cfg = ModelConfig(**header["config"])
    vocab = Vocabulary(header["vocabulary"], header["min_frequency"])
    expected = param_shapes(cfg, len(vocab))
    values = np.frombuffer(payload[start + hlen :], dtype="<f8")
    params, offset = {}, 0
    for name, shape in header["params"]:
        shape = tuple(shape)
        if expected.get(name) != shape:
            raise CheckpointError(f"{path}: parameter {name} has shape {shape}, expected {expected.get(name)}")
        n = int(np.prod(shape))
        params[name] = Tensor(values[offset : offset + n].reshape(shape).copy())
        offset += n
    if offset != values.size:
        raise CheckpointError(f"{path}: {values.size - offset} unexpected trailing values")
    return CaptionModel(cfg, vocab, params, header["seed"], header.get("meta", {}))
