import math

import numpy as np
import pytest

from slowcap.captioner import ModelConfig, greedy_decode_batch, load_checkpoint, save_checkpoint
from slowcap.datagen import generate_dataset
from slowcap.errors import ConfigError, DivergenceError
from slowcap.trainer import AdamState, TrainConfig, adaptive_update, clip_by_global_norm, train, write_log_csv

SMALL = ModelConfig(d_h=16, d_e=16, d_a=16)


@pytest.mark.parametrize(
    "kwargs", [dict(epochs=0), dict(lr=0.0), dict(lr=-1.0), dict(beta1=1.0), dict(beta2=0.0), dict(batch_size=0)]
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


def test_zero_gradient_leaves_parameters():
    p = [np.array([1.0, -2.0]), np.ones((2, 2))]
    out = adaptive_update(p, [np.zeros(2), np.zeros((2, 2))], AdamState(), TrainConfig())
    for a, b in zip(p, out):
        np.testing.assert_array_equal(a, b)


def test_constant_gradient_step_approaches_lr():
    cfg = TrainConfig(lr=1e-2)
    state, p = AdamState(), [np.array([0.0])]
    for _ in range(2000):
        prev = p[0].copy()
        p = adaptive_update(p, [np.array([0.3])], state, cfg)
    assert abs(abs(p[0][0] - prev[0]) - cfg.lr) < 1e-6


def test_update_matches_hand_unrolled_scalar_trace():
    cfg = TrainConfig(lr=0.05, clip=100.0)
    grads = [0.5, -1.0, 0.25, 2.0, -0.75, 0.1, 0.0, 1.5, -2.5, 0.3]
    # reference: plain-python scalar Adam
    x, m, v = 1.0, 0.0, 0.0
    expected = []
    for t, g in enumerate(grads, start=1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x -= 0.05 * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
        expected.append(x)
    state, p = AdamState(), [np.array(1.0)]
    for g, want in zip(grads, expected):
        p = adaptive_update(p, [np.array(g)], state, cfg)
        assert abs(float(p[0]) - want) < 1e-12


def test_clipping_scales_to_threshold():
    grads, norm = clip_by_global_norm([np.array([3.0]), np.array([4.0])], 1.0)
    assert norm == 5.0
    np.testing.assert_allclose(np.sqrt(sum((g**2).sum() for g in grads)), 1.0)


def test_shape_mismatch_is_rejected():
    with pytest.raises(ValueError):
        adaptive_update([np.zeros(2)], [np.zeros(3)], AdamState(), TrainConfig())


def test_one_epoch_smoke(tmp_path):
    ds = generate_dataset(seed=2, n_train=10, n_val=3, n_test=2, min_frequency=1)
    model, history = train(ds, TrainConfig(epochs=1, batch_size=8), SMALL)
    save_checkpoint(model, tmp_path / "m.ckpt")
    assert (tmp_path / "m.ckpt").exists()
    assert [h.epoch for h in history] == [0, 1]
    write_log_csv(history, tmp_path / "log.csv")
    assert (tmp_path / "log.csv").read_text().splitlines()[0] == "epoch,train_loss,val_loss,val_bleu"


def test_first_epoch_reduces_loss():
    ds = generate_dataset(seed=3, n_train=200, n_val=20, n_test=2)
    _, history = train(ds, TrainConfig(epochs=1), SMALL)
    assert history[1].train_loss < history[0].train_loss
    assert history[1].val_loss < history[0].val_loss


def test_fixed_seeds_give_bit_identical_checkpoints(tmp_path):
    ds = generate_dataset(seed=5, n_train=24, n_val=4, n_test=2, min_frequency=1)
    for name in ("a", "b"):
        model, _ = train(ds, TrainConfig(epochs=2, batch_size=8), SMALL)
        save_checkpoint(model, tmp_path / f"{name}.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_round_trip_preserves_decodes(tmp_path):
    ds = generate_dataset(seed=6, n_train=30, n_val=4, n_test=50, min_frequency=1)
    model, _ = train(ds, TrainConfig(epochs=1, batch_size=16), SMALL)
    save_checkpoint(model, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt")
    xs = np.stack([e.image for e in ds.test])
    assert [t.tokens for t in greedy_decode_batch(model, xs)] == [t.tokens for t in greedy_decode_batch(back, xs)]


def test_divergence_reports_epoch_and_step():
    ds = generate_dataset(seed=2, n_train=16, n_val=2, n_test=2, min_frequency=1)
    with np.errstate(all="ignore"), pytest.raises(DivergenceError, match=r"epoch 1, step \d+") as info:
        train(ds, TrainConfig(epochs=2, batch_size=4, lr=1e300), SMALL)
    assert info.value.epoch == 1


@pytest.mark.slow
def test_overfits_eight_examples():
    ds = generate_dataset(seed=8, n_train=8, n_val=8, n_test=1, min_frequency=1)
    ds.val = ds.train
    model, _ = train(ds, TrainConfig(epochs=200, batch_size=4, lr=3e-3))
    traces = greedy_decode_batch(model, np.stack([e.image for e in ds.train]))
    hits = sum(model.vocab.decode(t.tokens) in ex.captions for t, ex in zip(traces, ds.train))
    assert hits >= 6, f"only {hits}/8 captions memorized"
