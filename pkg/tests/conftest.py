import os

# single-threaded BLAS: timing tests and bit-for-bit reruns both depend on it
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

from slowcap.captioner import ModelConfig, init_model
from slowcap.datagen import Vocabulary, generate_dataset

TINY_CFG = ModelConfig(image_size=16, channels=3, patch=8, d_h=6, d_e=5, d_a=4, max_len=6)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(seed=1, n_train=60, n_val=12, n_test=8, min_frequency=1)


@pytest.fixture(scope="session")
def tiny_vocab():
    return Vocabulary(["<pad>", "<sos>", "<eos>", "<unk>", "a", "b", "c"], min_frequency=1)


def make_tiny_model(seed, vocab, cfg=TINY_CFG, scale=1.0, eos_bias=0.0):
    """Small random model; ``scale`` inflates weights so logits vary, ``eos_bias`` shortens decodes."""
    model = init_model(vocab, cfg, seed=seed)
    if scale != 1.0:
        for t in model.params.values():
            t.data *= scale
    model.params["out_b"].data[vocab.eos] += eos_bias
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
