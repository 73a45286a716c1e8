import time

import numpy as np
import pytest

from cubenmt.model import Dims, ModelParams
from cubenmt.training import COPY, REVERSE, SyntheticTask, TrainConfig, train

ACCEPTANCE_LINES = []

# Trained-model recipes shared by the training and acceptance tests.
COPY_TASK = SyntheticTask(kind=COPY, vocab_size=12, count=3000, seed=3)
REVERSE_TASK = SyntheticTask(kind=REVERSE, vocab_size=12, count=3000, seed=3)
CE_CONFIG = TrainConfig(alpha=0.0, max_epochs=20, seed=7)
SN_CONFIG = TrainConfig(alpha=0.5, epsilon=1e-8, max_epochs=60, seed=7)
SN_REVERSE_CONFIG = TrainConfig(alpha=0.5, epsilon=1e-8, max_epochs=30, seed=7)


def random_params(seed=0, src_vocab=7, tgt_vocab=6, d_emb=4, d_hid=5, d_att=3, d_out=4, scale=0.5):
    dims = Dims(src_vocab, tgt_vocab, d_emb, d_hid, d_att, d_out)
    return ModelParams.init_uniform(dims, np.random.default_rng(seed), scale=scale)


@pytest.fixture
def tiny_params():
    return random_params()


def _timed_train(config, task):
    t0 = time.perf_counter()
    res = train(config, task)
    return res, task, time.perf_counter() - t0


@pytest.fixture(scope="session")
def copy_model():
    res, task, _ = _timed_train(CE_CONFIG, COPY_TASK)
    return res, task


@pytest.fixture(scope="session")
def sn_copy_model():
    return _timed_train(SN_CONFIG, COPY_TASK)


@pytest.fixture(scope="session")
def sn_reverse_model():
    return _timed_train(SN_REVERSE_CONFIG, REVERSE_TASK)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
