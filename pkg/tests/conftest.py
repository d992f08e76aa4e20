from __future__ import annotations

import numpy as np
import pytest

from slidingasr.config import preset_config
from slidingasr.weights import init_weights


def micro_config(**overrides):
    """Tiny-shaped stack at toy width, for property tests that run many examples."""
    base = dict(enc_dim=64, dec_dim=48, num_heads_enc=4, num_heads_dec=4,
                vocab_size=300, max_positions=512, name="micro")
    base.update(overrides)
    return preset_config("tiny", **base)


@pytest.fixture(scope="session")
def tiny_weights():
    return init_weights(preset_config("tiny"), seed=0)


@pytest.fixture(scope="session")
def micro_weights():
    return init_weights(micro_config(), seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def noise(rng, n, scale=0.1):
    return (scale * rng.standard_normal(n)).astype(np.float32)


# One "PASS/FAIL" line per acceptance criterion, echoed after the run.
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
