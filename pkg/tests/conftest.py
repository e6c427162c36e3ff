import numpy as np
import pytest
import torch

from artic_synth.corpus import DEFAULT_INVENTORY
from artic_synth.synthetic import SyntheticConfig, generate_synthetic_corpus

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def inventory():
    return DEFAULT_INVENTORY


@pytest.fixture(scope="session")
def small_corpus():
    """Ten short sentences from one synthetic subject."""
    cfg = SyntheticConfig(min_phones=2, max_phones=4, min_duration=2, max_duration=3)
    return generate_synthetic_corpus(10, DEFAULT_INVENTORY, seed=3, config=cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance reporting ---------------------------------------------------------

def pytest_terminal_summary(terminalreporter):
    from criteria import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[number])
