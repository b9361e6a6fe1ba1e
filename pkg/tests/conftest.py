import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, print_blob=True)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY_OVERRIDES = [
    "model.widths=4,4,8,8",
    "data.image_size=16",
    "data.per_class=6",
    "data.eval_per_class=3",
    "train.epochs=2",
    "train.batch_size=8",
    "augment.rotate_p=0",
]


@pytest.fixture
def tiny_config():
    from dan.config import RunConfig

    return RunConfig.toy().override(TINY_OVERRIDES)


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.LINES:
            terminalreporter.write_line(line)
