import numpy as np
import pytest

from memtrack.features import BackboneConfig
from memtrack.model import ModelConfig


def tiny_model_config(seed=0, **backbone):
    """C=4, 40 px patch, three stride-2 stages -> 5x5 grid."""
    bb = dict(widths=(4, 4, 4), strides=(2, 2, 2), reduced_channels=4)
    bb.update(backbone)
    return ModelConfig(BackboneConfig(**bb), head_depth=1, patch_size=40, seed=seed)


@pytest.fixture
def tiny_cfg():
    return tiny_model_config()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
