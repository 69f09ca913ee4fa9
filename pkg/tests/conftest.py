import pytest
import torch

from uvenet.model import ModelConfig, build_model


@pytest.fixture
def tiny_cfg():
    return ModelConfig(base_channels=4, blocks_r=2, blocks_r2=1, blocks_r6=1, temporal_radius=1)


@pytest.fixture
def tiny_model(tiny_cfg):
    return build_model(tiny_cfg, seed=0)


@pytest.fixture(autouse=True)
def _fixed_seed():
    torch.manual_seed(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
