import pytest
import torch

from src.msggan.config import DEVICE_ENV

from helpers import tiny_config, tiny_spec


@pytest.fixture
def spec8():
    return tiny_spec()


@pytest.fixture
def cfg(tmp_path):
    return tiny_config(tmp_path / "run")


@pytest.fixture(autouse=True)
def _seeded(monkeypatch):
    monkeypatch.delenv(DEVICE_ENV, raising=False)
    torch.manual_seed(0)
    yield
