from pathlib import Path

import numpy as np
import pytest
from cleo.io.outputs.output import Verbosity

from pkcam.services.listener import Listener
from pkcam.services.metrics import MetricsRecord


class RecordingListener(Listener):
    def __init__(self) -> None:
        self.messages: list[tuple[str, int]] = []
        self.records: list[MetricsRecord] = []

    def message(self, message: str, verbosity: int = Verbosity.NORMAL.value) -> None:
        self.messages.append((message, verbosity))

    def metrics(self, record: MetricsRecord) -> None:
        self.records.append(record)
        super().metrics(record)


@pytest.fixture
def fixtures_dir() -> Path:
    return Path(__file__).parent / "fixtures"


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def listener() -> RecordingListener:
    return RecordingListener()
