from abc import abstractmethod
from typing import TYPE_CHECKING
from typing import Protocol

from cleo.io.outputs.output import Verbosity

if TYPE_CHECKING:
    from pkcam.services.metrics import MetricsRecord


class Listener(Protocol):
    @abstractmethod
    def message(self, message: str, verbosity: int = Verbosity.NORMAL.value) -> None:
        pass

    def __call__(self, message: str, verbosity: int = Verbosity.NORMAL.value) -> None:
        self.message(message, verbosity)

    def metrics(self, record: "MetricsRecord") -> None:
        self.message(record.describe(), Verbosity.NORMAL.value)


class NullListener(Listener):
    def message(self, message: str, verbosity: int = Verbosity.NORMAL.value) -> None:
        pass


NULL_LISTENER = NullListener()
