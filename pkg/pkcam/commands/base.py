import os
from collections.abc import Callable

from cleo.commands.command import Command
from cleo.io.io import IO
from cleo.io.outputs.output import Verbosity

from pkcam.errors import PkcamError
from pkcam.services.listener import Listener


class CommandListener(Listener):
    def __init__(self, io: IO) -> None:
        super().__init__()
        self.io = io

    def message(self, message: str, verbosity: int = Verbosity.NORMAL.value) -> None:
        self.io.write_line(message, Verbosity(verbosity))


class PkcamCommand(Command):
    """Runs a service and turns a `PkcamError` into its exit code."""

    @property
    def listener(self) -> Listener:
        return CommandListener(self.io)

    def guarded(self, action: Callable[[], int | None]) -> int:
        try:
            status = action()
        except PkcamError as exc:
            self.line_error(f"{type(exc).__name__}: {exc}", style="error")
            return exc.exit_code
        return os.EX_OK if status is None else status
