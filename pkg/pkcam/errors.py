EXIT_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_DATA_ERROR = 3


class PkcamError(Exception):
    """Base error; `exit_code` is what the CLI returns when it escapes a command."""

    exit_code = EXIT_FAILURE


class ConfigError(PkcamError, ValueError):
    exit_code = EXIT_CONFIG_ERROR


class DataError(PkcamError):
    exit_code = EXIT_DATA_ERROR


class FormatError(DataError):
    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class DimensionError(PkcamError, ValueError):
    pass


class ContractError(PkcamError):
    pass


class NumericError(PkcamError, ArithmeticError):
    pass


class TrainingDiverged(PkcamError):
    def __init__(self, message: str, epoch: int) -> None:
        super().__init__(message)
        self.epoch = epoch
