from __future__ import annotations


class MsgGanError(RuntimeError):
    """Base class for every error raised by the msggan package."""


class ConfigError(MsgGanError, ValueError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"invalid config field '{field}': {message}")


class InvalidArgumentError(MsgGanError, ValueError):
    pass


class DatasetError(MsgGanError):
    pass


class NumericError(MsgGanError, ArithmeticError):
    pass


class CheckpointVersionError(MsgGanError):
    def __init__(self, found: object, expected: object):
        self.found = found
        self.expected = expected
        super().__init__(f"checkpoint format version {found!r} is incompatible with this build (expected {expected!r})")


class TrainingDivergenceError(MsgGanError):
    def __init__(self, step: int, detail: str = ""):
        self.step = step
        msg = f"training diverged at step {step}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
