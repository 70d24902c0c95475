from __future__ import annotations


class DmnError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(DmnError, ValueError):
    pass


class DomainError(DmnError, ValueError):
    pass


class ContractError(DmnError, ValueError):
    pass


class InputError(DmnError, ValueError):
    pass


class ConfigurationError(DmnError, ValueError):
    pass


class ParseError(DmnError, ValueError):
    pass


class FormatError(DmnError, ValueError):
    pass


class LengthError(FormatError):
    def __init__(self, path: str, expected: int, actual: int) -> None:
        super().__init__(f"{path}: expected {expected} payload bytes, found {actual}")
        self.expected = expected
        self.actual = actual


class ResolutionError(DmnError, FileNotFoundError):
    def __init__(self, path: str, what: str = "file") -> None:
        super().__init__(f"Missing {what}: {path}")
        self.path = path


class TrainingDiverged(DmnError, RuntimeError):
    def __init__(self, example_id: str, value: float) -> None:
        super().__init__(f"Non-finite loss {value!r} on example {example_id}")
        self.example_id = example_id
