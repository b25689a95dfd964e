"""
Error types for SGD Lab
Every failure the command line can report maps to one class here

Error Codes
- E001: Configuration error
- E002: Problem definition error
- E003: Step-size precondition violated
- E004: Instance too large
- E005: Numerical failure (divergence / overflow)
- E006: Verification failure
"""

from typing import Optional


class SgdLabError(Exception):
    """Base class for all errors raised by SGD Lab"""
    code = "E000"
    exit_code = 1

    def __str__(self) -> str:
        return f"[{self.code}] {super().__str__()}"


class ConfigError(SgdLabError):
    code = "E001"
    exit_code = 1


class ProblemError(SgdLabError):
    code = "E002"
    exit_code = 1


class DimensionMismatchError(ProblemError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"Expected a vector of length {expected}, got {got}")
        self.expected = expected
        self.got = got


class UnsupportedDistributionError(ProblemError):
    pass


class AnalysisError(ProblemError):
    pass


class StepSizeError(SgdLabError):
    code = "E003"
    exit_code = 1


class InstanceTooLargeError(SgdLabError):
    code = "E004"
    exit_code = 1


class NumericalError(SgdLabError):
    code = "E005"
    exit_code = 2


class DivergenceError(NumericalError):
    """Raised when an iterate or a second moment stops being finite"""

    def __init__(self, step: int, replicate: Optional[int] = None, what: str = "iterate"):
        where = f" in replicate {replicate}" if replicate is not None else ""
        super().__init__(f"Non-finite {what} at step {step}{where}")
        self.step = step
        self.replicate = replicate


class NumericalOverflowError(NumericalError):
    def __init__(self, name: str, value: float):
        super().__init__(f"Constant {name} is not representable ({value})")
        self.name = name


class IterationCapError(NumericalError):
    pass


class VerificationError(SgdLabError):
    code = "E006"
    exit_code = 3
