"""
Exception hierarchy shared by every polynormer module.

Library code raises these; main.py maps them to exit codes.
"""
from typing import Optional


class PolynormerError(Exception):
    """Base class for all domain errors"""


class ShapeError(PolynormerError, ValueError):
    """Operand shapes do not conform to a kernel's shape rule"""


class DomainError(PolynormerError, ValueError):
    """An argument lies outside the operation's valid domain"""


class FormatError(PolynormerError, ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class CheckpointError(PolynormerError, ValueError):
    def __init__(self, message: str, tensor: Optional[str] = None):
        self.tensor = tensor
        super().__init__(f"tensor '{tensor}': {message}" if tensor else message)


class ConfigError(PolynormerError, ValueError):
    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        super().__init__(message)


class NumericalError(PolynormerError, ArithmeticError):
    def __init__(self, message: str, epoch: Optional[int] = None):
        self.epoch = epoch
        super().__init__(f"epoch {epoch}: {message}" if epoch is not None else message)
