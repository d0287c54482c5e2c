"""Exception hierarchy.

Every validation failure raised by the toolkit derives from
:class:`ProvtsError`, so callers (and the CLI) can separate bad input from
I/O trouble with a single ``except`` clause.
"""

from __future__ import annotations


class ProvtsError(ValueError):
    """Base class for validation errors."""


class RemovedCategory(ProvtsError):
    pass


class InvalidLabel(ProvtsError):
    pass


class SchemaMismatch(ProvtsError):
    pass


class MalformedRow(ProvtsError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class NonMonotonicTime(ProvtsError):
    pass


class EmptyTrial(ProvtsError):
    pass


class InvalidFrame(ProvtsError):
    pass


class UnknownFeature(ProvtsError):
    pass


class DuplicateFeature(ProvtsError):
    pass


class InvalidConfig(ProvtsError):
    pass


class DimensionMismatch(ProvtsError):
    pass


class ShapeMismatch(ProvtsError):
    pass


class EmptyTrainingSet(ProvtsError):
    pass


class InputTooShort(ProvtsError):
    pass


class DegenerateLabels(ProvtsError):
    pass


class SingularSystem(ProvtsError):
    pass


class ClassTooSmall(ProvtsError):
    pass


class UnknownClass(ProvtsError):
    pass


class EmptyFeatureSet(ProvtsError):
    pass


class TraceTooShort(ProvtsError):
    pass
