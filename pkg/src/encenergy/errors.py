"""Exception and warning types shared across the package.

The CLI maps :class:`DataError` subclasses to exit code 2 and
:class:`UnavailableError` subclasses to exit code 3.
"""

from __future__ import annotations


class EncEnergyError(Exception):
    """Base class for all package errors."""


class DataError(EncEnergyError):
    """Input data is malformed, inconsistent or insufficient."""


class UnavailableError(EncEnergyError):
    """A required tool or meter is not available on this host."""


class ParseError(DataError):
    def __init__(self, line: int | None, reason: str):
        self.line = line
        self.reason = reason
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{reason}")


class IntegrityError(DataError):
    """Per-function costs do not add up to the file's totals."""


class MissingEvents(DataError):
    def __init__(self, events):
        self.events = list(events)
        super().__init__("missing events: " + ", ".join(str(e) for e in self.events))


class MergeError(DataError):
    pass


class InsufficientData(DataError):
    pass


class ZeroVariance(DataError):
    pass


class ZeroMeasured(DataError):
    pass


class EmptyInput(DataError):
    pass


class InsufficientSamples(DataError):
    pass


class TooFewGroups(DataError):
    pass


class EmptyProfile(DataError):
    pass


class EmptyFilter(DataError):
    pass


class DatasetError(DataError):
    pass


class CommandFailed(EncEnergyError):
    def __init__(self, returncode: int, command=None):
        self.returncode = returncode
        self.command = command
        super().__init__(f"command exited with status {returncode}: {command!r}")


class DomainUnavailable(UnavailableError):
    pass


class ToolMissing(UnavailableError):
    def __init__(self, tools):
        self.tools = list(tools)
        super().__init__("required tools not found: " + ", ".join(self.tools))


class DegenerateDesign(UserWarning):
    """A feature column is identically zero; its coefficient is pinned to 0."""


class NegativeEnergy(UserWarning):
    """Measured total energy fell below the idle baseline."""


class LowCoverage(UserWarning):
    """Category rules matched less than the expected share of event mass."""
