"""Exception hierarchy shared by every xdsp module.

Everything a user can trigger with bad data derives from :class:`XdspError`;
the CLI maps those to exit status 1.
"""


class XdspError(Exception):
    """Base class for recoverable, data-dependent failures."""


class ContractError(XdspError, ValueError):
    """A caller broke an operation's precondition."""


class DimensionError(ContractError):
    pass


class MathDomainError(ContractError):
    """Elementwise function evaluated outside its domain (e.g. log of 0)."""


class NonFiniteError(XdspError, FloatingPointError):
    pass


class DeterminismError(XdspError):
    pass


class VocabularyError(ContractError):
    pass


class ParseError(XdspError, ValueError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class ConsistencyError(XdspError, ValueError):
    pass


class EmptyDomainError(XdspError, ValueError):
    pass


class InsufficientDataError(XdspError, ValueError):
    pass


class NamingError(XdspError, ValueError):
    pass


class RangeError(XdspError, ValueError):
    pass


class DegenerateError(XdspError, ValueError):
    """Zero-variance or zero-norm rows/columns where a scale is required."""

    def __init__(self, message, items=()):
        super().__init__(message)
        self.items = list(items)


class DivergenceError(XdspError, FloatingPointError):
    def __init__(self, epoch, batch, loss):
        super().__init__(f"training diverged at epoch {epoch}, batch {batch} (loss={loss})")
        self.epoch = epoch
        self.batch = batch


class CheckpointFormatError(XdspError):
    pass


class CheckpointVersionError(CheckpointFormatError):
    def __init__(self, found, expected):
        super().__init__(f"checkpoint version {found} is not supported (expected {expected})")
        self.found = found
        self.expected = expected


class IncompatibleCheckpointError(XdspError, ValueError):
    pass


class PairingError(XdspError, ValueError):
    def __init__(self, orphans):
        super().__init__("unpaired runs: " + ", ".join(sorted(orphans)))
        self.orphans = sorted(orphans)
