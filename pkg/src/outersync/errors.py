"""Exception hierarchy shared by every module."""


class OutersyncError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(OutersyncError, ValueError):
    """An argument lies outside the domain of an operation."""


class ValidationError(OutersyncError, ValueError):
    """A user-declared object violates one of its invariants."""


class ContractViolation(OutersyncError, RuntimeError):
    """A precondition of an internal primitive was not met by its caller."""


class RuleValidationError(ValidationError):
    """A trigger rule's hypotheses do not hold for the given system and weights."""

    def __init__(self, message, problems=()):
        super().__init__(message)
        self.problems = list(problems)


class SimulationError(OutersyncError, RuntimeError):
    """The event loop produced a non-finite state or otherwise could not continue."""


class TraceError(OutersyncError, ValueError):
    """A trace is malformed (non-positive gaps, unordered events, ...)."""


class ConfigError(OutersyncError, ValueError):
    """A configuration file failed to parse or validate.

    ``path`` is the dotted field path (``modes[0].gamma[1]``) and ``line`` the
    1-based source line, when known.
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if path:
            where.append(path)
        prefix = f"{': '.join(where)}: " if where else ""
        super().__init__(prefix + message)
