"""Exception hierarchy shared by every module."""


class VRPenaltyError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(VRPenaltyError, ValueError):
    """Argument shapes or lengths disagree with the problem dimensions."""


class PreconditionError(VRPenaltyError, ValueError):
    """An operation was called outside its domain (e.g. a point outside X)."""


class InputError(VRPenaltyError, ValueError):
    """Non-finite numerical input."""


class ConfigurationError(VRPenaltyError, ValueError):
    """Invalid parameters, schedules, descriptors or plans."""


class CertificationError(VRPenaltyError):
    """A test instance cannot be given certified error-bound constants."""


class DomainError(VRPenaltyError, ValueError):
    """Index arguments outside their admissible range (e.g. k = 0)."""


class DivergenceError(VRPenaltyError, RuntimeError):
    """The iterate became non-finite.

    ``k`` and ``x`` hold the last state whose coordinates were all finite.
    """

    def __init__(self, message, k=None, x=None):
        super().__init__(message)
        self.k = k
        self.x = x


class InsufficientDataError(VRPenaltyError, ValueError):
    """Too few usable trace rows for a rate fit."""


class ReportError(VRPenaltyError):
    """Trace directory is empty or incomplete."""
