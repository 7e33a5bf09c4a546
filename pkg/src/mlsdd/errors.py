"""Exception types shared across the toolkit."""


class MlsddError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatch(MlsddError):
    pass


class NegativePivot(MlsddError):
    """An unmasked pivot fell below the negative tolerance; input is not PSD."""


class NoConvergence(MlsddError):
    """Iterative eigensolver hit its sweep/iteration cap."""

    def __init__(self, message, sweeps=None):
        super().__init__(message)
        self.sweeps = sweeps


class InvalidSpec(MlsddError):
    pass


class CountMismatch(MlsddError):
    pass


class NonPositiveEntry(MlsddError):
    pass


class PenaltyTooSmall(MlsddError):
    """Some face penalty does not dominate its coercivity threshold."""


class AdmissibilityViolated(MlsddError):
    """Some interior face is interior to no subdomain."""

    def __init__(self, message, face=None):
        super().__init__(message)
        self.face = face


class ZeroWeightDof(MlsddError):
    """A dof received zero total partition-of-unity weight."""


class EmptySubdomain(MlsddError):
    pass


class EmptyCoarseSpace(MlsddError):
    """No subdomain contributed any coarse basis vector."""


class SingularBlock(MlsddError):
    """A subdomain solve block is singular."""

    def __init__(self, message, level=None, subdomain=None):
        super().__init__(message)
        self.level = level
        self.subdomain = subdomain


class BoundViolated(MlsddError):
    """Measured condition number exceeds the theoretical bound."""
