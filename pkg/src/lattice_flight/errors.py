"""Exception types shared across the library."""


class LatticeError(Exception):
    """Base class for all library errors."""


class ConfigError(LatticeError):
    """Malformed structure/scenario file. Carries file path and line number."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        loc = ""
        if path is not None:
            loc += str(path)
        if line is not None:
            loc += f":{line}"
        super().__init__(f"{loc}: {message}" if loc else message)


class RowSumViolation(LatticeError):
    """Interconnection matrix does not encode exactly one mount per link."""


class DisconnectedGraph(LatticeError):
    """Copter/polygon connection graph is not a single tree."""


class NonPositiveDimension(LatticeError):
    """A mass, length, diameter or modulus that must be positive is not."""


class DegenerateFrame(LatticeError):
    """Structure frame x-axis is undefined (all copters at the centroid)."""


class SingularInertia(LatticeError):
    """Inertia matrix cannot be inverted."""


class NonFiniteState(LatticeError):
    """Integration produced a non-finite state entry (divergence)."""


class RankDeficient(LatticeError):
    """Allocation matrix has rank below 3."""


class RankDeficientWarning(UserWarning):
    """Non-fatal flavour of RankDeficient used by build_gamma."""


class Infeasible(LatticeError):
    """Constraint set of an allocation problem is empty.

    Carries a small certificate: the equality rows that could not be met
    and the residual left after phase-1 minimization.
    """

    def __init__(self, message, rows=(), residual=None):
        self.rows = tuple(rows)
        self.residual = residual
        super().__init__(message)


class BatteryBelowCutoff(LatticeError):
    """A battery reading at or below the cutoff voltage makes f_B undefined."""


class SimDiverged(LatticeError):
    """Closed-loop simulation diverged; carries the control tick index."""

    def __init__(self, message, tick=None):
        self.tick = tick
        super().__init__(message)
