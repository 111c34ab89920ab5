"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A scenario or parameter file is invalid. The message names the offending field."""


class SingularityError(RuntimeError):
    """Attitude entered the Euler-singularity guard band (|roll| or |pitch| near pi/2)."""


class ThrustInfeasibleError(RuntimeError):
    """Commanded virtual force points into the infeasible half-space (f_z >= 0)."""


class DegenerateDirectionError(RuntimeError):
    """Virtual-force direction is too close to degenerate for rate extraction."""


class NonHurwitzError(ValueError):
    """A user supplied observer coefficient ladder whose polynomial is not Hurwitz."""


class RankDeficiencyError(ValueError):
    """Mixer matrix does not have full row rank; allocation is undefined."""


class DriverUndefinedError(RuntimeError):
    """Reference driver cannot produce an acceleration at the requested time."""


class DivergenceError(RuntimeError):
    """A simulation diverged. Carries the partial result when available."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
