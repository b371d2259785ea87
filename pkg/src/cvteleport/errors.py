"""Exception types shared across the simulator."""


class SimulationError(Exception):
    """Base class for all cvteleport errors."""


class BasisMismatchError(SimulationError):
    """Two objects live on different truncated bases."""


class CutoffTooSmallError(SimulationError):
    """The Fock cutoff cannot hold the requested state within tolerance.

    Carries ``required_cutoff`` when a usable estimate exists.
    """

    def __init__(self, message: str, required_cutoff: int | None = None):
        super().__init__(message)
        self.required_cutoff = required_cutoff


class TruncationError(SimulationError):
    """An operation pushed too much weight against the cutoff."""


class QuadratureRangeError(SimulationError):
    """Quadrature value outside the reliable range for this cutoff."""


class GridTooSmallError(SimulationError):
    """Outcome grid does not capture enough of the probability mass."""


class RegimeValidationError(SimulationError):
    """Physical parameters violate the validity inequalities.

    ``failures`` lists the names of the violated inequalities.
    """

    def __init__(self, message: str, failures: list[str] | None = None):
        super().__init__(message)
        self.failures = failures or []


class ConfigError(SimulationError):
    """Malformed or inconsistent run configuration."""
