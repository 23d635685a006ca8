"""Exception types shared by the simulation modules.

Every error carries a ``category`` which the command-line front end maps onto an
exit status (see ``simulate.EXIT_CODES``).
"""


class SimulationError(Exception):
    """Base class for all errors raised by the simulation suite."""

    category = "solver"

    def __init__(self, message: str, *, time: float | None = None, eps: float | None = None):
        super().__init__(message)
        self.message = message
        self.time = time
        self.eps = eps

    def with_context(self, *, time: float | None = None, eps: float | None = None):
        """Return a copy of this error tagged with simulation time and/or epsilon."""
        new_time = self.time if time is None else time
        new_eps = self.eps if eps is None else eps
        return type(self)(self.message, time=new_time, eps=new_eps)

    def __reduce__(self):
        # keyword-only context survives the trip back from sweep worker processes
        return (type(self), (self.message,), {"time": self.time, "eps": self.eps})

    def __str__(self) -> str:
        tags = []
        if self.eps is not None:
            tags.append(f"eps={self.eps:g}")
        if self.time is not None:
            tags.append(f"t={self.time:.6g}")
        if tags:
            return f"{self.message} ({', '.join(tags)})"
        return self.message


class ConfigError(SimulationError):
    """Invalid parameters, initial data or configuration text."""

    category = "config"


class FitError(SimulationError):
    """Convergence-order fit requested on unusable data."""

    category = "config"


class DomainError(SimulationError):
    """Input outside the domain of an operator (negative density, non-finite values)."""


class SolverError(SimulationError):
    """A linear solve failed to reach the requested residual."""


class BlowupError(SimulationError):
    """A field became non-finite or exceeded the blow-up threshold."""

    category = "blowup"


class AlignmentError(SimulationError):
    """Two trajectories do not share a grid or a time grid."""


class GridMismatchError(AlignmentError):
    """Two snapshot files were sampled on different grids."""
