"""Domain exceptions shared across the simulation package."""

from __future__ import annotations


class TwsimError(Exception):
    """Base class for all package-specific errors."""


class DegenerateSpeed(TwsimError):
    """Vehicle speed is below the floor required for slip computations."""


class SingularSteering(TwsimError):
    """Steering angle too close to zero for the longitudinal force solve."""


class SingularProjection(TwsimError):
    """Vehicle sits at the instantaneous curvature center; path frame breaks down."""


class StalledOnPath(TwsimError):
    """Progress rate along the path dropped to zero; path-domain stepping impossible."""


class OutOfPath(TwsimError):
    """Queried arc length lies outside the path."""


class FitDiverged(TwsimError):
    """Curve fit failed to reach the required residual within its budget."""


class InfeasibleTotal(TwsimError):
    """Requested total longitudinal force exceeds the combined axle envelopes."""


class Infeasible(TwsimError):
    """No iterate satisfied the constraint tolerance within the solver budget."""


class Diverged(TwsimError):
    """Solver produced non-finite iterates."""


class ConfigError(TwsimError):
    """Scenario or parameter file failed validation."""


class KeyMismatch(TwsimError):
    """Two summaries describe different scenarios and cannot be compared."""


class MissingRun(TwsimError):
    """A report was requested over scenario runs that are absent."""
