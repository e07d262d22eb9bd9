"""Exception types shared across the package."""


class SwarmLearnError(Exception):
    """Base class for all swarmlearn errors."""


class IntegrationFailureError(SwarmLearnError):
    """Integrator produced a non-finite value.

    ``where`` names the RK4 stage or the rollout step index at which the
    failure was detected.
    """

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class SingularConfigurationError(SwarmLearnError):
    """Two robots (or a robot and an obstacle) coincide exactly."""


class SimulationDivergenceError(SwarmLearnError):
    """A simulated robot left its confinement region by a wide margin."""


class TrainingDivergenceError(SwarmLearnError):
    """Loss or gradient became non-finite during optimization."""


class ConfigError(SwarmLearnError):
    """Invalid configuration document; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FormatError(SwarmLearnError):
    """A persisted file does not match its expected format."""
