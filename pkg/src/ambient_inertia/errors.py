"""Exception hierarchy.

The CLI maps :class:`ConfigError` to exit code 1 and :class:`NumericalError`
to exit code 2.
"""


class AmbientInertiaError(Exception):
    pass


class ConfigError(AmbientInertiaError, ValueError):
    """Invalid network, device or run configuration."""


class NumericalError(AmbientInertiaError, RuntimeError):
    """A numerical procedure failed (divergence, singularity, instability)."""


class PowerFlowError(NumericalError):
    pass


class InitializationError(NumericalError):
    pass


class SingularJacobianError(NumericalError):
    pass


class StabilityError(NumericalError):
    def __init__(self, message, eigenvalues=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues


class LyapunovError(NumericalError):
    pass


class SimulationError(NumericalError):
    pass
