class ErgoError(Exception):
    """Base class for all errors raised by ergo_sfde."""


class DimensionError(ErgoError, ValueError):
    """Segments or measures with incompatible tau / dimension."""


class InvalidModelError(ErgoError, ValueError):
    pass


class InvalidParameterError(ErgoError, ValueError):
    pass


class SamplingError(ErgoError):
    """A sampler produced only degenerate draws."""


class DivergenceError(ErgoError, FloatingPointError):
    """Non-finite state during integration."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class DegenerateFitError(ErgoError, ValueError):
    pass


class SelectionError(ErgoError):
    """No coupling strength passed the pilot runs."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class SolverCapError(ErgoError, ValueError):
    pass


class ConfigError(ErgoError, ValueError):
    pass
