"""Exception hierarchy shared by the solvers, the engines and the command line."""


class SpikefluxError(Exception):
    """Base class for every error raised by spikeflux."""

    exit_code = 1


class ConfigError(SpikefluxError):
    """Invalid types, grids or scenario files."""

    exit_code = 2


class GridError(ConfigError):
    pass


class NumericalError(SpikefluxError):
    """A solver or engine produced an unusable result."""

    exit_code = 3


class NegativeDensityError(NumericalError):
    pass


class AgeTruncationError(NumericalError):
    """Probability mass reached the end of the age domain."""


class ConvergenceError(NumericalError):
    pass


class HazardRangeError(NumericalError):
    """A hazard table was queried outside the ages it covers."""


class ToleranceError(SpikefluxError):
    """A declared scenario check failed."""

    exit_code = 4
