"""Exception hierarchy shared by every module of the package."""


class RelayDesignError(Exception):
    """Base class for all errors raised by afrelay."""


class InvalidInputError(RelayDesignError, ValueError):
    """Malformed arguments: wrong shapes, non-finite entries, bad ranges."""


class NumericalError(RelayDesignError, ArithmeticError):
    """A linear system or iterative solver could not be trusted."""


class InfeasibleTargetError(RelayDesignError, ValueError):
    """A prescribed diagonal or QoS target cannot be reached."""


class DegenerateChannelError(RelayDesignError, ValueError):
    """The channel carries no energy on the requested streams."""


class DispatchError(RelayDesignError, ValueError):
    """An objective was routed to a design branch it does not support."""


class UnsupportedConfigurationError(RelayDesignError, ValueError):
    """A configuration outside the closed-form design's validity."""
