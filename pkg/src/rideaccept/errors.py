"""Exception hierarchy shared by all modules."""


class RideAcceptError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(RideAcceptError, ValueError):
    pass


class SchemaError(RideAcceptError, ValueError):
    """Input file does not conform to its CSV schema."""


class GraphValidationError(RideAcceptError, ValueError):
    """Road graph is structurally valid but unusable (e.g. disconnected)."""


class ComputationError(RideAcceptError, ArithmeticError):
    pass


class StateError(RideAcceptError, RuntimeError):
    """An agent was asked to do something its current state forbids."""


class CalibrationError(RideAcceptError, RuntimeError):
    pass


class GenerationError(RideAcceptError, RuntimeError):
    pass


class InternalConsistencyError(RideAcceptError, AssertionError):
    """Bug guard: the simulation reached a state that should be impossible."""
