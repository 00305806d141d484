class RanetError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgument(RanetError, ValueError):
    pass


class DataError(RanetError, ValueError):
    pass


class GenerationError(RanetError, RuntimeError):
    pass


class TrainingError(RanetError, RuntimeError):
    pass
