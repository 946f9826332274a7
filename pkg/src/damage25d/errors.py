"""Exception types shared across the pipeline stages."""


class Damage25dError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(Damage25dError, ValueError):
    """Input data or parameters violate a documented precondition."""


class ProcessingError(Damage25dError, RuntimeError):
    """A numerical stage failed on otherwise valid input."""


class FormatError(ValidationError):
    """A file could not be parsed into the expected structure."""
