"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An input violates an operation's preconditions."""


class Refusal(RuntimeError):
    """An operation declines to run on otherwise well-formed input.

    Raised for guard rails (step caps, unsupported parameter ranges,
    resolution limits) rather than for malformed arguments.
    """
