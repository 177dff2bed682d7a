"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """Raised when an input violates an operation's precondition."""


class InvalidState(RuntimeError):
    """Raised when an intermediate object breaks an invariant it should hold."""


class Unsupported(ValueError):
    """Raised when an operation is asked for a case it deliberately does not cover."""


class NumericalFailure(FloatingPointError):
    """Raised when a computation produces non-finite values it cannot recover from."""
