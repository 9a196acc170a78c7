"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """Malformed argument: bad grid parameters, unknown kernel spec, shape mismatch."""


class PreconditionError(ValueError):
    """An operation's mathematical precondition is violated (e.g. symmetry required)."""


class SingularOperatorError(ArithmeticError):
    """I + B is numerically rank-deficient; no inverse kernel exists."""


class NotContractiveError(ArithmeticError):
    """The symmetric operator has top eigenvalue >= 1; the square-root construction
    (and exponential integrability of the quadratic form) fails in this regime."""


class ConfigError(ValueError):
    """Run configuration is syntactically or semantically invalid."""
