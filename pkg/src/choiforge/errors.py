"""Exception types shared across the package."""


class ChoiforgeError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(ChoiforgeError, ValueError):
    """Raised when an input matrix or vector is malformed (non-finite, wrong shape)."""


class NotPsdError(ChoiforgeError, ValueError):
    """Raised when a matrix expected to be positive semidefinite is indefinite."""


class SingularGramError(ChoiforgeError, ValueError):
    """Raised when a Gram matrix is singular and the constraint-restoring
    adjustment cannot be applied."""


class FactorizationError(ChoiforgeError, ValueError):
    """Raised when a Cholesky factorization of a supposedly SPD matrix breaks down."""


class DegenerateDenominatorError(ChoiforgeError, ValueError):
    """Raised when the denominator quadratic form of a ratio fidelity vanishes
    or its restriction to the active subspace is singular."""


class DegenerateDataError(ChoiforgeError, ValueError):
    """Raised when classical data has a singular Gram matrix and cannot be
    whitened into state coordinates."""
