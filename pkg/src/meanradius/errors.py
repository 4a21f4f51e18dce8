"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Arguments violate an operation's preconditions."""


class DomainError(ValueError):
    """A point lies outside the region where a map is defined."""


class DegenerateImageError(ArithmeticError):
    """A map sent a point to the origin, where the Zorich inverse is undefined."""


class BranchJumpError(ArithmeticError):
    """A finite-difference stencil crossed a branch cut of the Zorich inverse."""


class OrientationError(ArithmeticError):
    """A sampled Jacobian determinant was negative beyond tolerance."""


class EstimationError(ArithmeticError):
    """A Monte Carlo or quadrature estimate is unusable (e.g. nonpositive volume)."""
