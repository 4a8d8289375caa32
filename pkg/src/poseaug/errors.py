"""Exception types shared across the package."""


class PoseaugError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(PoseaugError, ValueError):
    """A parameter violates a documented precondition."""


class InvalidInputError(PoseaugError, ValueError):
    """Input data violates a documented precondition (e.g. shape mismatch)."""


class DegenerateTransformError(PoseaugError, ValueError):
    """An affine map is singular or numerically non-invertible."""


class ShapeError(PoseaugError, ValueError):
    """Array dimensions violate an operation's shape contract."""


class ContractError(PoseaugError, RuntimeError):
    """An API contract was violated (stale cache, missing stop-gradient marker)."""


class DatasetParseError(PoseaugError, ValueError):
    """An annotation file does not follow the expected schema."""


class UndefinedMetricError(PoseaugError, ValueError):
    """A metric is undefined for the given instance (e.g. no labeled joints)."""
