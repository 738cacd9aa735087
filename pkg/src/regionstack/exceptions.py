"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    """Input values violate a precondition (too few rows, non-finite data...)."""


class ShapeError(InvalidInputError):
    """Array dimensions disagree with a fitted model or with each other."""


class EmptyFeatureError(InvalidInputError):
    """No feature survives the near-zero-variance filter."""


class ParseError(ValueError):
    """A feature or parcellation file does not match its schema."""


class ValidationError(ValueError):
    """A parcellation or configuration fails its structural checks."""
