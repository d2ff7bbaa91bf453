class ShapeError(ValueError):
    """Array shape violates a module contract."""


class LengthError(ValueError):
    """Sequence longer than a configured or admissible maximum."""
