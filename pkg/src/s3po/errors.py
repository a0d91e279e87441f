"""Exception types shared across the package."""


class DataError(ValueError):
    """Invalid or inconsistent on-disk data (bad layout, mismatched clips)."""


class GeometryError(ValueError):
    """Operation undefined for the frame geometry (e.g. odd-width halves)."""


class CheckpointError(DataError):
    """Malformed checkpoint directory, config or weight index."""


class NumericError(RuntimeError):
    """Non-finite values encountered where finite math is required."""
