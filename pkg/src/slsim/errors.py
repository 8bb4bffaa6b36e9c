"""Exception types shared across the simulator."""


class ConfigError(ValueError):
    """Invalid configuration or parameter value."""


class ShapeError(ValueError):
    """Array shapes do not line up."""


class LabelError(ValueError):
    """Class label outside the valid range."""


class AlignmentError(ValueError):
    """Per-client batches do not refer to the same rows."""


class IngestionError(OSError):
    """A dataset file could not be read or parsed."""

    def __init__(self, message, path=None, offset=None):
        parts = [message]
        if path is not None:
            parts.append(f"path={path}")
        if offset is not None:
            parts.append(f"offset={offset}")
        super().__init__(" ".join(parts))
        self.path = path
        self.offset = offset


class DivergenceError(ArithmeticError):
    """Training produced non-finite values; usually the learning rate is too high."""

    def __init__(self, message, round=None):
        super().__init__(message if round is None else f"{message} at round {round}")
        self.round = round
