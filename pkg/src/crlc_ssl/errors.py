"""Exception types raised across the package."""


class InvalidArgumentError(ValueError):
    pass


class InsufficientDataError(ValueError):
    def __init__(self, label: int, available: int, requested: int):
        self.label = label
        self.available = available
        self.requested = requested
        super().__init__(
            f"class {label}: {available} instances available, {requested} requested"
        )


class FormatError(ValueError):
    """Malformed dataset or checkpoint file. ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class StrategyInapplicableError(ValueError):
    pass


class InputTooShortError(ValueError):
    pass


class CheckpointMismatchError(ValueError):
    pass
