"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(ValueError):
    """A precondition of an operation was violated by the caller."""


class StateError(RuntimeError):
    """An object is not in the state an operation requires."""


class ParseError(ValueError):
    """A binary or text input could not be decoded."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
