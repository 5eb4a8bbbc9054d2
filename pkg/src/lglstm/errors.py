"""Exception types shared across the engine."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration value."""


class DimensionError(ValueError):
    """Operands have incompatible shapes."""


class LabelError(ValueError):
    """A class label lies outside the valid range."""


class InputTooSmallError(ValueError):
    """A spatial map is too small for the nine-grid pooling partition."""


class ContractError(RuntimeError):
    """An internal caller/callee contract was violated (e.g. cache reuse
    across mismatched modes)."""


class FormatError(ValueError):
    """Malformed binary image file.  Carries the byte offset of the fault."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class CheckpointError(ValueError):
    """Base class for checkpoint load failures."""


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointCrcError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass
