"""Exception taxonomy shared across the package."""


class ShapeError(ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ParameterError(ValueError):
    """A numeric argument is outside its valid range or malformed."""


class ConfigurationError(ValueError):
    """A structural setting (grid, head count, world spec, ...) is invalid."""


class DegenerateInputError(ValueError):
    """Input is mathematically degenerate (e.g. zero-norm vector)."""


class UsageError(RuntimeError):
    """An API contract was violated by the caller."""


class FormatError(Exception):
    """A serialized file is corrupt or has an unexpected layout.

    Carries the byte offset at which parsing failed.
    """

    def __init__(self, message: str, offset: int | None = None, path: str | None = None):
        self.offset = offset
        self.path = path
        detail = message
        if path is not None:
            detail = f"{path}: {detail}"
        if offset is not None:
            detail = f"{detail} (at byte offset {offset})"
        super().__init__(detail)
