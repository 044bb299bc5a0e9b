"""Exception types shared across the package."""


class LrbevError(Exception):
    """Base class for all package errors."""


class ShapeError(LrbevError, ValueError):
    """Tensor/layer dimensions do not line up."""


class EmptyGroupError(LrbevError, ValueError):
    """An aggregation that requires at least one element got none."""


class EvaluationError(LrbevError, ValueError):
    """A function produced a non-finite value where a finite one is required."""


class PlacementError(LrbevError, RuntimeError):
    """Scene generation could not place the requested objects."""


class FormatError(LrbevError, ValueError):
    """A serialized payload is malformed.

    ``offset`` is the byte offset at which the problem was detected.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ConfigError(LrbevError, ValueError):
    """A configuration value violates an invariant.

    Messages always start with the dotted name of the offending field.
    """


class PipelineError(LrbevError, RuntimeError):
    """A pipeline stage failed; the message is prefixed with the stage name."""
