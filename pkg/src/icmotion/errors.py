"""Exception types shared across the package.

Every error raised on purpose derives from IcMotionError so callers (and the
CLI exit-code mapping) can tell contract violations from genuine bugs.
"""


class IcMotionError(Exception):
    """Base class for all deliberate errors raised by this package."""


# ---------------------------------------------------------------- motion data


class DegenerateRotation(IcMotionError):
    """6D rotation input whose columns cannot be orthonormalized."""


class NotARotation(IcMotionError):
    """3x3 input is not a proper rotation matrix."""


class ShapeMismatch(IcMotionError):
    """Array shape disagrees with the declared frame/sequence layout."""


class EmptyCorpus(IcMotionError):
    """Statistics requested over zero frames."""


class NonFinite(IcMotionError):
    """NaN or inf appeared where finite values are required."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


# ------------------------------------------------------------------- geometry


class DegenerateTangent(IcMotionError):
    """Curve tangent is too short to define a direction."""


class PlacementFailed(IcMotionError):
    """Obstacle placement failed after the retry budget."""


class TooLong(IcMotionError):
    """Sequence exceeds its cap (motion frame count or prompt token count)."""


# --------------------------------------------------------------------- prompt


class PromptError(IcMotionError):
    """Base class for prompt serialization/parsing errors."""


class PromptSyntaxError(PromptError):
    """Malformed prompt text; carries the character position of the failure."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownCurveType(PromptError):
    """Curve type tag outside the known set."""


class SchemaMismatch(PromptError):
    """Parameter keys do not match any schema for the tagged curve type."""


class NumberError(PromptError):
    """Numeric literal failed to parse or is non-finite."""


class CountMismatch(PromptError):
    """Stated obstacle count disagrees with the listed obstacles."""


class UnknownCharacter(PromptError):
    """Tokenizer input contains a character outside the vocabulary alphabet."""


# ----------------------------------------------------------------------- task


class MissingSource(IcMotionError):
    """Task kind requires a source motion but none was given."""


class BadSplit(IcMotionError):
    """Prefix/suffix split point outside the valid range."""


class BadStride(IcMotionError):
    """Keyframe stride outside the valid range."""


class NoPreservedFrames(IcMotionError):
    """Inversion-style sampling asked to preserve an empty frame set it needs."""


# ---------------------------------------------------------------- model/train


class OrderingViolated(IcMotionError):
    """Measured overhead table violates a documented ordering."""


class CheckpointMismatch(IcMotionError):
    """Checkpoint config or vocabulary hash disagrees with expectations."""


class FormatError(IcMotionError):
    """Binary file does not follow the declared format."""
