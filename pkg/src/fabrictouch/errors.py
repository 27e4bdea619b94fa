"""Exception types raised across the package."""


class FabricTouchError(Exception):
    """Base class for all package errors."""


class TrialError(FabricTouchError):
    """A trial directory or in-memory trial violates the canonical layout."""


class MissingStream(TrialError):
    pass


class LengthMismatch(TrialError, ValueError):
    pass


class CorruptAudio(TrialError):
    pass


class InvalidTrial(TrialError, ValueError):
    pass


class OverlapError(FabricTouchError, ValueError):
    pass


class Underflow(FabricTouchError, ValueError):
    """Fewer than one full window of audio precedes the requested time."""


class BadLength(FabricTouchError, ValueError):
    pass


class ShapeMismatch(FabricTouchError, ValueError):
    pass


class EmptySequence(FabricTouchError, ValueError):
    pass


class UnknownHead(FabricTouchError, KeyError):
    pass


class MissingHead(FabricTouchError, KeyError):
    pass


class DivergenceError(FabricTouchError, RuntimeError):
    pass


class LabelOutOfRange(FabricTouchError, ValueError):
    pass


class TooFewPairs(FabricTouchError, ValueError):
    pass


class CheckpointError(FabricTouchError):
    """Checkpoint file is malformed or does not match the requested config."""
