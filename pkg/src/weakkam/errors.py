"""Diagnostic error types shared across the toolkit."""


class WeakKamError(RuntimeError):
    """Base class for all toolkit diagnostics."""


class VelocityEscape(WeakKamError):
    """An orbit left the velocity box; the box is too small for this orbit."""


class BoxSaturation(WeakKamError):
    """Every minimizer of a dynamic-programming step sits on the velocity-box
    boundary, so the computed values are untrustworthy."""


class NotConverged(WeakKamError):
    """An iteration exhausted its budget before meeting its tolerance."""


class EmptyAubry(WeakKamError):
    """No grid node has a diagonal barrier below the requested threshold."""


class Infeasible(WeakKamError):
    """The discrete closed-measure polytope is empty; indicates a basis/grid
    inconsistency that must be surfaced, never repaired."""


class SupportOverlap(WeakKamError):
    """A one-form's support meets the (dilated) Aubry estimate."""


class MollificationTooCoarse(WeakKamError):
    """Smoothing destroyed the subsolution inequality; retry with smaller sigma."""


class WindowExhausted(WeakKamError):
    """No horizon inside the barrier window satisfies the requested estimate."""


class ConfigError(WeakKamError):
    """A run configuration failed validation; carries a field-path diagnostic."""

    def __init__(self, path, message):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}")
