"""Exception hierarchy.

Every error raised on purpose by lrlab derives from :class:`LRLabError`, and
additionally from the closest builtin so callers can catch ``ValueError``
where that is the natural thing to do.
"""

from __future__ import annotations


class LRLabError(Exception):
    """Base class for all lrlab errors."""


class RangeError(LRLabError, IndexError):
    """A site or interval lies outside the lattice."""


class ShapeError(LRLabError, ValueError):
    """Matrix dimensions do not match the lattice or support."""


class NumericError(LRLabError, ValueError):
    """Non-finite entries where finite numbers are required."""


class BudgetError(LRLabError, MemoryError):
    """A dense object or an enumeration would exceed the configured budget."""


class SizeError(LRLabError, ValueError):
    """A lattice is too small for the requested model."""


class ParameterError(LRLabError, ValueError):
    """An invalid scalar parameter (negative width, non-positive period, ...)."""


class GeometryError(LRLabError, ValueError):
    """Supports violate a geometric precondition (free region, disjointness, ...)."""


class FitError(LRLabError, ValueError):
    """Too few usable points, or a fit that produces a non-physical estimate."""


class NormalizationError(LRLabError, ValueError):
    """A state vector is not normalized."""


class HorizonError(LRLabError, ValueError):
    """No finite t_max exists for the given time profile."""


class ConvergenceError(LRLabError, RuntimeError):
    """Step halving did not reach the requested tolerance.

    ``last_distance`` is the spectral-norm distance between the last two
    iterates.
    """

    def __init__(self, message: str, last_distance: float):
        super().__init__(f"{message} (last successive distance {last_distance:.3e})")
        self.last_distance = last_distance


class ConfigError(LRLabError, ValueError):
    """Invalid scenario configuration; ``path`` points at the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class ExportError(LRLabError, OSError):
    """Reading or writing result files failed; ``path`` names the file."""

    def __init__(self, path, message: str):
        super().__init__(f"{path}: {message}")
        self.path = str(path)
