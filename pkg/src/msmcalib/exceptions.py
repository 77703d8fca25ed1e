"""Error types raised by the calibration pipeline.

Three families, mapped to CLI exit codes in :mod:`msmcalib.cli`:

* :class:`DataError` -- bad or insufficient input (exit 2).
* :class:`GeometryError` -- degenerate geometric configuration (exit 3).
* :class:`NumericalError` -- solver failure (exit 3).
"""


class CalibrationError(Exception):
    """Base class for all msmcalib errors."""


class DataError(CalibrationError, ValueError):
    pass


class GeometryError(CalibrationError, ValueError):
    pass


class NumericalError(CalibrationError, RuntimeError):
    pass


# geometry
class ParallelLinePlane(GeometryError):
    pass


class NearBranchCut(GeometryError):
    pass


class DegenerateLine(GeometryError):
    pass


class PointOnLine(GeometryError):
    pass


# camera
class BehindCamera(GeometryError):
    pass


class RayParallelToPlane(GeometryError):
    pass


class DegenerateConfig(GeometryError):
    pass


class EmptyBlob(DataError):
    pass


# beams / poses
class TooFewPoints(DataError):
    pass


class InsufficientCaptures(DataError):
    pass


class DegenerateSpanningAngle(GeometryError):
    pass


class Retroreflection(GeometryError):
    pass


class SkewLines(GeometryError):
    pass


class NoConvergence(NumericalError):
    def __init__(self, message, gradient_norm=None):
        super().__init__(message)
        self.gradient_norm = gradient_norm


class SingularNormalEquations(NumericalError):
    pass


# home frame
class RankDeficient(GeometryError):
    pass


class PencilDegenerate(GeometryError):
    pass


# hall
class OutOfRange(DataError):
    pass


class NoOverlap(DataError):
    pass


class InsufficientData(DataError):
    pass


class RankDeficientRegressors(DataError):
    pass


class FrequencyEstimationFailed(DataError):
    pass


# simulator
class NoPulses(DataError):
    pass


class DotOffBoard(DataError):
    pass


class ValidationError(DataError):
    """Schema or cross-reference violation in a dataset file."""
