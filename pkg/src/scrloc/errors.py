"""Exception hierarchy shared by the detection, model and calibration code."""


class ScrlocError(Exception):
    """Base class for all package errors."""


# Detection / image primitives
class DetectionError(ScrlocError, ValueError):
    pass


class NoCircle(DetectionError):
    pass


class NoCross(DetectionError):
    pass


class NoMarker(DetectionError):
    pass


class AmbiguousMarker(DetectionError):
    pass


class NoCenter(DetectionError):
    pass


class NoDepth(DetectionError):
    pass


# Models
class ModelError(ScrlocError, ValueError):
    pass


class ShapeMismatch(ModelError):
    pass


class UnsupportedWeightVersion(ModelError):
    pass


class Diverged(ScrlocError, RuntimeError):
    pass


# Calibration
class CalibrationError(ScrlocError, ValueError):
    pass


class InvalidVolume(CalibrationError):
    pass


class TooManyMissing(CalibrationError):
    pass


class DegenerateGeometry(CalibrationError):
    pass


class OutsideLattice(CalibrationError):
    pass


class NoCompleteBlock(CalibrationError):
    pass


class IllConditioned(CalibrationError):
    pass


class NoConvergence(ScrlocError, ArithmeticError):
    pass


class MissingModels(ScrlocError, FileNotFoundError):
    pass
