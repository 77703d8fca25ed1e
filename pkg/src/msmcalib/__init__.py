"""Calibration of 3-DoF micro scanning mirrors."""

from .beams import BeamReconstruction, reconstruct_beams
from .dataset import Dataset
from .exceptions import CalibrationError, DataError, GeometryError, NumericalError, ValidationError
from .frame import HomeFrameEstimator
from .geometry import PlaneH, PluckerLine, RigidTransform
from .hall import HallModel, HallPoseRegressor
from .poses import MirrorPoseEstimator
from .sim import RigSimulator, simulate

__version__ = "0.1.0"

__all__ = [
    "BeamReconstruction",
    "CalibrationError",
    "DataError",
    "Dataset",
    "GeometryError",
    "HallModel",
    "HallPoseRegressor",
    "HomeFrameEstimator",
    "MirrorPoseEstimator",
    "NumericalError",
    "PlaneH",
    "PluckerLine",
    "RigSimulator",
    "RigidTransform",
    "ValidationError",
    "reconstruct_beams",
    "simulate",
]
