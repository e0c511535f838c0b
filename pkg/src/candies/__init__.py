"""Online novelty detection for Gaussian mixture classifiers."""

from candies.detector import Candies, Csnd, DetectionEvent, Static
from candies.errors import CandiesError, DataError, InvalidParameterError, NumericalError
from candies.hdr import CellLayout, HdrConfig, HdrDetector, build_cells_learned, build_cells_theoretical
from candies.ldr import LdrConfig, SuspicionBuffer
from candies.mixture import MixtureModel, TrainConfig, fit_conclusions, fuse, train

__version__ = "0.1.0"

__all__ = [
    "Candies", "Csnd", "Static", "DetectionEvent",
    "CandiesError", "DataError", "InvalidParameterError", "NumericalError",
    "CellLayout", "HdrConfig", "HdrDetector", "build_cells_learned", "build_cells_theoretical",
    "LdrConfig", "SuspicionBuffer",
    "MixtureModel", "TrainConfig", "fit_conclusions", "fuse", "train",
]
