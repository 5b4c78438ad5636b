"""superct: low-dose CT reconstruction toolkit.

Simulation, analytic and model-based iterative reconstruction (FBP,
PWLS-EP, PWLS-ULTRA, SPULTRA), union-of-transforms learning, and
supervised/iterative reconstruction cascades, all at desk scale.
"""

__version__ = "0.1.0"

from .geometry import Geometry, Image, Sinogram, parallel_beam, fan_beam
from .phantom import shepp_logan
from .projector import Projector, MatrixOperator, forward_project, back_project
from .fbp import fbp_reconstruct
from .simulate import (
    ScanProtocol,
    MeasurementSet,
    simulate_counts,
    simulate_measurements,
    post_log,
    statistical_weights,
)

__all__ = [
    "Geometry",
    "Image",
    "Sinogram",
    "parallel_beam",
    "fan_beam",
    "shepp_logan",
    "Projector",
    "MatrixOperator",
    "forward_project",
    "back_project",
    "fbp_reconstruct",
    "ScanProtocol",
    "MeasurementSet",
    "simulate_counts",
    "simulate_measurements",
    "post_log",
    "statistical_weights",
]
