"""2D scan geometries and the image / sinogram containers tied to them.

Coordinate conventions used throughout the package:

* physical coordinates in mm, x to the right, y up, origin at the
  center of the image grid;
* image arrays are indexed ``values[row, col]`` with row 0 at the top,
  so the pixel center of ``(i, j)`` sits at
  ``x = (j - (cols-1)/2) * pixel_size``,
  ``y = ((rows-1)/2 - i) * pixel_size``;
* sinogram arrays are indexed ``values[view, bin]``.

Hounsfield conversion uses HU = 1000 * (mu - mu_water) / mu_water.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

MU_WATER_DEFAULT = 0.0192  # mm^-1, water attenuation at a nominal ~70 keV

PARALLEL = "parallel"
FAN_ARC = "fan-arc"


@dataclass(frozen=True)
class Geometry:
    """Single-slice acquisition geometry.

    Parameters
    ----------
    kind : str
        ``"parallel"`` or ``"fan-arc"`` (equiangular detector arc).
    n_views, n_bins : int
        Number of projection views and detector bins per view.
    image_rows, image_cols : int
        Reconstruction grid shape.
    pixel_size : float
        Square pixel side in mm.
    view_angles : ndarray
        Strictly increasing view angles in radians, within [0, 2*pi).
    source_to_iso, source_to_detector : float
        Fan-beam distances in mm (unused for parallel geometry).
    detector_bin_spacing : float
        Bin pitch: mm for parallel, radians for the fan arc.
    """

    kind: str
    n_views: int
    n_bins: int
    image_rows: int
    image_cols: int
    pixel_size: float
    view_angles: np.ndarray
    source_to_iso: float = 0.0
    source_to_detector: float = 0.0
    detector_bin_spacing: float = 0.0

    def __post_init__(self):
        if self.kind not in (PARALLEL, FAN_ARC):
            raise ValueError(f"unknown geometry kind {self.kind!r}")
        if self.n_views < 1 or self.n_bins < 1:
            raise ValueError("n_views and n_bins must be >= 1")
        if self.image_rows < 1 or self.image_cols < 1:
            raise ValueError("image dims must be >= 1")
        if not self.pixel_size > 0:
            raise ValueError("pixel_size must be > 0")
        if self.detector_bin_spacing <= 0:
            raise ValueError("detector_bin_spacing must be > 0")
        angles = np.asarray(self.view_angles, dtype=np.float64)
        if angles.shape != (self.n_views,):
            raise ValueError("view_angles must have length n_views")
        if np.any(angles < 0) or np.any(angles >= 2 * np.pi):
            raise ValueError("view_angles must lie in [0, 2*pi)")
        if self.n_views > 1 and np.any(np.diff(angles) <= 0):
            raise ValueError("view_angles must be strictly increasing")
        object.__setattr__(self, "view_angles", angles)
        if self.kind == FAN_ARC:
            if not (self.source_to_detector > self.source_to_iso):
                raise ValueError("fan geometry needs source_to_detector > source_to_iso")
            if not (self.source_to_iso > self.image_diagonal / 2):
                raise ValueError(
                    "fan source must sit outside the object support: "
                    f"source_to_iso={self.source_to_iso} <= diagonal/2="
                    f"{self.image_diagonal / 2:.3f}"
                )

    @property
    def n_rays(self) -> int:
        return self.n_views * self.n_bins

    @property
    def n_pixels(self) -> int:
        return self.image_rows * self.image_cols

    @property
    def image_diagonal(self) -> float:
        """Diagonal of the image support in mm."""
        return float(np.hypot(self.image_rows, self.image_cols) * self.pixel_size)

    def same_grid(self, other: "Geometry") -> bool:
        return (
            self.image_rows == other.image_rows
            and self.image_cols == other.image_cols
            and self.pixel_size == other.pixel_size
        )


def parallel_beam(
    n_views: int,
    n_bins: int,
    image_rows: int,
    image_cols: int,
    pixel_size: float,
    bin_spacing: Optional[float] = None,
    angular_range: float = np.pi,
) -> Geometry:
    """Parallel-beam geometry with views uniform over [0, angular_range)."""
    if n_views < 1:
        raise ValueError("n_views must be >= 1")
    angles = np.arange(n_views) * (angular_range / n_views)
    return Geometry(
        kind=PARALLEL,
        n_views=n_views,
        n_bins=n_bins,
        image_rows=image_rows,
        image_cols=image_cols,
        pixel_size=pixel_size,
        view_angles=angles,
        detector_bin_spacing=pixel_size if bin_spacing is None else bin_spacing,
    )


def fan_beam(
    n_views: int,
    n_bins: int,
    image_rows: int,
    image_cols: int,
    pixel_size: float,
    source_to_iso: float,
    source_to_detector: float,
    bin_spacing: Optional[float] = None,
) -> Geometry:
    """Equiangular fan-beam geometry with views uniform over [0, 2*pi).

    The default bin spacing makes the fan cover the circle inscribing
    the image grid with a 5% margin.
    """
    if n_views < 1 or n_bins < 1:
        raise ValueError("n_views and n_bins must be >= 1")
    if bin_spacing is None:
        half_diag = np.hypot(image_rows, image_cols) * pixel_size / 2
        fan_half = np.arcsin(min(0.999, 1.05 * half_diag / source_to_iso))
        bin_spacing = 2 * fan_half / n_bins
    angles = np.arange(n_views) * (2 * np.pi / n_views)
    return Geometry(
        kind=FAN_ARC,
        n_views=n_views,
        n_bins=n_bins,
        image_rows=image_rows,
        image_cols=image_cols,
        pixel_size=pixel_size,
        view_angles=angles,
        source_to_iso=source_to_iso,
        source_to_detector=source_to_detector,
        detector_bin_spacing=bin_spacing,
    )


def desk_fan_beam(size: int = 128) -> Geometry:
    """Desk-scale fan geometry defaults (declared, not vendor data)."""
    return fan_beam(
        n_views=246,
        n_bins=128,
        image_rows=size,
        image_cols=size,
        pixel_size=0.9766 * 512 / size,
        source_to_iso=538.5,
        source_to_detector=946.7,
    )


@dataclass
class Image:
    """Pixel grid of linear attenuation coefficients in mm^-1."""

    values: np.ndarray
    mu_water: float = MU_WATER_DEFAULT
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("image values must be 2-D")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("image values must be finite")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    def to_hu(self) -> np.ndarray:
        return 1000.0 * (self.values - self.mu_water) / self.mu_water

    @classmethod
    def from_hu(cls, hu: np.ndarray, mu_water: float = MU_WATER_DEFAULT) -> "Image":
        return cls(values=mu_water * (1.0 + np.asarray(hu) / 1000.0), mu_water=mu_water)

    def copy(self) -> "Image":
        return Image(self.values.copy(), self.mu_water, dict(self.meta))


LINE_INTEGRAL = "line-integral"
COUNTS = "counts"


@dataclass
class Sinogram:
    """Per-(view, bin) scalars tied to a geometry.

    ``kind`` is ``"line-integral"`` (mm^-1 * mm) or ``"counts"`` (photons).
    """

    geometry: Geometry
    values: np.ndarray
    kind: str = LINE_INTEGRAL

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = (self.geometry.n_views, self.geometry.n_bins)
        if self.values.shape != expected:
            raise ValueError(f"sinogram shape {self.values.shape} != geometry {expected}")
        if self.kind not in (LINE_INTEGRAL, COUNTS):
            raise ValueError(f"unknown sinogram kind {self.kind!r}")

    @property
    def n_rays(self) -> int:
        return self.values.size

    def copy(self) -> "Sinogram":
        return Sinogram(self.geometry, self.values.copy(), self.kind)
