"""Low-dose measurement simulation and statistical weights.

Counts follow Y_i ~ Poisson(I0 * exp(-l_i)) + N(0, sigma^2); Gaussian
noise is added as a continuous real (no re-rounding).  Post-log
estimates and the diagonal weights clamp counts at EPS_COUNTS below so
logs and ratios stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import COUNTS, Geometry, Sinogram

EPS_COUNTS = 0.1  # clamp for nonpositive measurements, in counts
_EXP_CLAMP = 700.0
_MEAN_CLAMP = 1e15  # keeps the Poisson sampler in range for unphysical l < 0


@dataclass(frozen=True)
class ScanProtocol:
    """Incident photons per ray, electronic noise level, and RNG seed."""

    I0: float
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.I0 > 0:
            raise ValueError("I0 must be > 0")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


@dataclass
class MeasurementSet:
    """Counts, post-log line integrals and statistical weights per ray."""

    geometry: Geometry
    counts: np.ndarray
    post_log: np.ndarray
    weights: np.ndarray
    protocol: ScanProtocol
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = (self.geometry.n_views, self.geometry.n_bins)
        for name in ("counts", "post_log", "weights"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} shape {arr.shape} != {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            setattr(self, name, arr)
        if np.any(self.weights < 0):
            raise ValueError("weights must be >= 0")


def simulate_counts(line_integrals: Sinogram, protocol: ScanProtocol):
    """Sample noisy photon counts for each ray.

    Returns ``(counts, clamped)`` where ``clamped`` marks rays whose
    exponent or mean had to be clamped to stay in range.
    """
    l = line_integrals.values
    arg = np.clip(-l, -_EXP_CLAMP, _EXP_CLAMP)
    clamped = arg != -l
    arg_cap = np.log(_MEAN_CLAMP / protocol.I0)
    over = arg > arg_cap
    arg = np.where(over, arg_cap, arg)
    clamped |= over
    mean = protocol.I0 * np.exp(arg)
    rng = np.random.Generator(np.random.Philox(key=protocol.seed))
    counts = rng.poisson(mean).astype(np.float64)
    if protocol.sigma > 0:
        counts += rng.normal(0.0, protocol.sigma, size=counts.shape)
    return counts, clamped


def post_log(counts: np.ndarray, I0: float) -> np.ndarray:
    """Line-integral estimates ln(I0 / max(Y, EPS_COUNTS))."""
    return np.log(I0 / np.maximum(np.asarray(counts, dtype=np.float64), EPS_COUNTS))


def statistical_weights(counts: np.ndarray, sigma: float) -> np.ndarray:
    """Diagonal data weights Y^2 / (Y + sigma^2) on clamped counts."""
    y = np.maximum(np.asarray(counts, dtype=np.float64), EPS_COUNTS)
    return y * y / (y + sigma * sigma)


def simulate_measurements(
    line_integrals: Sinogram, protocol: ScanProtocol
) -> MeasurementSet:
    """Full simulation: counts, post-log estimates, and weights."""
    counts, clamped = simulate_counts(line_integrals, protocol)
    meas = MeasurementSet(
        geometry=line_integrals.geometry,
        counts=counts,
        post_log=post_log(counts, protocol.I0),
        weights=statistical_weights(counts, protocol.sigma),
        protocol=protocol,
    )
    if np.any(clamped):
        meas.meta["clamped_rays"] = int(np.count_nonzero(clamped))
    return meas


def counts_sinogram(meas: MeasurementSet) -> Sinogram:
    return Sinogram(meas.geometry, meas.counts, kind=COUNTS)
