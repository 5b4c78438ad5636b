"""Analytic head phantom generation."""

from __future__ import annotations

import numpy as np

from .geometry import Image, MU_WATER_DEFAULT

# Classic ten-ellipse head phantom: (intensity, a, b, x0, y0, phi_deg)
# on the [-1, 1]^2 square; a is the x semi-axis before rotation.
# Intensities follow the original table (skull 2.0, brain tissue ~1.0),
# so scaling by mu_water puts nominal tissue at mu_water and caps the
# phantom at 2 * mu_water.
_ELLIPSES = np.array(
    [
        [2.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0],
        [-0.98, 0.6624, 0.8740, 0.00, -0.0184, 0.0],
        [-0.02, 0.1100, 0.3100, 0.22, 0.0000, -18.0],
        [-0.02, 0.1600, 0.4100, -0.22, 0.0000, 18.0],
        [0.01, 0.2100, 0.2500, 0.00, 0.3500, 0.0],
        [0.01, 0.0460, 0.0460, 0.00, 0.1000, 0.0],
        [0.01, 0.0460, 0.0460, 0.00, -0.1000, 0.0],
        [0.01, 0.0460, 0.0230, -0.08, -0.6050, 0.0],
        [0.01, 0.0230, 0.0230, 0.00, -0.6060, 0.0],
        [0.01, 0.0230, 0.0460, 0.06, -0.6050, 0.0],
    ]
)


def shepp_logan(rows: int, cols: int, mu_water: float = MU_WATER_DEFAULT) -> Image:
    """Ten-ellipse head phantom scaled so nominal tissue maps to mu_water.

    The skull ring reaches exactly 2 * mu_water; the background is 0.
    """
    if rows < 16 or cols < 16:
        raise ValueError("phantom needs rows, cols >= 16")
    # Pixel-center coordinates normalized to [-1, 1] per axis.
    x = (np.arange(cols) - (cols - 1) / 2.0) / ((cols - 1) / 2.0)
    y = ((rows - 1) / 2.0 - np.arange(rows)) / ((rows - 1) / 2.0)
    X, Y = np.meshgrid(x, y)
    values = np.zeros((rows, cols))
    for amp, a, b, x0, y0, phi_deg in _ELLIPSES:
        phi = np.deg2rad(phi_deg)
        c, s = np.cos(phi), np.sin(phi)
        dx = X - x0
        dy = Y - y0
        u = dx * c + dy * s
        v = -dx * s + dy * c
        inside = (u / a) ** 2 + (v / b) ** 2 <= 1.0
        values[inside] += amp
    return Image(values=values * mu_water, mu_water=mu_water)
