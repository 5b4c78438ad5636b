"""Image quality metrics in Hounsfield units."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Image

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 8
SSIM_L_DEFAULT = 400.0  # display window width in HU


def _check(a: Image, b: Image):
    if (a.rows, a.cols) != (b.rows, b.cols):
        raise ValueError(f"image dims disagree: {a.rows}x{a.cols} vs {b.rows}x{b.cols}")


def rmse_hu(recon: Image, reference: Image) -> float:
    """Root-mean-square error in HU over all pixels."""
    _check(recon, reference)
    d = recon.to_hu() - reference.to_hu()
    return float(np.sqrt(np.mean(d * d)))


def psnr_db(recon: Image, reference: Image, peak: float | None = None) -> float:
    """20 log10(peak / RMSE); identical images return the 99 dB cap.

    The default peak is the reference maximum in display units
    (HU + 1000, water at 1000).
    """
    _check(recon, reference)
    if peak is None:
        peak = float(reference.to_hu().max() + 1000.0)
    if not peak > 0:
        raise ValueError("peak must be > 0")
    err = rmse_hu(recon, reference)
    if err == 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(20.0 * np.log10(peak / err)))


def ssim(recon: Image, reference: Image, data_range: float = SSIM_L_DEFAULT) -> float:
    """Mean local structural similarity over 8x8 sliding windows.

    Stabilizing constants C1 = (0.01 L)^2, C2 = (0.03 L)^2 with L the
    display dynamic range (default 400 HU).
    """
    _check(recon, reference)
    x = recon.to_hu()
    y = reference.to_hu()
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    def win(arr):
        v = np.lib.stride_tricks.sliding_window_view(arr, (SSIM_WINDOW, SSIM_WINDOW))
        return v.reshape(v.shape[0], v.shape[1], -1)

    wx = win(x)
    wy = win(y)
    mx = wx.mean(axis=-1)
    my = wy.mean(axis=-1)
    vx = wx.var(axis=-1)
    vy = wy.var(axis=-1)
    cov = (wx * wy).mean(axis=-1) - mx * my
    num = (2 * mx * my + c1) * (2 * cov + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


@dataclass
class EvalReport:
    rmse: float  # HU
    psnr: float  # dB
    ssim: float  # unitless

    def __post_init__(self):
        if self.rmse < 0:
            raise ValueError("rmse must be >= 0")
        if self.ssim > 1.0 + 1e-12:
            raise ValueError("ssim cannot exceed 1")

    def as_dict(self) -> dict:
        return {"rmse_hu": self.rmse, "psnr_db": self.psnr, "ssim": self.ssim}


def evaluate(recon: Image, reference: Image) -> EvalReport:
    return EvalReport(
        rmse=rmse_hu(recon, reference),
        psnr=psnr_db(recon, reference),
        ssim=ssim(recon, reference),
    )
