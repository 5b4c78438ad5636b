"""Iterated quadratic surrogates for the shifted Poisson+Gaussian
negative log-likelihood, with the union-of-transforms prior.

The shifted model treats Y = (raw counts) + sigma^2 as Poisson with
mean ybar(l) = I0 exp(-l) + sigma^2, giving the per-ray term
h(l) = ybar(l) - Y log(ybar(l)) (additive constants dropped); the
score is unbiased only with the shifted counts.  Each outer iteration
builds the tangent parabola with the optimum curvature at l^n = A x^n,
runs one ordered-subsets LALM image update on the resulting weighted
quadratic plus the transform regularizer, then refreshes the sparse
codes and class memberships once.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import Geometry, Image
from .patches import CodeAssignment, cluster_image
from .projector import Projector
from .simulate import MeasurementSet
from .solvers import (
    QuadraticProblem,
    SolverDivergence,
    UltraParams,
    compute_DA,
    compute_DR,
    os_lalm_update,
    ultra_reg_grad,
    ultra_reg_value,
)

_EXP_CLAMP = 700.0
_SMALL_L = 1e-6  # below this the curvature ratio is pure cancellation noise


def _ybar(l, I0, sigma2):
    return I0 * np.exp(np.clip(-np.asarray(l, dtype=np.float64), -_EXP_CLAMP, _EXP_CLAMP)) + sigma2


def h_value(l, counts, I0, sigma2):
    yb = _ybar(l, I0, sigma2)
    return yb - counts * np.log(yb)


def h_derivatives(l, counts, I0, sigma2):
    """(h, h', h'') of the per-ray likelihood term, elementwise."""
    l = np.asarray(l, dtype=np.float64)
    u = I0 * np.exp(np.clip(-l, -_EXP_CLAMP, _EXP_CLAMP))
    yb = u + sigma2
    h = yb - counts * np.log(yb)
    hdot = u * (counts / yb - 1.0)
    hddot = u * (1.0 - counts * sigma2 / (yb * yb))
    return h, hdot, hddot


def optimum_curvature(l, counts, I0, sigma2):
    """Smallest parabola curvature that keeps the surrogate above h on
    l >= 0, capped by [h''(0)]_+ and floored to stay positive.

    For l below a small threshold the ratio formula is cancellation
    noise, so the cap value is used directly.
    """
    l = np.asarray(l, dtype=np.float64)
    counts = np.broadcast_to(np.asarray(counts, dtype=np.float64), l.shape)
    if np.any(l < 0):
        raise ValueError("line integrals must be >= 0")
    _, _, hddot0 = h_derivatives(np.zeros_like(l), counts, I0, sigma2)
    cap = np.maximum(hddot0, 0.0)

    h0 = h_value(np.zeros_like(l), counts, I0, sigma2)
    hl, hdotl, _ = h_derivatives(l, counts, I0, sigma2)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = 2.0 * (h0 - hl + l * hdotl) / (l * l)
    c = np.where(l > _SMALL_L, np.maximum(ratio, 0.0), cap)
    c = np.minimum(c, cap)
    floor = 1e-12 * cap + 1e-30
    return np.where(c > 0.0, c, floor)


@dataclass
class SurrogateState:
    """Per-iteration parabola data: line integrals, gradient row,
    curvature diagonal, and the quadratic target."""

    line_integrals: np.ndarray
    grad: np.ndarray  # d_h, per ray
    curvatures: np.ndarray  # W^n diagonal, per ray
    target: np.ndarray  # ytilde^n, per ray
    likelihood: float  # sum_i h_i(l^n_i)


def shifted_counts(meas: MeasurementSet) -> np.ndarray:
    """Measurements under the shifted model: raw counts + sigma^2."""
    return meas.counts.ravel() + meas.protocol.sigma**2


def build_surrogate(x_flat: np.ndarray, meas: MeasurementSet, op) -> SurrogateState:
    """Tangent quadratic of the likelihood at the current image."""
    x_flat = np.asarray(x_flat, dtype=np.float64).ravel()
    if np.any(x_flat < 0):
        raise ValueError("surrogate expansion point must be >= 0")
    I0 = meas.protocol.I0
    sigma2 = meas.protocol.sigma**2
    counts = shifted_counts(meas)
    l = op.forward(x_flat)
    l = np.maximum(l, 0.0)  # guard rounding; x >= 0 keeps l >= 0 exactly
    h, hdot, _ = h_derivatives(l, counts, I0, sigma2)
    c = optimum_curvature(l, counts, I0, sigma2)
    target = l - hdot / c
    return SurrogateState(
        line_integrals=l,
        grad=hdot,
        curvatures=c,
        target=target,
        likelihood=float(np.sum(h)),
    )


def likelihood_value(x_flat: np.ndarray, meas: MeasurementSet, op) -> float:
    l = np.maximum(op.forward(np.asarray(x_flat, dtype=np.float64).ravel()), 0.0)
    return float(np.sum(h_value(l, shifted_counts(meas), meas.protocol.I0,
                                meas.protocol.sigma**2)))


def spultra_reconstruct(
    meas: MeasurementSet,
    geom: Geometry,
    params: UltraParams,
    init: Image,
    n_outer: int,
    log: Optional[list] = None,
) -> tuple[Image, CodeAssignment]:
    """Surrogate-based reconstruction with one coding/clustering pass
    per outer iteration.

    On divergence the last finite iterate is returned with
    ``meta["diverged"] = True``.
    """
    if (init.rows, init.cols) != (geom.image_rows, geom.image_cols):
        raise ValueError("init image does not match geometry grid")
    if np.any(init.values < 0):
        raise ValueError("init image must be >= 0")
    rows, cols = geom.image_rows, geom.image_cols
    union = params.transforms
    if union is None:
        raise ValueError("UltraParams.transforms is required")

    op = Projector(geom)
    D_R = compute_DR(params.beta, union, params.tau, params.patch, rows, cols)
    x = init.values.ravel().copy()
    assignment = cluster_image(x.reshape(rows, cols), union, params.gamma, params.patch)
    diverged = False

    for n in range(n_outer):
        t0 = time.perf_counter()
        state = build_surrogate(x, meas, op)
        problem = QuadraticProblem(
            op=op,
            weights=state.curvatures,
            target=state.target,
            D_A=compute_DA(op, state.curvatures),
        )
        t_init = time.perf_counter() - t0
        reg = (
            None
            if params.beta == 0
            else (
                lambda v: ultra_reg_grad(
                    v, assignment, union, params.tau, params.beta, rows, cols
                )
            )
        )
        t1 = time.perf_counter()
        try:
            x = os_lalm_update(x, problem, reg, D_R, params.inner)
        except SolverDivergence:
            diverged = True
            break
        x = np.maximum(x, 0.0)
        t_update = time.perf_counter() - t1
        t2 = time.perf_counter()
        assignment = cluster_image(
            x.reshape(rows, cols), union, params.gamma, params.patch
        )
        t_code = time.perf_counter() - t2
        if log is not None:
            obj = likelihood_value(x, meas, op) + params.beta * ultra_reg_value(
                x.reshape(rows, cols), assignment, union, params.tau, params.gamma
            )
            log.append(
                {
                    "outer": n,
                    "objective": obj,
                    "seconds_init": t_init,
                    "seconds_update": t_update,
                    "seconds_coding": t_code,
                }
            )

    out = Image(values=x.reshape(rows, cols), mu_water=init.mu_water)
    if diverged:
        out.meta["diverged"] = True
    return out, assignment
