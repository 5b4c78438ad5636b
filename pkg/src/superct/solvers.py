"""Relaxed ordered-subsets LALM image updates and the PWLS outer loops.

All solvers minimize 0.5 ||ytilde - A x||^2_W + beta R(x) over the box
[0, x_max], with the data Hessian majorized by
D_A = diag{A^T W A 1} and the regularizer Hessian by a diagonal D_R.
Subsets are interleaved view groups (views m, m+M, m+2M, ...).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .fbp import fbp_reconstruct
from .geometry import LINE_INTEGRAL, Geometry, Image, MU_WATER_DEFAULT, Sinogram
from .patches import (
    CodeAssignment,
    PatchConfig,
    TransformUnion,
    assemble_weighted,
    cluster_image,
    extract_patches,
    patch_overlap_counts,
)
from .projector import Projector
from .simulate import MeasurementSet

X_MAX_DEFAULT_HU = 3000.0


class SolverDivergence(RuntimeError):
    """Raised when an iterate stops being finite."""

    def __init__(self, message, last_finite=None):
        super().__init__(message)
        self.last_finite = last_finite


def rho_schedule(t: int, alpha: float) -> float:
    """Decreasing relaxation weight of the linearized AL recurrence."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if not 1.0 <= alpha < 2.0:
        raise ValueError("alpha must lie in [1, 2)")
    if t == 0:
        return 1.0
    v = np.pi / (alpha * (t + 1))
    return float(v * np.sqrt(1.0 - (v / 2.0) ** 2))


@dataclass(frozen=True)
class OsLalmConfig:
    alpha: float = 1.999
    M: int = 1
    P: int = 1
    x_max: float = MU_WATER_DEFAULT * (1.0 + X_MAX_DEFAULT_HU / 1000.0)

    def __post_init__(self):
        if not 1.0 <= self.alpha < 2.0:
            raise ValueError("alpha must lie in [1, 2)")
        if self.M < 1 or self.P < 1:
            raise ValueError("M and P must be >= 1")
        if not self.x_max > 0:
            raise ValueError("x_max must be > 0")


@dataclass
class QuadraticProblem:
    """Weighted quadratic data term 0.5 ||target - A x||^2_W."""

    op: object  # Projector or MatrixOperator
    weights: np.ndarray  # flat, per ray
    target: np.ndarray  # flat, per ray
    D_A: np.ndarray  # flat, per pixel

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        self.target = np.asarray(self.target, dtype=np.float64).ravel()
        self.D_A = np.asarray(self.D_A, dtype=np.float64).ravel()
        if np.any(self.weights < 0):
            raise ValueError("weights must be >= 0")
        if len(self.weights) != self.op.n_rays or len(self.target) != self.op.n_rays:
            raise ValueError("weights/target length must equal op.n_rays")


def compute_DA(op, weights: np.ndarray) -> np.ndarray:
    """diag{A^T W A 1}, floored so its inverse stays finite."""
    w = np.asarray(weights, dtype=np.float64).ravel()
    if np.any(w < 0):
        raise ValueError("weights must be >= 0")
    d = op.adjoint(w * op.forward(np.ones(op.n_pixels)))
    floor = 1e-12 * d.max() + 1e-300
    return np.maximum(d, floor)


def make_quadratic(op, weights, target) -> QuadraticProblem:
    return QuadraticProblem(op=op, weights=weights, target=target,
                            D_A=compute_DA(op, weights))


def spectral_norm(G: np.ndarray, tol: float = 1e-10, max_iters: int = 100000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    G = np.asarray(G, dtype=np.float64)
    d = G.shape[0]
    v = np.ones(d) / np.sqrt(d)
    lam = 0.0
    for _ in range(max_iters):
        w = G @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        lam_new = float(v @ (G @ v))
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            return lam_new
        lam = lam_new
    return lam


def compute_DR(
    beta: float,
    union: TransformUnion,
    tau,
    patch_cfg: PatchConfig,
    rows: int,
    cols: int,
) -> np.ndarray:
    """Diagonal majorizer of the union-of-transforms regularizer Hessian:
    2 beta max_k ||W_k^T W_k||_2 * diag(sum_j tau_j P_j^T P_j)."""
    if beta == 0:
        return np.zeros(rows * cols)
    spec = max(
        spectral_norm(union.transforms[k].T @ union.transforms[k])
        for k in range(union.K)
    )
    overlap = patch_overlap_counts(rows, cols, patch_cfg, tau)
    return 2.0 * beta * spec * overlap.ravel()


def os_lalm_update(
    x0: np.ndarray,
    problem: QuadraticProblem,
    reg_grad: Optional[Callable[[np.ndarray], np.ndarray]],
    D_R,
    cfg: OsLalmConfig,
) -> np.ndarray:
    """Run P passes of M ordered-subset relaxed LALM updates.

    Duals are initialized from the last subset; the iteration counter
    t = p*M + m drives the rho schedule.
    """
    op = problem.op
    W = problem.weights
    target = problem.target
    D_A = problem.D_A
    D_R = np.asarray(D_R, dtype=np.float64) if np.ndim(D_R) else float(D_R)
    alpha = cfg.alpha
    M = cfg.M

    groups = op.ray_groups(M)
    x = np.clip(np.asarray(x0, dtype=np.float64).ravel(), 0.0, cfg.x_max)

    def subset_grad(x_flat, m):
        idx = groups[m]
        r = op.forward_rays(x_flat, idx) - target[idx]
        return M * op.adjoint_rays(W[idx] * r, idx)

    zeta = subset_grad(x, M - 1)
    g = zeta.copy()
    eta = D_A * x - zeta

    if reg_grad is None:
        reg_grad = lambda v: 0.0

    t = 0
    for _ in range(cfg.P):
        for m in range(M):
            rho = rho_schedule(t, alpha)
            s = rho * (D_A * x - eta) + (1.0 - rho) * g
            x = np.clip(x - (s + reg_grad(x)) / (rho * D_A + D_R), 0.0, cfg.x_max)
            if not np.all(np.isfinite(x)):
                raise SolverDivergence(
                    f"non-finite iterate at inner iteration t={t}", last_finite=None
                )
            zeta = subset_grad(x, m)
            g = (rho * (alpha * zeta + (1.0 - alpha) * g) + g) / (rho + 1.0)
            eta = alpha * (D_A * x - zeta) + (1.0 - alpha) * eta
            t += 1
    return x


def kappa_from_projector(op, weights: np.ndarray) -> np.ndarray:
    """Resolution-uniformity weights sqrt([A^T W 1]_j / [A^T 1]_j),
    zero wherever A^T 1 vanishes."""
    w = np.asarray(weights, dtype=np.float64).ravel()
    num = op.adjoint(w)
    den = op.adjoint(np.ones(op.n_rays))
    kappa = np.zeros(op.n_pixels)
    nz = den > 0
    kappa[nz] = np.sqrt(np.maximum(num[nz], 0.0) / den[nz])
    return kappa


# ---------------------------------------------------------------------------
# Edge-preserving (hyperbola potential) regularizer


@dataclass(frozen=True)
class EpParams:
    beta: float
    delta_hu: float = 20.0
    kappa: Optional[np.ndarray] = None  # None: computed from the data; or per pixel
    use_kappa: bool = True

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError("beta must be >= 0")
        if not self.delta_hu > 0:
            raise ValueError("delta must be > 0")


_NEIGHBOR_OFFSETS = [
    (-1, -1), (-1, 0), (-1, 1),
    (0, -1), (0, 1),
    (1, -1), (1, 0), (1, 1),
]


def ep_potential(t: np.ndarray, delta: float) -> np.ndarray:
    """Hyperbola-style potential delta^2 (|t/delta| - log(1 + |t/delta|))."""
    a = np.abs(t) / delta
    return delta * delta * (a - np.log1p(a))


def ep_potential_grad(t: np.ndarray, delta: float) -> np.ndarray:
    return t / (1.0 + np.abs(t) / delta)


def _shifted(arr: np.ndarray, di: int, dj: int) -> np.ndarray:
    """Neighbor values with zeros outside the grid."""
    rows, cols = arr.shape
    out = np.zeros_like(arr)
    src = arr[
        max(0, -di): rows - max(0, di),
        max(0, -dj): cols - max(0, dj),
    ]
    out[
        max(0, di): rows - max(0, -di),
        max(0, dj): cols - max(0, -dj),
    ] = src
    return out


def ep_reg_value(x2d: np.ndarray, kappa2d: np.ndarray, delta: float) -> float:
    total = 0.0
    for di, dj in _NEIGHBOR_OFFSETS:
        xk = _shifted(x2d, di, dj)
        kk = _shifted(kappa2d, di, dj)
        total += float(np.sum(kappa2d * kk * ep_potential(x2d - xk, delta)))
    return total


def ep_reg_grad(x2d: np.ndarray, kappa2d: np.ndarray, delta: float, beta: float) -> np.ndarray:
    grad = np.zeros_like(x2d)
    for di, dj in _NEIGHBOR_OFFSETS:
        xk = _shifted(x2d, di, dj)
        kk = _shifted(kappa2d, di, dj)
        grad += kappa2d * kk * ep_potential_grad(x2d - xk, delta)
    return 2.0 * beta * grad


def ep_hessian_diag(kappa2d: np.ndarray, beta: float) -> np.ndarray:
    """Diagonal majorizer: curvature bound 1 and a factor 2 for the
    symmetric pair terms give 4 beta sum_k kappa_j kappa_k."""
    acc = np.zeros_like(kappa2d)
    for di, dj in _NEIGHBOR_OFFSETS:
        acc += kappa2d * _shifted(kappa2d, di, dj)
    return 4.0 * beta * acc


def _initial_image(meas: MeasurementSet, geom: Geometry, init: Optional[Image]) -> Image:
    if init is not None:
        if (init.rows, init.cols) != (geom.image_rows, geom.image_cols):
            raise ValueError("init image does not match geometry grid")
        return init
    sino = Sinogram(geom, meas.post_log, kind=LINE_INTEGRAL)
    img = fbp_reconstruct(sino, geom)
    img.values = np.clip(img.values, 0.0, None)
    return img


def pwls_ep_reconstruct(
    meas: MeasurementSet,
    geom: Geometry,
    ep: EpParams,
    cfg: OsLalmConfig,
    n_outer: int = 1,
    init: Optional[Image] = None,
    log: Optional[list] = None,
) -> Image:
    """Penalized weighted least squares with the edge-preserving prior.

    Runs ``n_outer`` image-update calls of P inner iterations each;
    duals are re-initialized per call.
    """
    img0 = _initial_image(meas, geom, init)
    mu_water = img0.mu_water
    delta = ep.delta_hu * mu_water / 1000.0
    op = Projector(geom)
    problem = make_quadratic(op, meas.weights.ravel(), meas.post_log.ravel())

    if not ep.use_kappa:
        kappa = np.ones(geom.n_pixels)
    elif ep.kappa is not None:
        kappa = np.asarray(ep.kappa, dtype=np.float64).ravel()
    else:
        kappa = kappa_from_projector(op, problem.weights)
    kappa2d = kappa.reshape(geom.image_rows, geom.image_cols)

    shape = (geom.image_rows, geom.image_cols)
    reg = (
        None
        if ep.beta == 0
        else (lambda v: ep_reg_grad(v.reshape(shape), kappa2d, delta, ep.beta).ravel())
    )
    D_R = 0.0 if ep.beta == 0 else ep_hessian_diag(kappa2d, ep.beta).ravel()

    x = img0.values.ravel()
    for it in range(n_outer):
        t0 = time.perf_counter()
        x = os_lalm_update(x, problem, reg, D_R, cfg)
        if log is not None:
            x2d = x.reshape(shape)
            obj = 0.5 * float(
                np.sum(problem.weights * (op.forward(x) - problem.target) ** 2)
            ) + ep.beta * ep_reg_value(x2d, kappa2d, delta)
            log.append(
                {"outer": it, "objective": obj, "seconds": time.perf_counter() - t0}
            )
    return Image(values=x.reshape(shape), mu_water=mu_water)


# ---------------------------------------------------------------------------
# Union-of-transforms regularized PWLS


@dataclass(frozen=True)
class UltraParams:
    beta: float
    gamma: float
    transforms: TransformUnion = None
    tau: np.ndarray | float = 1.0
    outer_iters: int = 4
    patch: PatchConfig = field(default_factory=PatchConfig)
    inner: OsLalmConfig = field(default_factory=OsLalmConfig)

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError("beta must be >= 0")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if np.any(np.asarray(self.tau) < 0):
            raise ValueError("tau must be >= 0")
        if self.outer_iters < 0:
            raise ValueError("outer_iters must be >= 0")


def ultra_reg_grad(
    x_flat: np.ndarray,
    assignment: CodeAssignment,
    union: TransformUnion,
    tau,
    beta: float,
    rows: int,
    cols: int,
) -> np.ndarray:
    """Gradient 2 beta sum_j tau_j P_j^T W_kj^T (W_kj P_j x - z_j)."""
    cfg = assignment.patch_cfg
    U = extract_patches(x_flat.reshape(rows, cols), cfg)
    V = np.empty_like(U)
    for k in range(union.K):
        sel = assignment.labels == k
        if np.any(sel):
            Wk = union.transforms[k]
            V[:, sel] = Wk.T @ (Wk @ U[:, sel] - assignment.codes[:, sel])
    out = assemble_weighted(V, cfg, rows, cols, tau)
    return 2.0 * beta * out.ravel()


def ultra_reg_value(
    x2d: np.ndarray,
    assignment: CodeAssignment,
    union: TransformUnion,
    tau,
    gamma: float,
) -> float:
    """sum_j tau_j (||W_kj P_j x - z_j||^2 + gamma^2 ||z_j||_0)."""
    cfg = assignment.patch_cfg
    U = extract_patches(x2d, cfg)
    n = U.shape[1]
    tau = np.broadcast_to(np.asarray(tau, dtype=np.float64), (n,))
    total = 0.0
    g2 = gamma * gamma
    for k in range(union.K):
        sel = assignment.labels == k
        if np.any(sel):
            resid = union.transforms[k] @ U[:, sel] - assignment.codes[:, sel]
            total += float(np.sum(tau[sel] * np.einsum("ij,ij->j", resid, resid)))
            total += g2 * float(
                np.sum(tau[sel] * np.count_nonzero(assignment.codes[:, sel], axis=0))
            )
    return total


def pwls_ultra_reconstruct(
    meas: MeasurementSet,
    geom: Geometry,
    params: UltraParams,
    init: Optional[Image] = None,
    log: Optional[list] = None,
) -> tuple[Image, CodeAssignment]:
    """Alternate joint sparse coding/clustering with OS-LALM image updates."""
    img0 = _initial_image(meas, geom, init)
    rows, cols = geom.image_rows, geom.image_cols
    op = Projector(geom)
    problem = make_quadratic(op, meas.weights.ravel(), meas.post_log.ravel())
    union = params.transforms
    if union is None:
        raise ValueError("UltraParams.transforms is required")
    if union.patch_side != params.patch.patch_side:
        raise ValueError("transform patch side does not match patch config")

    D_R = compute_DR(params.beta, union, params.tau, params.patch, rows, cols)
    x = img0.values.ravel()
    if params.outer_iters == 0:
        assignment = cluster_image(
            x.reshape(rows, cols), union, params.gamma, params.patch
        )
        return img0.copy(), assignment

    for it in range(params.outer_iters):
        t0 = time.perf_counter()
        assignment = cluster_image(
            x.reshape(rows, cols), union, params.gamma, params.patch
        )
        t_code = time.perf_counter() - t0
        reg = (
            None
            if params.beta == 0
            else (
                lambda v: ultra_reg_grad(
                    v, assignment, union, params.tau, params.beta, rows, cols
                )
            )
        )
        x = os_lalm_update(x, problem, reg, D_R, params.inner)
        if log is not None:
            data = 0.5 * float(
                np.sum(problem.weights * (op.forward(x) - problem.target) ** 2)
            )
            regv = params.beta * ultra_reg_value(
                x.reshape(rows, cols), assignment, union, params.tau, params.gamma
            )
            log.append(
                {
                    "outer": it,
                    "objective": data + regv,
                    "seconds": time.perf_counter() - t0,
                    "seconds_coding": t_code,
                }
            )

    assignment = cluster_image(x.reshape(rows, cols), union, params.gamma, params.patch)
    return Image(values=x.reshape(rows, cols), mu_water=img0.mu_water), assignment
