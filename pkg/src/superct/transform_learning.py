"""Learning a union of square sparsifying transforms from patches.

The learning objective over transforms {W_k}, codes {z_i} and a
partition {C_k} of the patches is

    sum_k sum_{i in C_k} ( ||W_k x_i - z_i||^2 + eta ||z_i||_0 )
        + sum_k lambda_k (||W_k||_F^2 - log|det W_k|),

with lambda_k = lambda0 * sum_{i in C_k} ||x_i||^2.  Each iteration
exactly minimizes over the transforms (closed form) and then jointly
over codes and memberships, so the objective never increases.  Because
lambda_k depends on the memberships, the per-patch clustering cost
includes the lambda0 ||x_i||^2 Q(W_k) term; dropping it would let the
cluster step increase the objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.fft
import scipy.linalg

from .patches import PatchConfig, TransformUnion, coding_costs, hard_threshold


def q_penalty(omega: np.ndarray) -> float:
    """Frobenius + negative log-determinant regularizer of a transform.

    Returns +inf for singular matrices.
    """
    omega = np.asarray(omega, dtype=np.float64)
    if omega.ndim != 2 or omega.shape[0] != omega.shape[1]:
        raise ValueError("q_penalty needs a square matrix")
    sign, logdet = np.linalg.slogdet(omega)
    if sign == 0:
        return np.inf
    return float(np.sum(omega * omega) - logdet)


def dct_matrix_2d(side: int) -> np.ndarray:
    """Orthonormal 2-D DCT operating on row-major vectorized patches."""
    d1 = scipy.fft.dct(np.eye(side), axis=0, norm="ortho")
    return np.kron(d1, d1)


def transform_update(X: np.ndarray, Z: np.ndarray, lam: float) -> np.ndarray:
    """Closed-form minimizer of ||W X - Z||_F^2 + lam (||W||_F^2 - log|det W|).

    Factor X X^T + lam I = L L^T, take the SVD of L^{-1} X Z^T = U S V^T,
    and return 0.5 V (S + (S^2 + 2 lam I)^{1/2}) U^T L^{-1}.
    """
    X = np.asarray(X, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    if X.size == 0:
        raise ValueError("transform_update needs a nonempty patch matrix")
    if lam <= 0:
        raise ValueError("lam must be > 0")
    d = X.shape[0]
    M = X @ X.T + lam * np.eye(d)
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"factorization of X X^T + lam I failed (lam={lam:g}, "
            f"cond~{np.linalg.cond(M):.3e})"
        ) from exc
    Linv = scipy.linalg.solve_triangular(L, np.eye(d), lower=True)
    U, S, Vt = np.linalg.svd(Linv @ (X @ Z.T))
    mid = 0.5 * (S + np.sqrt(S * S + 2.0 * lam))
    return (Vt.T * mid) @ U.T @ Linv


@dataclass(frozen=True)
class LearnConfig:
    K: int = 5
    eta: Optional[float] = None  # None: (0.1 * patch dynamic range)^2
    lambda0: float = 31.0
    n_iters: int = 50
    seed: int = 0
    patch: PatchConfig = field(default_factory=PatchConfig)

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.eta is not None and not self.eta > 0:
            raise ValueError("eta must be > 0")
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be > 0")
        if self.n_iters < 1:
            raise ValueError("n_iters must be >= 1")


@dataclass
class LearnState:
    union: TransformUnion
    labels: np.ndarray
    codes: np.ndarray
    objective: list[float]
    eta: float
    reseed_events: int = 0


def learning_objective(
    patches: np.ndarray,
    transforms: np.ndarray,
    labels: np.ndarray,
    codes: np.ndarray,
    eta: float,
    lambda0: float,
) -> float:
    """Full learning objective, recomputed from scratch."""
    total = 0.0
    norms2 = np.einsum("ij,ij->j", patches, patches)
    for k in range(transforms.shape[0]):
        sel = labels == k
        lam_k = lambda0 * float(norms2[sel].sum())
        if np.any(sel):
            resid = transforms[k] @ patches[:, sel] - codes[:, sel]
            total += float(np.sum(resid * resid))
            total += eta * int(np.count_nonzero(codes[:, sel]))
        if lam_k > 0:
            total += lam_k * q_penalty(transforms[k])
    return total


def learn_union(
    patches: np.ndarray, cfg: LearnConfig, return_state: bool = False
):
    """Alternating minimization for the union-of-transforms model.

    ``patches`` is (patch_dim, n_patches).  Transforms start from the
    2-D DCT with uniformly random initial memberships; empty classes
    keep their transform and are re-seeded with the worst-coded 1% of
    patches on the next pass.
    """
    patches = np.asarray(patches, dtype=np.float64)
    d, n = patches.shape
    if d != cfg.patch.dim:
        raise ValueError(f"patch dim {d} != configured {cfg.patch.dim}")
    if n < cfg.K * d:
        raise ValueError(f"need at least K*d = {cfg.K * d} patches, got {n}")
    if not np.all(np.isfinite(patches)):
        raise ValueError("patches must be finite")

    eta = cfg.eta
    if eta is None:
        dyn = float(patches.max() - patches.min())
        if dyn <= 0:
            raise ValueError("constant patches need an explicit eta")
        eta = (0.1 * dyn) ** 2
    gamma = np.sqrt(eta)

    rng = np.random.default_rng(cfg.seed)
    labels = rng.integers(0, cfg.K, size=n)
    transforms = np.repeat(dct_matrix_2d(cfg.patch.patch_side)[None], cfg.K, axis=0)
    codes = np.empty_like(patches)
    for k in range(cfg.K):
        sel = labels == k
        if np.any(sel):
            codes[:, sel] = hard_threshold(transforms[k] @ patches[:, sel], gamma)

    norms2 = np.einsum("ij,ij->j", patches, patches)
    history: list[float] = []
    reseeds = 0
    pending_empty: list[int] = []

    for _ in range(cfg.n_iters):
        # Transform update, one class at a time (empty classes keep W_k).
        for k in range(cfg.K):
            sel = labels == k
            if not np.any(sel):
                continue
            lam_k = cfg.lambda0 * float(norms2[sel].sum())
            transforms[k] = transform_update(patches[:, sel], codes[:, sel], lam_k)

        # Joint sparse coding and clustering; the q-penalty share of each
        # patch rides along so this step exactly minimizes the objective.
        costs = coding_costs(patches, TransformUnion(transforms, cfg.patch.patch_side), gamma)
        q_vals = np.array([q_penalty(transforms[k]) for k in range(cfg.K)])
        labels = np.argmin(costs + cfg.lambda0 * q_vals[:, None] * norms2[None, :], axis=0)

        # Re-seed classes that came up empty on the previous pass.
        if pending_empty:
            assigned = costs[labels, np.arange(n)]
            n_seed = max(1, n // 100)
            for k in pending_empty:
                worst = np.argsort(assigned)[-n_seed:]
                labels[worst] = k
                assigned[worst] = -np.inf  # do not hand the same patches twice
                reseeds += 1
        for k in range(cfg.K):
            sel = labels == k
            if np.any(sel):
                codes[:, sel] = hard_threshold(transforms[k] @ patches[:, sel], gamma)
        pending_empty = [k for k in range(cfg.K) if not np.any(labels == k)]

        history.append(
            learning_objective(patches, transforms, labels, codes, eta, cfg.lambda0)
        )

    union = TransformUnion(transforms=transforms.copy(), patch_side=cfg.patch.patch_side)
    if return_state:
        state = LearnState(
            union=union,
            labels=labels.copy(),
            codes=codes.copy(),
            objective=history,
            eta=eta,
            reseed_events=reseeds,
        )
        return union, state
    return union
