"""Patch extraction/assembly, hard thresholding, and joint sparse
coding + clustering over a union of square sparsifying transforms.

Patches are taken fully inside the image (no wrap), vectorized
row-major, one column per patch, in raster order of their top-left
corners.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class PatchConfig:
    patch_side: int = 8
    stride: int = 1

    def __post_init__(self):
        if self.patch_side < 1:
            raise ValueError("patch_side must be >= 1")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    @property
    def dim(self) -> int:
        return self.patch_side * self.patch_side

    def grid(self, rows: int, cols: int) -> tuple[int, int]:
        """Number of patch positions along each axis."""
        if rows < self.patch_side or cols < self.patch_side:
            raise ValueError(
                f"image {rows}x{cols} smaller than patch side {self.patch_side}"
            )
        nr = -(-(rows - self.patch_side + 1) // self.stride)
        nc = -(-(cols - self.patch_side + 1) // self.stride)
        return nr, nc

    def n_patches(self, rows: int, cols: int) -> int:
        nr, nc = self.grid(rows, cols)
        return nr * nc


def extract_patches(values: np.ndarray, cfg: PatchConfig) -> np.ndarray:
    """All patches of a 2-D array as a (patch_dim, n_patches) matrix."""
    values = np.asarray(values, dtype=np.float64)
    rows, cols = values.shape
    nr, nc = cfg.grid(rows, cols)
    side = cfg.patch_side
    windows = np.lib.stride_tricks.sliding_window_view(values, (side, side))
    windows = windows[:: cfg.stride, :: cfg.stride]
    return windows.reshape(nr * nc, side * side).T.copy()


def _flat_indices(rows: int, cols: int, cfg: PatchConfig) -> np.ndarray:
    """(patch_dim, n_patches) flat pixel index of each patch entry."""
    nr, nc = cfg.grid(rows, cols)
    side = cfg.patch_side
    r0 = np.arange(nr) * cfg.stride
    c0 = np.arange(nc) * cfg.stride
    rr = (r0[:, None] + np.arange(side)[None, :]).reshape(nr, 1, side, 1)
    cc = (c0[:, None] + np.arange(side)[None, :]).reshape(1, nc, 1, side)
    flat = rr * cols + cc  # (nr, nc, side, side)
    return np.broadcast_to(flat, (nr, nc, side, side)).reshape(nr * nc, side * side).T


def assemble_weighted(
    vectors: np.ndarray,
    cfg: PatchConfig,
    rows: int,
    cols: int,
    tau: np.ndarray | float = 1.0,
) -> np.ndarray:
    """Overlap-add transpose of :func:`extract_patches` with per-patch
    weights: sum_j tau_j P_j^T v_j."""
    vectors = np.asarray(vectors, dtype=np.float64)
    n = cfg.n_patches(rows, cols)
    if vectors.shape != (cfg.dim, n):
        raise ValueError(f"expected ({cfg.dim}, {n}) patch vectors, got {vectors.shape}")
    tau = np.broadcast_to(np.asarray(tau, dtype=np.float64), (n,))
    flat = _flat_indices(rows, cols, cfg)
    out = np.bincount(
        flat.ravel(), weights=(vectors * tau[None, :]).ravel(), minlength=rows * cols
    )
    return out.reshape(rows, cols)


def patch_overlap_counts(
    rows: int, cols: int, cfg: PatchConfig, tau: np.ndarray | float = 1.0
) -> np.ndarray:
    """Diagonal of sum_j tau_j P_j^T P_j as an image."""
    n = cfg.n_patches(rows, cols)
    return assemble_weighted(np.ones((cfg.dim, n)), cfg, rows, cols, tau)


def hard_threshold(v: np.ndarray, gamma: float) -> np.ndarray:
    """Zero entries with magnitude strictly smaller than gamma.

    Ties at |v| == gamma are kept.
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    v = np.asarray(v)
    return np.where(np.abs(v) >= gamma, v, 0.0)


@dataclass
class TransformUnion:
    """K square sparsifying transforms over vectorized patches."""

    transforms: np.ndarray  # (K, d, d)
    patch_side: int

    def __post_init__(self):
        self.transforms = np.asarray(self.transforms, dtype=np.float64)
        if self.transforms.ndim != 3:
            raise ValueError("transforms must be a (K, d, d) array")
        k, d1, d2 = self.transforms.shape
        if d1 != d2:
            raise ValueError("each transform must be square")
        if d1 != self.patch_side**2:
            raise ValueError("transform side must equal patch_side^2")
        if not np.all(np.isfinite(self.transforms)):
            raise ValueError("transforms must be finite")
        for i in range(k):
            sign, _ = np.linalg.slogdet(self.transforms[i])
            if sign == 0:
                raise ValueError(f"transform {i} is singular")

    @property
    def K(self) -> int:
        return self.transforms.shape[0]

    @property
    def dim(self) -> int:
        return self.transforms.shape[1]


@dataclass
class CodeAssignment:
    """Per-patch class labels, sparse codes, and coding costs."""

    labels: np.ndarray  # (n_patches,) in [0, K)
    codes: np.ndarray  # (d, n_patches)
    costs: np.ndarray  # (n_patches,)
    patch_cfg: PatchConfig = field(default_factory=PatchConfig)


def coding_costs(
    patches: np.ndarray, union: TransformUnion, gamma: float
) -> np.ndarray:
    """(K, n_patches) matrix of sparsification costs
    ||Wk u - H(Wk u)||^2 + gamma^2 ||H(Wk u)||_0 for every class."""
    patches = np.atleast_2d(np.asarray(patches, dtype=np.float64))
    if patches.shape[0] != union.dim:
        raise ValueError(f"patch dim {patches.shape[0]} != transform dim {union.dim}")
    n = patches.shape[1]
    costs = np.empty((union.K, n))
    g2 = gamma * gamma
    for k in range(union.K):
        c = union.transforms[k] @ patches
        keep = np.abs(c) >= gamma
        resid = np.where(keep, 0.0, c)
        costs[k] = np.einsum("ij,ij->j", resid, resid) + g2 * keep.sum(axis=0)
    return costs


def code_and_cluster(
    patches: np.ndarray, union: TransformUnion, gamma: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Jointly pick the best class and sparse code for each patch.

    Returns ``(labels, codes, costs)``; ties go to the smallest class
    index.  A 1-D input is treated as a single patch (outputs keep the
    trailing patch axis of size one).
    """
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim == 1:
        patches = patches[:, None]
    costs = coding_costs(patches, union, gamma)
    labels = np.argmin(costs, axis=0)
    best = costs[labels, np.arange(patches.shape[1])]
    codes = np.empty_like(patches)
    for k in range(union.K):
        sel = labels == k
        if np.any(sel):
            codes[:, sel] = hard_threshold(union.transforms[k] @ patches[:, sel], gamma)
    return labels, codes, best


def cluster_image(
    values: np.ndarray, union: TransformUnion, gamma: float, cfg: PatchConfig
) -> CodeAssignment:
    """Code and cluster every patch of an image."""
    patches = extract_patches(values, cfg)
    labels, codes, costs = code_and_cluster(patches, union, gamma)
    return CodeAssignment(labels=labels, codes=codes, costs=costs, patch_cfg=cfg)


def majority_vote_map(
    assignment: CodeAssignment, rows: int, cols: int, n_classes: int | None = None
) -> np.ndarray:
    """Per-pixel class label by majority vote among overlapping patches.

    Ties break toward the lowest class index; pixels covered by no
    patch get label -1.
    """
    cfg = assignment.patch_cfg
    k_max = n_classes or (int(assignment.labels.max()) + 1 if assignment.labels.size else 1)
    votes = np.zeros((k_max, rows * cols))
    flat = _flat_indices(rows, cols, cfg)
    for k in range(k_max):
        sel = assignment.labels == k
        if np.any(sel):
            votes[k] = np.bincount(
                flat[:, sel].ravel(), minlength=rows * cols
            )
    covered = votes.sum(axis=0) > 0
    winner = np.argmax(votes, axis=0)
    return np.where(covered, winner, -1).reshape(rows, cols)
