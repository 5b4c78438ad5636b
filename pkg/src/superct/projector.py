"""Exact-ray forward projector and its matched adjoint.

Rays are traced through the pixel grid with Siddon-style incremental
traversal; the backprojector revisits the identical cells with the
identical intersection lengths, so <Ax, y> == <x, A^T y> holds to
floating-point rounding.

Internally rays live in "array coordinates": u = x/pixel + cols/2
(u in [0, cols]) and v = rows/2 - y/pixel (v in [0, rows], row 0 on
top).  Segment lengths in (u, v) space times pixel_size are physical
lengths in mm.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .geometry import (
    FAN_ARC,
    LINE_INTEGRAL,
    PARALLEL,
    Geometry,
    Image,
    Sinogram,
)


@njit(cache=True)
def _forward_kernel(rays, img, rows, cols, pixel_size, out):
    n = rays.shape[0]
    for r in range(n):
        u0 = rays[r, 0]
        v0 = rays[r, 1]
        u1 = rays[r, 2]
        v1 = rays[r, 3]
        du = u1 - u0
        dv = v1 - v0
        ray_len = np.sqrt(du * du + dv * dv) * pixel_size

        # Clip the parameter interval [0, 1] against the grid slabs.
        tmin = 0.0
        tmax = 1.0
        if du != 0.0:
            ta = (0.0 - u0) / du
            tb = (cols - u0) / du
            if ta > tb:
                ta, tb = tb, ta
            if ta > tmin:
                tmin = ta
            if tb < tmax:
                tmax = tb
        elif u0 < 0.0 or u0 >= cols:
            out[r] = 0.0
            continue
        if dv != 0.0:
            ta = (0.0 - v0) / dv
            tb = (rows - v0) / dv
            if ta > tb:
                ta, tb = tb, ta
            if ta > tmin:
                tmin = ta
            if tb < tmax:
                tmax = tb
        elif v0 < 0.0 or v0 >= rows:
            out[r] = 0.0
            continue
        if tmax <= tmin:
            out[r] = 0.0
            continue

        ue = u0 + tmin * du
        ve = v0 + tmin * dv
        if du > 0.0:
            iu = int(np.floor(ue))
            if iu > cols - 1:
                iu = cols - 1
            tx = (iu + 1 - u0) / du
            su = 1
            dtx = 1.0 / du
        elif du < 0.0:
            iu = int(np.ceil(ue)) - 1
            if iu < 0:
                iu = 0
            tx = (iu - u0) / du
            su = -1
            dtx = -1.0 / du
        else:
            iu = int(np.floor(ue))
            tx = np.inf
            su = 0
            dtx = np.inf
        if dv > 0.0:
            iv = int(np.floor(ve))
            if iv > rows - 1:
                iv = rows - 1
            ty = (iv + 1 - v0) / dv
            sv = 1
            dty = 1.0 / dv
        elif dv < 0.0:
            iv = int(np.ceil(ve)) - 1
            if iv < 0:
                iv = 0
            ty = (iv - v0) / dv
            sv = -1
            dty = -1.0 / dv
        else:
            iv = int(np.floor(ve))
            ty = np.inf
            sv = 0
            dty = np.inf

        acc = 0.0
        t = tmin
        while t < tmax:
            tn = tx if tx < ty else ty
            if tn > tmax:
                tn = tmax
            seg = tn - t
            if seg > 0.0 and 0 <= iu < cols and 0 <= iv < rows:
                acc += img[iv, iu] * seg
            if tn >= tmax:
                break
            if tx <= tn:
                iu += su
                tx += dtx
            if ty <= tn:
                iv += sv
                ty += dty
            t = tn
        out[r] = acc * ray_len


@njit(cache=True)
def _back_kernel(rays, values, rows, cols, pixel_size, img):
    # Identical traversal to _forward_kernel so the pair stays matched.
    n = rays.shape[0]
    for r in range(n):
        val = values[r]
        u0 = rays[r, 0]
        v0 = rays[r, 1]
        u1 = rays[r, 2]
        v1 = rays[r, 3]
        du = u1 - u0
        dv = v1 - v0
        ray_len = np.sqrt(du * du + dv * dv) * pixel_size

        tmin = 0.0
        tmax = 1.0
        if du != 0.0:
            ta = (0.0 - u0) / du
            tb = (cols - u0) / du
            if ta > tb:
                ta, tb = tb, ta
            if ta > tmin:
                tmin = ta
            if tb < tmax:
                tmax = tb
        elif u0 < 0.0 or u0 >= cols:
            continue
        if dv != 0.0:
            ta = (0.0 - v0) / dv
            tb = (rows - v0) / dv
            if ta > tb:
                ta, tb = tb, ta
            if ta > tmin:
                tmin = ta
            if tb < tmax:
                tmax = tb
        elif v0 < 0.0 or v0 >= rows:
            continue
        if tmax <= tmin:
            continue

        ue = u0 + tmin * du
        ve = v0 + tmin * dv
        if du > 0.0:
            iu = int(np.floor(ue))
            if iu > cols - 1:
                iu = cols - 1
            tx = (iu + 1 - u0) / du
            su = 1
            dtx = 1.0 / du
        elif du < 0.0:
            iu = int(np.ceil(ue)) - 1
            if iu < 0:
                iu = 0
            tx = (iu - u0) / du
            su = -1
            dtx = -1.0 / du
        else:
            iu = int(np.floor(ue))
            tx = np.inf
            su = 0
            dtx = np.inf
        if dv > 0.0:
            iv = int(np.floor(ve))
            if iv > rows - 1:
                iv = rows - 1
            ty = (iv + 1 - v0) / dv
            sv = 1
            dty = 1.0 / dv
        elif dv < 0.0:
            iv = int(np.ceil(ve)) - 1
            if iv < 0:
                iv = 0
            ty = (iv - v0) / dv
            sv = -1
            dty = -1.0 / dv
        else:
            iv = int(np.floor(ve))
            ty = np.inf
            sv = 0
            dty = np.inf

        t = tmin
        while t < tmax:
            tn = tx if tx < ty else ty
            if tn > tmax:
                tn = tmax
            seg = tn - t
            if seg > 0.0 and 0 <= iu < cols and 0 <= iv < rows:
                img[iv, iu] += val * (seg * ray_len)
            if tn >= tmax:
                break
            if tx <= tn:
                iu += su
                tx += dtx
            if ty <= tn:
                iv += sv
                ty += dty
            t = tn


def _ray_endpoints(geom: Geometry) -> np.ndarray:
    """(n_rays, 4) array of (u0, v0, u1, v1) per ray, view-major order."""
    rows, cols = geom.image_rows, geom.image_cols
    delta = geom.pixel_size
    half_diag = geom.image_diagonal / 2
    angles = geom.view_angles
    bins = np.arange(geom.n_bins) - (geom.n_bins - 1) / 2.0

    if geom.kind == PARALLEL:
        t = bins * geom.detector_bin_spacing  # detector coordinate, mm
        cos_a = np.cos(angles)[:, None]
        sin_a = np.sin(angles)[:, None]
        # Ray through point t*(cos a, sin a) with direction (-sin a, cos a),
        # extended by +-L so every ray fully crosses the grid.
        L = half_diag + delta
        px = t[None, :] * cos_a
        py = t[None, :] * sin_a
        x0 = px + L * sin_a
        y0 = py - L * cos_a
        x1 = px - L * sin_a
        y1 = py + L * cos_a
    elif geom.kind == FAN_ARC:
        gamma = bins * geom.detector_bin_spacing  # fan angle, radians
        sx = -geom.source_to_iso * np.sin(angles)[:, None]
        sy = geom.source_to_iso * np.cos(angles)[:, None]
        # Unit direction from source toward iso rotated by the fan angle.
        phi = angles[:, None] + gamma[None, :]
        dx = np.sin(phi)
        dy = -np.cos(phi)
        reach = geom.source_to_iso + half_diag + delta
        x0 = np.broadcast_to(sx, phi.shape)
        y0 = np.broadcast_to(sy, phi.shape)
        x1 = sx + reach * dx
        y1 = sy + reach * dy
    else:  # pragma: no cover - guarded by Geometry validation
        raise ValueError(geom.kind)

    rays = np.empty((geom.n_rays, 4))
    rays[:, 0] = (x0 / delta + cols / 2.0).ravel()
    rays[:, 1] = (rows / 2.0 - y0 / delta).ravel()
    rays[:, 2] = (x1 / delta + cols / 2.0).ravel()
    rays[:, 3] = (rows / 2.0 - y1 / delta).ravel()
    return rays


class Projector:
    """Matched projector pair for a geometry, operating on flat vectors.

    Views can be partitioned into M interleaved ordered subsets; subset
    m holds views m, m+M, m+2M, ...
    """

    def __init__(self, geom: Geometry):
        self.geom = geom
        self._rays = _ray_endpoints(geom)
        self.n_rays = geom.n_rays
        self.n_pixels = geom.n_pixels

    def forward(self, x_flat: np.ndarray) -> np.ndarray:
        img = np.ascontiguousarray(
            x_flat.reshape(self.geom.image_rows, self.geom.image_cols)
        )
        out = np.empty(self.n_rays)
        _forward_kernel(
            self._rays, img, self.geom.image_rows, self.geom.image_cols,
            self.geom.pixel_size, out,
        )
        return out

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        img = np.zeros((self.geom.image_rows, self.geom.image_cols))
        _back_kernel(
            self._rays, np.ascontiguousarray(y, dtype=np.float64).ravel(),
            self.geom.image_rows, self.geom.image_cols, self.geom.pixel_size, img,
        )
        return img.ravel()

    def ray_groups(self, n_subsets: int) -> list[np.ndarray]:
        """Ray indices of each interleaved view subset."""
        if not 1 <= n_subsets <= self.geom.n_views:
            raise ValueError("subset count must be in [1, n_views]")
        nb = self.geom.n_bins
        groups = []
        for m in range(n_subsets):
            views = np.arange(m, self.geom.n_views, n_subsets)
            idx = (views[:, None] * nb + np.arange(nb)[None, :]).ravel()
            groups.append(idx)
        return groups

    def forward_rays(self, x_flat: np.ndarray, ray_idx: np.ndarray) -> np.ndarray:
        img = np.ascontiguousarray(
            x_flat.reshape(self.geom.image_rows, self.geom.image_cols)
        )
        out = np.empty(len(ray_idx))
        _forward_kernel(
            np.ascontiguousarray(self._rays[ray_idx]), img,
            self.geom.image_rows, self.geom.image_cols, self.geom.pixel_size, out,
        )
        return out

    def adjoint_rays(self, values: np.ndarray, ray_idx: np.ndarray) -> np.ndarray:
        img = np.zeros((self.geom.image_rows, self.geom.image_cols))
        _back_kernel(
            np.ascontiguousarray(self._rays[ray_idx]),
            np.ascontiguousarray(values, dtype=np.float64).ravel(),
            self.geom.image_rows, self.geom.image_cols, self.geom.pixel_size, img,
        )
        return img.ravel()


class MatrixOperator:
    """Dense-matrix stand-in for the projector (small synthetic systems).

    Rows play the role of rays; ordered subsets interleave rows.
    """

    def __init__(self, A: np.ndarray):
        self.A = np.asarray(A, dtype=np.float64)
        if self.A.ndim != 2:
            raise ValueError("matrix operator needs a 2-D array")
        self.n_rays, self.n_pixels = self.A.shape

    def forward(self, x_flat):
        return self.A @ x_flat

    def adjoint(self, y):
        return self.A.T @ y

    def ray_groups(self, n_subsets: int) -> list[np.ndarray]:
        if not 1 <= n_subsets <= self.n_rays:
            raise ValueError("subset count must be in [1, n_rows]")
        return [np.arange(m, self.n_rays, n_subsets) for m in range(n_subsets)]

    def forward_rays(self, x_flat, ray_idx):
        return self.A[ray_idx] @ x_flat

    def adjoint_rays(self, values, ray_idx):
        return self.A[ray_idx].T @ values


def forward_project(image: Image, geom: Geometry) -> Sinogram:
    """Line integrals of the image along every geometry ray."""
    if (image.rows, image.cols) != (geom.image_rows, geom.image_cols):
        raise ValueError(
            f"image {image.rows}x{image.cols} does not match geometry grid "
            f"{geom.image_rows}x{geom.image_cols}"
        )
    proj = Projector(geom)
    vals = proj.forward(image.values.ravel()).reshape(geom.n_views, geom.n_bins)
    return Sinogram(geometry=geom, values=vals, kind=LINE_INTEGRAL)


def back_project(sino: Sinogram, geom: Geometry) -> Image:
    """Exact adjoint of :func:`forward_project`."""
    if sino.kind != LINE_INTEGRAL:
        raise ValueError("back_project expects a line-integral sinogram")
    if (sino.geometry.n_views, sino.geometry.n_bins) != (geom.n_views, geom.n_bins):
        raise ValueError("sinogram does not match geometry")
    proj = Projector(geom)
    img = proj.adjoint(sino.values.ravel())
    return Image(values=img.reshape(geom.image_rows, geom.image_cols))
