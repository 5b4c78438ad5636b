import numpy as np
import pytest

from conftest import disk_image
from superct.geometry import Image, Sinogram, fan_beam, parallel_beam
from superct.projector import (
    MatrixOperator,
    Projector,
    back_project,
    forward_project,
)


def test_zero_image_projects_to_zero(small_parallel):
    img = Image(np.zeros((32, 32)))
    sino = forward_project(img, small_parallel)
    assert np.all(sino.values == 0.0)


def test_single_pixel_axis_aligned_ray_gives_pixel_size():
    g = parallel_beam(1, 3, 3, 3, 2.0)
    img = np.zeros((3, 3))
    img[1, 1] = 1.0
    sino = forward_project(Image(img), g)
    assert sino.values[0] == pytest.approx([0.0, 2.0, 0.0], abs=1e-14)


def test_disk_central_chord():
    img = disk_image(rows=256, cols=256, pixel_size=0.5, radius=40.0, mu=0.02)
    g = parallel_beam(4, 257, 256, 256, 0.5)
    sino = forward_project(img, g)
    expect = 2 * 40.0 * 0.02
    for v in range(4):
        assert sino.values[v, 128] == pytest.approx(expect, rel=0.01)


def test_linearity(small_parallel, rng):
    proj = Projector(small_parallel)
    x1 = rng.normal(size=proj.n_pixels)
    x2 = rng.normal(size=proj.n_pixels)
    a, b = 1.7, -0.3
    lhs = proj.forward(a * x1 + b * x2)
    rhs = a * proj.forward(x1) + b * proj.forward(x2)
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * max(np.linalg.norm(rhs), 1.0)


@pytest.mark.parametrize("kind", ["parallel", "fan"])
def test_adjoint_identity_100_pairs(kind):
    if kind == "parallel":
        g = parallel_beam(60, 48, 32, 32, 1.0)
    else:
        g = fan_beam(60, 48, 32, 32, 1.0, source_to_iso=60.0, source_to_detector=100.0)
    proj = Projector(g)
    rng = np.random.default_rng(7)
    for _ in range(100):
        x = rng.normal(size=proj.n_pixels)
        y = rng.normal(size=proj.n_rays)
        ax = proj.forward(x)
        err = abs(ax @ y - x @ proj.adjoint(y))
        assert err < 1e-10 * np.linalg.norm(ax) * np.linalg.norm(y)


def test_nonnegativity_preserved(small_parallel, rng):
    proj = Projector(small_parallel)
    x = rng.uniform(0.0, 1.0, size=proj.n_pixels)
    assert np.all(proj.forward(x) >= 0.0)
    y = rng.uniform(0.0, 1.0, size=proj.n_rays)
    assert np.all(proj.adjoint(y) >= 0.0)


def test_zero_sinogram_backprojects_to_zero(small_parallel):
    s = Sinogram(small_parallel, np.zeros((60, 48)))
    img = back_project(s, small_parallel)
    assert np.all(img.values == 0.0)


def test_one_hot_sinogram_supported_on_one_ray(small_parallel):
    proj = Projector(small_parallel)
    y = np.zeros(proj.n_rays)
    ray = 17 * 48 + 20
    y[ray] = 1.0
    img = proj.adjoint(y)
    support = img > 0
    # backprojection of one ray touches only pixels that ray intersects
    x = np.zeros(proj.n_pixels)
    x[support] = 1.0
    assert proj.forward(x)[ray] > 0
    # pixels off the ray stay zero: projecting the complement misses the ray
    x2 = np.ones(proj.n_pixels)
    x2[support] = 0.0
    assert proj.forward(x2)[ray] == pytest.approx(0.0, abs=1e-12)
    assert 0 < support.sum() <= 2 * 32  # a line crosses O(n) pixels


def test_dimension_mismatch_errors(small_parallel):
    bad = Image(np.zeros((16, 16)))
    with pytest.raises(ValueError, match="does not match"):
        forward_project(bad, small_parallel)
    other = parallel_beam(10, 12, 32, 32, 1.0)
    s = Sinogram(other, np.zeros((10, 12)))
    with pytest.raises(ValueError, match="match"):
        back_project(s, small_parallel)
    with pytest.raises(ValueError, match="line-integral"):
        back_project(Sinogram(small_parallel, np.zeros((60, 48)), kind="counts"),
                     small_parallel)


def test_ray_fully_outside_grid_contributes_zero():
    # detector far wider than the image: edge rays miss the grid
    g = parallel_beam(2, 201, 16, 16, 1.0, bin_spacing=1.0)
    img = Image(np.ones((16, 16)))
    sino = forward_project(img, g)
    assert sino.values[0, 0] == 0.0
    assert sino.values[0, -1] == 0.0
    assert sino.values[0, 100] > 0.0


def test_subset_groups_partition_rays(small_parallel):
    proj = Projector(small_parallel)
    groups = proj.ray_groups(4)
    all_idx = np.sort(np.concatenate(groups))
    assert np.array_equal(all_idx, np.arange(proj.n_rays))
    x = np.random.default_rng(0).uniform(size=proj.n_pixels)
    full = proj.forward(x)
    for g_idx in groups:
        assert np.allclose(proj.forward_rays(x, g_idx), full[g_idx], rtol=0, atol=0)


def test_matrix_operator_matches_dense(rng):
    A = rng.normal(size=(12, 5))
    op = MatrixOperator(A)
    x = rng.normal(size=5)
    y = rng.normal(size=12)
    assert np.allclose(op.forward(x), A @ x)
    assert np.allclose(op.adjoint(y), A.T @ y)
    groups = op.ray_groups(3)
    assert np.array_equal(np.sort(np.concatenate(groups)), np.arange(12))
    assert np.allclose(op.forward_rays(x, groups[1]), (A @ x)[groups[1]])
