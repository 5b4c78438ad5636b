import numpy as np
import pytest

from superct.geometry import (
    Geometry,
    Image,
    Sinogram,
    fan_beam,
    parallel_beam,
)


def test_parallel_factory_basics():
    g = parallel_beam(90, 64, 32, 48, 1.5)
    assert g.n_rays == 90 * 64
    assert g.n_pixels == 32 * 48
    assert g.view_angles[0] == 0.0
    assert np.all(np.diff(g.view_angles) > 0)
    assert g.view_angles[-1] < np.pi


def test_fan_factory_covers_fov():
    g = fan_beam(30, 40, 32, 32, 1.0, source_to_iso=60.0, source_to_detector=110.0)
    half_fan = g.n_bins * g.detector_bin_spacing / 2
    assert np.sin(half_fan) * g.source_to_iso > g.image_diagonal / 2


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n_views=0, n_bins=4),
        dict(n_views=4, n_bins=0),
        dict(n_views=4, n_bins=4, pixel_size=-1.0),
    ],
)
def test_invalid_counts_rejected(kwargs):
    base = dict(n_views=4, n_bins=4, image_rows=8, image_cols=8, pixel_size=1.0)
    base.update(kwargs)
    with pytest.raises(ValueError):
        parallel_beam(**base)


def test_fan_source_inside_support_rejected():
    with pytest.raises(ValueError, match="outside the object support"):
        fan_beam(8, 8, 64, 64, 1.0, source_to_iso=30.0, source_to_detector=80.0)
    with pytest.raises(ValueError):
        fan_beam(8, 8, 16, 16, 1.0, source_to_iso=100.0, source_to_detector=90.0)


def test_angles_must_increase_within_two_pi():
    angles = np.array([0.0, 0.5, 0.4, 1.0])
    with pytest.raises(ValueError, match="strictly increasing"):
        Geometry(
            kind="parallel", n_views=4, n_bins=4, image_rows=8, image_cols=8,
            pixel_size=1.0, view_angles=angles, detector_bin_spacing=1.0,
        )
    with pytest.raises(ValueError, match="2"):
        Geometry(
            kind="parallel", n_views=2, n_bins=4, image_rows=8, image_cols=8,
            pixel_size=1.0, view_angles=np.array([0.0, 7.0]),
            detector_bin_spacing=1.0,
        )


def test_image_hu_round_trip():
    img = Image(np.full((4, 4), 0.0192), mu_water=0.0192)
    assert np.allclose(img.to_hu(), 0.0)
    back = Image.from_hu(img.to_hu(), mu_water=0.0192)
    assert np.allclose(back.values, img.values)
    hu = Image(np.full((2, 2), 2 * 0.0192), mu_water=0.0192).to_hu()
    assert np.allclose(hu, 1000.0)


def test_image_rejects_non_finite():
    with pytest.raises(ValueError):
        Image(np.array([[np.nan, 0.0], [0.0, 0.0]]))


def test_sinogram_shape_checked():
    g = parallel_beam(4, 6, 8, 8, 1.0)
    with pytest.raises(ValueError):
        Sinogram(g, np.zeros((4, 5)))
    s = Sinogram(g, np.zeros((4, 6)))
    assert s.n_rays == 24
