import numpy as np
import pytest

from src.particle_tracer.models.camera import Distortion, DistortionKind
from src.particle_tracer.services.cameras.distortion import (NoDistortion, OpenCvFisheye, OpenCvRadialTangential,
                                                             make_distortion)


def _grid(limit: float, n: int = 11) -> np.ndarray:
    u = np.linspace(-limit, limit, n)
    return np.stack(np.meshgrid(u, u), axis=-1).reshape(-1, 2)


def test_no_distortion_roundtrip():
    model = NoDistortion()
    coords = _grid(0.8)
    dirs, valid = model.unproject(coords)
    assert valid.all()
    np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0)
    np.testing.assert_allclose(model.project(dirs), coords, atol=1e-12)


def test_fisheye_roundtrip_within_field_of_view():
    model = OpenCvFisheye(0.05, -0.01, 0.002, -0.0005)
    coords = _grid(0.7)
    dirs, valid = model.unproject(coords)
    assert valid.all()
    np.testing.assert_allclose(model.project(dirs), coords, atol=1e-8)


def test_fisheye_optical_axis():
    dirs, valid = OpenCvFisheye(0.1, 0.0, 0.0, 0.0).unproject(np.zeros((1, 2)))
    assert valid[0]
    np.testing.assert_allclose(dirs[0], [0.0, 0.0, 1.0])


def test_fisheye_marks_angles_beyond_hemisphere_invalid():
    model = OpenCvFisheye(0.0, 0.0, 0.0, 0.0)
    _, valid = model.unproject(np.array([[0.5, 0.0], [2.0, 0.0]]))
    assert valid.tolist() == [True, False]


def test_radial_tangential_undistort_inverts_distort():
    model = OpenCvRadialTangential(-0.1, 0.02, 0.001, -0.002, 0.0)
    xy = _grid(0.5)
    back, converged = model.undistort(model.distort(xy))
    assert converged.all()
    np.testing.assert_allclose(back, xy, atol=1e-9)


def test_singular_jacobian_marks_only_that_pixel_invalid():
    # k1 = -1/3 puts the turning point of the radial curve, where the Jacobian vanishes, at (1, 0)
    model = OpenCvRadialTangential(-1.0 / 3.0, 0.0, 0.0, 0.0, 0.0)
    xy = np.array([[0.1, 0.05]])
    coords = np.concatenate([[[1.0, 0.0]], model.distort(xy)])
    back, converged = model.undistort(coords)
    assert converged.tolist() == [False, True]
    assert np.all(np.isfinite(back))
    np.testing.assert_allclose(back[1], xy[0], atol=1e-9)
    _, valid = model.unproject(coords)
    assert valid.tolist() == [False, True]


def test_radial_tangential_project_matches_unproject():
    model = OpenCvRadialTangential(0.05, 0.0, 0.0, 0.0, 0.0)
    coords = _grid(0.4)
    dirs, valid = model.unproject(coords)
    assert valid.all()
    np.testing.assert_allclose(model.project(dirs), coords, atol=1e-9)


def test_make_distortion_dispatch():
    assert isinstance(make_distortion(Distortion()), NoDistortion)
    fisheye = Distortion(kind=DistortionKind.OPENCV_FISHEYE, coeffs=[0.0] * 4)
    assert isinstance(make_distortion(fisheye), OpenCvFisheye)
    pinhole = Distortion(kind=DistortionKind.OPENCV_PINHOLE, coeffs=[0.0] * 5)
    assert isinstance(make_distortion(pinhole), OpenCvRadialTangential)


def test_distortion_coefficient_count_checked():
    with pytest.raises(ValueError) as exc_info:
        Distortion(kind=DistortionKind.OPENCV_FISHEYE, coeffs=[0.1, 0.2])
    assert "takes 4 coefficients" in str(exc_info.value)
