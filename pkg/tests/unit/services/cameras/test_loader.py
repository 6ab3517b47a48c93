import numpy as np
import pytest

from src.particle_tracer.exceptions import CameraError
from src.particle_tracer.models.camera import Distortion, DistortionKind, Lens, ShutterKind
from src.particle_tracer.services.cameras.loader import load_camera, load_cameras, save_cameras
from tests.conftest import make_camera


def test_save_and_load(tmp_path):
    cams = [
        make_camera(name="a"),
        make_camera(name="b", shutter=ShutterKind.ROLLING_LEFT_TO_RIGHT, lens=Lens(aperture_radius=0.1),
                    distortion=Distortion(kind=DistortionKind.OPENCV_FISHEYE, coeffs=[0.1, 0.0, 0.0, 0.0])),
    ]
    path = tmp_path / "cams.json"
    save_cameras(cams, path)
    loaded = load_cameras(path)
    assert [c.name for c in loaded] == ["a", "b"]
    for original, back in zip(cams, loaded):
        assert back.intrinsics == original.intrinsics
        assert back.distortion == original.distortion
        assert back.shutter == original.shutter
        assert back.lens == original.lens
        np.testing.assert_allclose(back.pose0.matrix(), original.pose0.matrix(), atol=1e-12)


def test_single_camera_toml(tmp_path):
    path = tmp_path / "cam.toml"
    path.write_text(
        'width = 4\nheight = 2\n[intrinsics]\nfx = 2.0\nfy = 2.0\ncx = 2.0\ncy = 1.0\n'
        '[pose0]\ntranslation = [0.0, 0.0, -3.0]\n', encoding='utf-8')
    cam = load_camera(path)
    assert cam.resolution == (4, 2)
    assert cam.pose0.translation == (0.0, 0.0, -3.0)
    assert cam.is_static


def test_unknown_key_is_a_camera_error(tmp_path):
    path = tmp_path / "cam.json"
    path.write_text('{"width": 4, "height": 2, "intrinsics": {"fx": 1, "fy": 1, "cx": 0, "cy": 0}, "fov": 3}',
                    encoding='utf-8')
    with pytest.raises(CameraError) as exc_info:
        load_camera(path)
    assert "fov" in str(exc_info.value)


def test_empty_camera_list(tmp_path):
    path = tmp_path / "cams.json"
    path.write_text('{"cameras": []}', encoding='utf-8')
    with pytest.raises(CameraError):
        load_cameras(path)


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_cameras(tmp_path / "nope.json")
