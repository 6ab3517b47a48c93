import numpy as np
import pytest

from src.particle_tracer.exceptions import SceneFormatError
from src.particle_tracer.models.particles import KernelType
from src.particle_tracer.models.settings import RenderSettings
from src.particle_tracer.orchestrator import RenderOrchestrator
from src.particle_tracer.services.acceleration.geometry import SceneGeometry
from src.particle_tracer.services.io.ply import load_ply, ply_header, read_ply_vertices, save_ply, vertex_properties
from tests.conftest import make_camera, make_scene


def _assert_close(a, b):
    np.testing.assert_allclose(a.positions, b.positions, rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(a.scales, b.scales, rtol=1e-5)
    np.testing.assert_allclose(a.opacities, b.opacities, rtol=1e-5)
    np.testing.assert_allclose(a.quaternions, b.quaternions, atol=1e-6)
    np.testing.assert_allclose(a.sh, b.sh, rtol=1e-6, atol=1e-6)


def test_gaussian_checkpoint(tmp_path):
    scene = make_scene(10, seed=2)
    path = tmp_path / "scene.ply"
    save_ply(scene, path)
    back = load_ply(path, dtype=np.float64)
    assert back.sh_degree == 3
    assert np.all(back.kernels == KernelType.GAUSSIAN)
    _assert_close(scene, back)
    names = read_ply_vertices(path).dtype.names
    assert 'kernel_type' not in names
    assert [name for name, _ in vertex_properties()] == list(names)


def test_header_layout():
    header = ply_header(3, vertex_properties(0)).decode('ascii').splitlines()
    assert header[:3] == ['ply', 'format binary_little_endian 1.0', 'element vertex 3']
    assert header[-1] == 'end_header'
    assert 'property float f_dc_2' in header
    assert not any('f_rest' in line for line in header)


def test_raw_values_are_inverse_activations(tmp_path):
    scene = make_scene(2, seed=0)
    path = tmp_path / "scene.ply"
    save_ply(scene, path)
    raw = read_ply_vertices(path)
    np.testing.assert_allclose(raw['scale_1'], np.log(scene.scales[:, 1]), rtol=1e-6)
    np.testing.assert_allclose(1.0 / (1.0 + np.exp(-raw['opacity'].astype(np.float64))), scene.opacities, rtol=1e-6)


def test_f_rest_is_channel_major(tmp_path):
    scene = make_scene(1, seed=5)
    path = tmp_path / "scene.ply"
    save_ply(scene, path)
    raw = read_ply_vertices(path)
    # 15 coefficients per channel: f_rest_15 is the first green coefficient
    assert raw['f_rest_15'][0] == pytest.approx(scene.sh[0, 1, 1], rel=1e-6)
    assert raw['f_rest_44'][0] == pytest.approx(scene.sh[0, 15, 2], rel=1e-6)


def test_lower_sh_degree(tmp_path):
    scene = make_scene(4, seed=1)
    path = tmp_path / "scene.ply"
    save_ply(scene, path, sh_degree=1)
    back = load_ply(path, dtype=np.float64)
    assert back.sh_degree == 1
    np.testing.assert_allclose(back.sh[:, :4], scene.sh[:, :4], rtol=1e-6, atol=1e-6)
    assert np.all(back.sh[:, 4:] == 0.0)


def test_kernel_columns(tmp_path):
    scene = make_scene(5, seed=3, kernel=KernelType.COSINE_MODULATED)
    path = tmp_path / "scene.ply"
    save_ply(scene, path)
    back = load_ply(path, dtype=np.float64)
    assert np.all(back.kernels == KernelType.COSINE_MODULATED)
    np.testing.assert_allclose(back.psi, scene.psi, rtol=1e-6)


def test_surface_particles_keep_zero_scale(tmp_path):
    scene = make_scene(3, seed=3, kernel=KernelType.SURFACE_2D)
    path = tmp_path / "scene.ply"
    save_ply(scene, path)
    back = load_ply(path, dtype=np.float64)
    assert np.all(back.scales[:, 2] == 0.0)
    assert np.all(back.kernels == KernelType.SURFACE_2D)


def test_truncated_body_reports_offset(tmp_path):
    path = tmp_path / "scene.ply"
    save_ply(make_scene(4, seed=0), path)
    data = path.read_bytes()
    path.write_bytes(data[:-10])
    with pytest.raises(SceneFormatError) as exc_info:
        load_ply(path)
    assert exc_info.value.byte_offset is not None
    assert "expected 4 vertices" in str(exc_info.value)


def test_ascii_ply_rejected(tmp_path):
    path = tmp_path / "ascii.ply"
    path.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n")
    with pytest.raises(SceneFormatError) as exc_info:
        load_ply(path)
    assert "binary_little_endian" in str(exc_info.value)


def test_not_a_ply(tmp_path):
    path = tmp_path / "junk.ply"
    path.write_bytes(b"hello world")
    with pytest.raises(SceneFormatError) as exc_info:
        load_ply(path)
    assert exc_info.value.byte_offset == 0


def test_missing_required_property(tmp_path):
    path = tmp_path / "partial.ply"
    path.write_bytes(ply_header(0, [('x', 'float'), ('y', 'float'), ('z', 'float')]))
    with pytest.raises(SceneFormatError) as exc_info:
        load_ply(path)
    assert "f_dc_0" in str(exc_info.value)


def test_empty_scene(tmp_path):
    path = tmp_path / "empty.ply"
    save_ply(make_scene(0), path)
    assert len(load_ply(path)) == 0


def test_float32_storage_renders_like_float64(tmp_path):
    path = tmp_path / "scene.ply"
    save_ply(make_scene(12, seed=5), path)
    stored = load_ply(path)
    assert stored.positions.dtype == np.float32 and stored.sh.dtype == np.float32
    settings = RenderSettings()
    camera = make_camera(width=5, height=4)
    narrow = RenderOrchestrator(SceneGeometry(stored), settings).render_image(camera).image
    wide = RenderOrchestrator(SceneGeometry(load_ply(path, dtype=np.float64)), settings).render_image(camera).image
    np.testing.assert_allclose(narrow, wide, atol=1e-5)
