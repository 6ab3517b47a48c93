import numpy as np

from src.particle_tracer.kernels import SH_C0
from src.particle_tracer.models.particles import KernelType
from src.particle_tracer.models.settings import RenderSettings
from src.particle_tracer.services.io.dataset import load_dataset
from src.particle_tracer.services.io.ply import load_ply
from src.particle_tracer.services.io.synthetic import (CAMERA_DISTANCE, make_toy_dataset, orbit_cameras, toy_scene,
                                                       write_toy_dataset)


def test_toy_scene_is_reproducible_and_bounded():
    a = toy_scene(50, seed=4)
    b = toy_scene(50, seed=4)
    np.testing.assert_array_equal(a.positions, b.positions)
    assert np.all(np.linalg.norm(a.positions, axis=1) <= 1.0)
    assert np.all((a.opacities >= 0.5) & (a.opacities <= 0.95))
    assert a.sh_degree == 0
    assert np.all(a.sh[:, 1:] == 0.0)
    colors = 1.0 / (1.0 + np.exp(-SH_C0 * a.sh[:, 0]))
    assert np.all((colors > 0.0) & (colors < 1.0))


def test_toy_scene_surface_kernel():
    scene = toy_scene(10, seed=1, kernel=KernelType.SURFACE_2D)
    assert np.all(scene.scales[:, 2] == 0.0)


def test_orbit_cameras_look_at_origin():
    cams = orbit_cameras(6, 8, 8, seed=2)
    assert len({cam.name for cam in cams}) == 6
    for cam in cams:
        center = cam.pose0.center
        assert abs(np.linalg.norm(center) - CAMERA_DISTANCE) < 1e-9
        forward = cam.pose0.rotation_matrix[:, 2]
        np.testing.assert_allclose(forward, -center / np.linalg.norm(center), atol=1e-9)


def test_make_toy_dataset_splits_views():
    settings = RenderSettings(t_min_transmittance=0.0)
    scene, dataset = make_toy_dataset(count=20, views=4, test_views=2, resolution=6, seed=1, settings=settings)
    assert len(scene) == 20
    assert len(dataset.views) == 4
    assert len(dataset.test_views) == 2
    assert dataset.points.shape == (20, 3)
    assert np.all(dataset.point_colors == 0.5)
    image = dataset.views[0].image
    assert image.shape == (6, 6, 3)
    assert np.all(np.isfinite(image))
    # particles cover the centre of every orbit view
    assert np.any(image != 0.0)


def test_write_toy_dataset(tmp_path):
    scene, _ = write_toy_dataset(tmp_path, count=10, views=2, test_views=1, resolution=4, seed=0)
    assert len(load_ply(tmp_path / "scene.ply")) == len(scene)
    assert len(load_dataset(tmp_path)) == 2
