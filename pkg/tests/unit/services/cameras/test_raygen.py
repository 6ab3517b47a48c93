import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from src.particle_tracer.exceptions import CameraError
from src.particle_tracer.models.camera import Lens, Pose, ShutterKind
from src.particle_tracer.models.dataset import TrainingView
from src.particle_tracer.models.settings import RenderSettings
from src.particle_tracer.services.cameras.raygen import (concentric_disk, generate_pixel_ray, generate_rays,
                                                         halton_table, pose_at, rays_for_pixels,
                                                         sample_incoherent_batch, sample_rng, shutter_time)
from tests.conftest import make_camera


def test_centre_pixel_looks_along_the_optical_axis():
    cam = make_camera(width=9, height=7)
    origin, direction, time, valid = generate_pixel_ray(cam, 4, 3)
    assert valid
    np.testing.assert_allclose(origin, [0.0, 0.0, -4.0])
    np.testing.assert_allclose(direction, [0.0, 0.0, 1.0], atol=1e-12)
    assert time == 0.5


def test_generate_rays_row_major_and_unit_length(camera):
    bundle = generate_rays(camera)
    assert len(bundle) == camera.width * camera.height
    assert bundle.pixel_ids.tolist() == list(range(camera.width * camera.height))
    np.testing.assert_allclose(np.linalg.norm(bundle.directions, axis=1), 1.0)
    # image y grows downwards: the first row looks up in world space (negative y)
    assert bundle.directions[0, 1] < 0.0
    assert bundle.directions[-1, 1] > 0.0


def test_pixel_outside_image_rejected(camera):
    with pytest.raises(CameraError):
        rays_for_pixels(camera, np.array([camera.width]), np.array([0]))
    with pytest.raises(CameraError):
        rays_for_pixels(camera, np.array([0]), np.array([-1]))


def test_shutter_times():
    rolling = make_camera(width=4, height=5, shutter=ShutterKind.ROLLING_TOP_TO_BOTTOM)
    np.testing.assert_allclose(shutter_time(rolling, np.zeros(5), np.arange(5)), [0.0, 0.25, 0.5, 0.75, 1.0])
    sideways = make_camera(width=3, height=5, shutter=ShutterKind.ROLLING_LEFT_TO_RIGHT)
    np.testing.assert_allclose(shutter_time(sideways, np.arange(3), np.zeros(3)), [0.0, 0.5, 1.0])
    assert np.all(shutter_time(make_camera(), np.arange(3), np.arange(3)) == 0.5)


def test_rolling_shutter_on_static_camera_equals_global():
    still = make_camera()
    rolling = make_camera(shutter=ShutterKind.ROLLING_TOP_TO_BOTTOM)
    a = generate_rays(still)
    b = generate_rays(rolling)
    np.testing.assert_array_equal(a.origins, b.origins)
    np.testing.assert_array_equal(a.directions, b.directions)


def test_rolling_shutter_interpolates_between_poses():
    pose1 = Pose.look_at((1.0, 0.0, -4.0), (1.0, 0.0, 0.0))
    cam = make_camera(width=4, height=5, shutter=ShutterKind.ROLLING_TOP_TO_BOTTOM, pose1=pose1)
    bundle = generate_rays(cam)
    np.testing.assert_allclose(bundle.origins[0], [0.0, 0.0, -4.0], atol=1e-12)
    np.testing.assert_allclose(bundle.origins[-1], [1.0, 0.0, -4.0], atol=1e-12)
    np.testing.assert_allclose(bundle.origins[2 * 4], [0.5, 0.0, -4.0], atol=1e-12)


def test_pose_at_endpoints():
    pose1 = Pose.look_at((0.0, 2.0, -4.0), (0.0, 0.0, 0.0))
    cam = make_camera(pose1=pose1)
    rot, center = pose_at(cam, np.array([0.0, 1.0]))
    np.testing.assert_allclose(rot[0], cam.pose0.rotation_matrix, atol=1e-12)
    np.testing.assert_allclose(rot[1], pose1.rotation_matrix, atol=1e-12)
    np.testing.assert_allclose(center[1], [0.0, 2.0, -4.0])


def test_zero_aperture_equals_pinhole():
    a = generate_rays(make_camera())
    b = generate_rays(make_camera(lens=Lens(aperture_radius=0.0, focus_distance=2.0)))
    np.testing.assert_array_equal(a.origins, b.origins)
    np.testing.assert_array_equal(a.directions, b.directions)


def test_thin_lens_rays_meet_pinhole_rays_on_focus_plane():
    focus = 3.0
    pinhole = generate_rays(make_camera())
    lens = generate_rays(make_camera(lens=Lens(aperture_radius=0.2, focus_distance=focus)))
    assert not np.allclose(lens.origins, pinhole.origins)
    plane_z = -4.0 + focus

    def at_plane(bundle):
        t = (plane_z - bundle.origins[:, 2]) / bundle.directions[:, 2]
        return bundle.origins + t[:, None] * bundle.directions

    np.testing.assert_allclose(at_plane(lens), at_plane(pinhole), atol=1e-9)


@given(st.lists(st.tuples(st.floats(0.0, 1.0), st.floats(0.0, 1.0)), min_size=1, max_size=20))
def test_concentric_disk_stays_in_unit_disk(points):
    disk = concentric_disk(np.array(points))
    assert np.all(np.linalg.norm(disk, axis=1) <= 1.0 + 1e-12)


def test_concentric_disk_centre():
    np.testing.assert_array_equal(concentric_disk(np.array([[0.5, 0.5]])), [[0.0, 0.0]])


def test_halton_table_starts_at_origin():
    table = halton_table(16)
    assert table.shape == (16, 4)
    np.testing.assert_array_equal(table[0], np.zeros(4))
    assert np.all((table >= 0.0) & (table < 1.0))


def test_sample_rng_only_for_multisample():
    assert sample_rng(RenderSettings(spp=1), 0) is None
    a = sample_rng(RenderSettings(spp=4, seed=3), 2).random()
    b = sample_rng(RenderSettings(spp=4, seed=3), 2).random()
    assert a == b


def test_subpixel_samples_stay_inside_their_pixel():
    cam = make_camera(width=4, height=4)
    for index in range(1, 6):
        d = rays_for_pixels(cam, np.array([1]), np.array([2]), index).directions[0]
        k = cam.intrinsics
        u = d[0] / d[2] * k.fx + k.cx
        v = d[1] / d[2] * k.fy + k.cy
        assert 1.0 <= u < 2.0 and 2.0 <= v < 3.0


def _views(count=3, width=4, height=3):
    views = []
    for i in range(count):
        image = np.random.default_rng(i).random((height, width, 3))
        views.append(TrainingView(camera=make_camera(width=width, height=height), image=image, name=f"v{i}"))
    return views


def test_incoherent_batch_is_reproducible():
    views = _views()
    a, colors_a = sample_incoherent_batch(views, 20, np.random.default_rng(7))
    b, colors_b = sample_incoherent_batch(views, 20, np.random.default_rng(7))
    np.testing.assert_array_equal(a.view_ids, b.view_ids)
    np.testing.assert_array_equal(a.pixel_ids, b.pixel_ids)
    np.testing.assert_array_equal(colors_a, colors_b)


def test_incoherent_batch_colors_match_pixels():
    views = _views()
    bundle, colors = sample_incoherent_batch(views, 30, np.random.default_rng(1))
    for view_id, pixel_id, color in zip(bundle.view_ids, bundle.pixel_ids, colors):
        np.testing.assert_array_equal(views[view_id].image.reshape(-1, 3)[pixel_id], color)


def test_incoherent_batch_without_replacement():
    views = _views(count=2, width=2, height=2)
    bundle, _ = sample_incoherent_batch(views, 8, np.random.default_rng(0), replace=False)
    keys = set(zip(bundle.view_ids.tolist(), bundle.pixel_ids.tolist()))
    assert len(keys) == 8
    with pytest.raises(CameraError):
        sample_incoherent_batch(views, 9, np.random.default_rng(0), replace=False)


def test_incoherent_batch_needs_views():
    with pytest.raises(CameraError):
        sample_incoherent_batch([], 4, np.random.default_rng(0))
