import math

import numpy as np
import pytest

from src.particle_tracer.models.particles import SH_COEFFS, ParticleScene
from src.particle_tracer.models.settings import RenderSettings
from src.particle_tracer.services.acceleration.geometry import SceneGeometry
from src.particle_tracer.services.cameras.raygen import generate_rays
from src.particle_tracer.services.tracing.kbuffer import collect_hit_sequence, march, trace_ray
from tests.conftest import make_camera, make_column, make_scene

AXIS_O = np.array([0.0, 0.0, -6.0])
AXIS_D = np.array([0.0, 0.0, 1.0])


def _single(opacity=0.5, scale=0.3) -> ParticleScene:
    return ParticleScene(positions=[[0.0, 0.0, 0.0]], quaternions=[[1.0, 0.0, 0.0, 0.0]], scales=[[scale] * 3],
                         opacities=[opacity], sh=np.zeros((1, SH_COEFFS, 3)), sh_degree=0, dtype=np.float64)


def test_single_particle_closed_form():
    geometry = SceneGeometry(_single())
    result = march(geometry, AXIS_O, AXIS_D, RenderSettings(t_min_transmittance=0.0))
    t_end = geometry.bounds()[1][2] - AXIS_O[2]
    np.testing.assert_allclose(result.radiance, [0.25, 0.25, 0.25])
    assert result.transmittance == pytest.approx(0.5)
    assert result.depth == pytest.approx(0.5 * 6.0 + 0.5 * t_end)
    assert (result.hit_count, result.blended) == (1, 1)


def test_miss_returns_empty_result():
    geometry = SceneGeometry(_single())
    result = march(geometry, np.array([5.0, 5.0, -6.0]), AXIS_D, RenderSettings())
    assert result.transmittance == 1.0
    assert np.all(result.radiance == 0.0)
    assert result.depth == 0.0
    assert result.rounds == 0


def test_faint_sample_is_hit_but_not_blended():
    geometry = SceneGeometry(_single())
    # whitened distance 2: alpha = 0.5 e^-4 < alpha_min while the proxy still reaches the ray
    result = march(geometry, np.array([0.6, 0.0, -6.0]), AXIS_D, RenderSettings())
    assert result.hit_count == 1
    assert result.blended == 0
    assert result.transmittance == 1.0


def test_front_to_back_blending():
    scene = make_column(3, opacity=0.6)
    geometry = SceneGeometry(scene)
    result = march(geometry, AXIS_O, AXIS_D, RenderSettings(t_min_transmittance=0.0))
    colors = 1.0 / (1.0 + np.exp(-0.28209479177387814 * scene.sh[:, 0]))
    expected = 0.6 * colors[0] + 0.4 * 0.6 * colors[1] + 0.16 * 0.6 * colors[2]
    np.testing.assert_allclose(result.radiance, expected, atol=1e-12)
    assert result.transmittance == pytest.approx(0.4 ** 3)


def test_early_termination_is_checked_before_each_hit():
    geometry = SceneGeometry(make_column(5, opacity=0.9))
    result = march(geometry, AXIS_O, AXIS_D, RenderSettings(t_min_transmittance=0.05))
    assert result.blended == 2
    assert result.hit_count == 2
    assert result.transmittance == pytest.approx(0.01)


def test_t_stop_truncates():
    geometry = SceneGeometry(make_column(5, spacing=1.0))
    # particles sit at t = 4, 5, 6, 7, 8 along the axis ray
    result = march(geometry, AXIS_O, AXIS_D, RenderSettings(t_min_transmittance=0.0), t_stop=5.0)
    assert result.hit_count == 2


def test_shadow_mode_skips_colour():
    geometry = SceneGeometry(make_column(3))
    settings = RenderSettings(t_min_transmittance=0.0)
    full = march(geometry, AXIS_O, AXIS_D, settings)
    shadow = march(geometry, AXIS_O, AXIS_D, settings, with_radiance=False)
    assert np.all(shadow.radiance == 0.0)
    assert shadow.transmittance == full.transmittance


def test_records_hold_blended_samples():
    geometry = SceneGeometry(make_column(3))
    result = march(geometry, AXIS_O, AXIS_D, RenderSettings(t_min_transmittance=0.0), record=True)
    assert len(result.records) == result.blended == 3
    assert result.records[0].transmittance == 1.0
    assert result.records[1].transmittance == pytest.approx(0.5)
    assert [r.hit.particle for r in result.records] == [0, 1, 2]


def test_carried_transmittance():
    geometry = SceneGeometry(make_column(1))
    result = march(geometry, AXIS_O, AXIS_D, RenderSettings(t_min_transmittance=0.0), transmittance=0.5)
    assert result.transmittance == pytest.approx(0.25)


@pytest.mark.parametrize("k", [1, 2, 3, 7, 64])
def test_result_does_not_depend_on_k(k):
    geometry = SceneGeometry(make_scene(30, seed=11))
    rays = generate_rays(make_camera(width=6, height=5))
    base = RenderSettings(k=16)
    other = RenderSettings(k=k)
    for o, d in zip(rays.origins, rays.directions):
        a = march(geometry, o, d, base)
        b = march(geometry, o, d, other)
        np.testing.assert_allclose(a.radiance, b.radiance, atol=1e-12)
        assert a.transmittance == pytest.approx(b.transmittance, abs=1e-12)
        assert a.hit_count == b.hit_count


def test_rounds_shrink_with_k():
    geometry = SceneGeometry(make_column(8))
    settings = RenderSettings(t_min_transmittance=0.0)
    small = march(geometry, AXIS_O, AXIS_D, settings.model_copy(update={"k": 1}))
    large = march(geometry, AXIS_O, AXIS_D, settings.model_copy(update={"k": 64}))
    assert small.rounds > large.rounds
    assert large.rounds <= 2


def test_hit_sequence_is_ordered_and_k_independent():
    geometry = SceneGeometry(make_scene(25, seed=2))
    o = np.array([0.1, -0.1, -5.0])
    d = np.array([0.0, 0.05, 1.0]) / math.hypot(0.05, 1.0)
    reference = collect_hit_sequence(geometry, o, d, k=64)
    assert reference == sorted(reference)
    assert len(set(reference)) == len(reference)
    for k in (1, 4):
        assert collect_hit_sequence(geometry, o, d, k=k) == reference


def test_debug_order_check_passes_on_valid_march():
    geometry = SceneGeometry(make_scene(20, seed=5))
    result = trace_ray(geometry, AXIS_O, AXIS_D, RenderSettings(debug=True))
    assert 0.0 <= result.transmittance <= 1.0
