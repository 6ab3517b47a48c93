import numpy as np
import pytest
from scipy.special import expit, logit

from src.particle_tracer.exceptions import ContractViolationError, NumericalError
from src.particle_tracer.grad import GradientBuffers, backward_image, backward_ray, backward_rays
from src.particle_tracer.models.particles import SH_COEFFS, KernelType, ParticleScene
from src.particle_tracer.models.results import RayResult
from src.particle_tracer.models.settings import RenderSettings
from src.particle_tracer.services.acceleration.geometry import SceneGeometry
from src.particle_tracer.services.cameras.raygen import generate_rays
from src.particle_tracer.services.tracing.kbuffer import march
from tests.conftest import make_camera, make_scene

RAY_O = np.array([0.04, -0.03, -6.0])
RAY_D = np.array([0.01, 0.02, 1.0]) / np.linalg.norm([0.01, 0.02, 1.0])
G_RAD = np.array([0.7, -0.4, 1.1])
G_T = 0.3
STEP = 1e-6
SETTINGS = RenderSettings(t_min_transmittance=0.0)


def _column(kernel: KernelType = KernelType.GAUSSIAN) -> ParticleScene:
    rng = np.random.default_rng(5)
    return ParticleScene(
        positions=[[0.05, 0.0, -1.0], [-0.04, 0.06, 0.0], [0.02, -0.05, 1.0]],
        quaternions=[[0.9, 0.2, -0.3, 0.1], [0.8, -0.1, 0.4, 0.2], [1.0, 0.0, 0.0, 0.0]],
        scales=[[0.3, 0.25, 0.35], [0.28, 0.32, 0.3], [0.35, 0.3, 0.25]],
        opacities=[0.6, 0.5, 0.7],
        sh=rng.normal(0.0, 0.3, (3, SH_COEFFS, 3)),
        psi=rng.normal(0.0, 1.0, (3, 3)) if kernel == KernelType.COSINE_MODULATED else None,
        kernels=np.full(3, int(kernel), dtype=np.int8),
        sh_degree=3, dtype=np.float64,
    )


def _nudge(scene: ParticleScene, name: str, index, step: float) -> ParticleScene:
    values = {"positions": scene.positions.copy(), "quaternions": scene.quaternions.copy(),
              "scales": scene.scales.copy(), "opacities": scene.opacities.copy(), "sh": scene.sh.copy(),
              "psi": scene.psi.copy()}
    if name == "opacity_logit":
        values["opacities"][index] = expit(logit(values["opacities"][index]) + step)
    else:
        values[name][index] += step
    return ParticleScene(**values, kernels=scene.kernels, degrees=scene.degrees, sh_degree=scene.sh_degree,
                         dtype=np.float64)


def _loss(scene: ParticleScene) -> float:
    result = march(SceneGeometry(scene), RAY_O, RAY_D, SETTINGS)
    return float(result.radiance @ G_RAD + G_T * result.transmittance)


def _fd(scene: ParticleScene, name: str, index) -> float:
    return (_loss(_nudge(scene, name, index, STEP)) - _loss(_nudge(scene, name, index, -STEP))) / (2.0 * STEP)


@pytest.mark.parametrize("kernel", [KernelType.GAUSSIAN, KernelType.COSINE_MODULATED])
def test_backward_matches_finite_differences(kernel):
    scene = _column(kernel)
    grads = GradientBuffers.zeros(3)
    replay = backward_ray(SceneGeometry(scene), RAY_O, RAY_D, SETTINGS, G_RAD, grads, G_T)
    assert replay.blended == 3
    checks = [("positions", grads.position, (3,)), ("quaternions", grads.quaternion, (4,)),
              ("scales", grads.scale, (3,)), ("opacity_logit", grads.opacity_logit, ())]
    if kernel == KernelType.COSINE_MODULATED:
        checks.append(("psi", grads.psi, (3,)))
    for name, analytic, shape in checks:
        for i in range(3):
            for component in np.ndindex(*shape):
                index = (i,) + component
                assert analytic[index] == pytest.approx(_fd(scene, name, index), rel=1e-4, abs=1e-6), (name, index)
    for index in [(0, 0, 0), (1, 2, 1), (2, 8, 2), (0, 15, 1)]:
        assert grads.sh[index] == pytest.approx(_fd(scene, "sh", index), rel=1e-4, abs=1e-7), index


def test_statistics_follow_blend_weights():
    scene = _column()
    grads = GradientBuffers.zeros(3)
    backward_ray(SceneGeometry(scene), RAY_O, RAY_D, SETTINGS, G_RAD, grads)
    forward = march(SceneGeometry(scene), RAY_O, RAY_D, SETTINGS, record=True)
    np.testing.assert_array_equal(grads.hit_count, [1, 1, 1])
    expected = [r.transmittance * r.sample.alpha for r in forward.records]
    np.testing.assert_allclose(grads.weight, expected)
    assert grads.weight.sum() == pytest.approx(1.0 - forward.transmittance)


def test_terminated_samples_get_no_gradient():
    scene = _column()
    grads = GradientBuffers.zeros(3)
    # T drops to about 0.23 after the second sample
    backward_ray(SceneGeometry(scene), RAY_O, RAY_D, RenderSettings(t_min_transmittance=0.3), G_RAD, grads)
    assert grads.hit_count[2] == 0
    assert np.all(grads.sh[2] == 0.0)
    assert np.all(grads.position[2] == 0.0)


def test_debug_replay_mismatch_raises():
    scene = _column()
    wrong = RayResult(blended=1, hit_count=1, transmittance=0.5)
    with pytest.raises(ContractViolationError) as exc_info:
        backward_ray(SceneGeometry(scene), RAY_O, RAY_D, SETTINGS.model_copy(update={"debug": True}), G_RAD,
                     GradientBuffers.zeros(3), forward=wrong)
    assert "replay diverged" in str(exc_info.value)


def test_non_finite_loss_gradient_raises():
    with pytest.raises(NumericalError):
        backward_ray(SceneGeometry(_column()), RAY_O, RAY_D, SETTINGS, np.array([np.nan, 0.0, 0.0]),
                     GradientBuffers.zeros(3))


def test_buffers_add_and_scale():
    a = GradientBuffers.zeros(2)
    a.position[0] = 1.0
    a.hit_count[1] = 3
    b = GradientBuffers.zeros(2)
    b.position[0] = 2.0
    a.add(b)
    half = a.scaled(0.5)
    np.testing.assert_array_equal(half.position[0], [1.5, 1.5, 1.5])
    assert half.hit_count[1] == 3
    assert a.position[0, 0] == 3.0
    assert len(a) == 2
    a.sh[1, 0, 0] = np.inf
    assert not a.is_finite()


def test_worker_processes_match_serial():
    scene = make_scene(12, seed=3)
    geometry = SceneGeometry(scene)
    rays = generate_rays(make_camera(width=4, height=3))
    g = np.random.default_rng(0).normal(size=(12, 3))
    serial = backward_rays(geometry, 12, rays.origins, rays.directions, RenderSettings(), g, threads=1)
    parallel = backward_rays(geometry, 12, rays.origins, rays.directions, RenderSettings(), g, threads=2)
    np.testing.assert_allclose(parallel.position, serial.position, atol=1e-12)
    np.testing.assert_allclose(parallel.sh, serial.sh, atol=1e-12)
    np.testing.assert_array_equal(parallel.hit_count, serial.hit_count)


def test_background_is_folded_into_transmittance_gradient():
    scene = make_scene(10, seed=6)
    geometry = SceneGeometry(scene)
    camera = make_camera(width=3, height=3)
    settings = RenderSettings(background=(0.2, 0.5, 0.9))
    g_img = np.random.default_rng(1).normal(size=(3, 3, 3))
    via_image = backward_image(geometry, 10, camera, settings, g_img)
    rays = generate_rays(camera)
    flat = g_img.reshape(9, 3)
    direct = backward_rays(geometry, 10, rays.origins, rays.directions, settings, flat,
                           flat @ np.array([0.2, 0.5, 0.9]))
    np.testing.assert_allclose(via_image.opacity_logit, direct.opacity_logit, atol=1e-12)
    np.testing.assert_allclose(via_image.position, direct.position, atol=1e-12)
