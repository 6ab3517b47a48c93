import numpy as np
import pytest

from src.particle_tracer.models.particles import SH_COEFFS, KernelType, Particle, ParticleScene
from tests.conftest import make_scene


def test_particle_defaults():
    p = Particle(mu=(1.0, 2.0, 3.0), opacity=0.5)
    assert p.quat == (1.0, 0.0, 0.0, 0.0)
    assert p.scale == (1.0, 1.0, 1.0)
    assert p.kernel == KernelType.GAUSSIAN
    assert p.degree == 1.0
    assert len(p.sh) == 48


def test_generalized_gaussian_defaults_to_degree_two():
    p = Particle(mu=(0.0, 0.0, 0.0), opacity=0.5, kernel=KernelType.GENERALIZED_GAUSSIAN)
    assert p.degree == 2.0


def test_particle_quaternion_is_normalized():
    p = Particle(mu=(0.0, 0.0, 0.0), opacity=0.5, quat=(2.0, 0.0, 0.0, 0.0))
    assert p.quat == pytest.approx((1.0, 0.0, 0.0, 0.0))


@pytest.mark.parametrize("opacity", [0.0, 1.0, -0.1, 1.5])
def test_particle_opacity_must_be_open_interval(opacity):
    with pytest.raises(ValueError):
        Particle(mu=(0.0, 0.0, 0.0), opacity=opacity)


def test_particle_sh_length_checked():
    with pytest.raises(ValueError) as exc_info:
        Particle(mu=(0.0, 0.0, 0.0), opacity=0.5, sh=[0.0] * 47)
    assert "sh must contain 48 values" in str(exc_info.value)


def test_surface_particle_needs_zero_third_scale():
    with pytest.raises(ValueError) as exc_info:
        Particle(mu=(0.0, 0.0, 0.0), opacity=0.5, kernel=KernelType.SURFACE_2D, scale=(1.0, 1.0, 1.0))
    assert "zero third scale component" in str(exc_info.value)
    p = Particle(mu=(0.0, 0.0, 0.0), opacity=0.5, kernel=KernelType.SURFACE_2D, scale=(1.0, 1.0, 0.0))
    assert p.scale[2] == 0.0


def test_volume_particle_rejects_zero_scale():
    with pytest.raises(ValueError):
        Particle(mu=(0.0, 0.0, 0.0), opacity=0.5, scale=(1.0, 0.0, 1.0))


def test_scene_from_particles_roundtrips_a_particle():
    p = Particle(mu=(1.0, -2.0, 0.5), quat=(0.0, 1.0, 0.0, 0.0), scale=(0.1, 0.2, 0.3), opacity=0.7,
                 kernel=KernelType.COSINE_MODULATED, psi=(1.0, 2.0, 3.0))
    scene = ParticleScene.from_particles([p], dtype=np.float64)
    assert len(scene) == 1
    back = scene.particle(0)
    assert back.mu == pytest.approx(p.mu)
    assert back.quat == pytest.approx(p.quat)
    assert back.kernel == KernelType.COSINE_MODULATED
    assert back.psi == pytest.approx(p.psi)


def test_scene_empty():
    scene = ParticleScene.empty()
    assert len(scene) == 0
    assert scene.sh.shape == (0, SH_COEFFS, 3)
    assert scene.finite_mask.shape == (0,)


def test_scene_finite_mask_flags_nan_particles():
    scene = make_scene(4, seed=1)
    positions = scene.positions.copy()
    positions[2, 0] = np.nan
    broken = ParticleScene(positions=positions, quaternions=scene.quaternions, scales=scene.scales,
                           opacities=scene.opacities, sh=scene.sh, dtype=np.float64)
    assert broken.finite_mask.tolist() == [True, True, False, True]


def test_scene_subset_and_concat():
    a = make_scene(5, seed=1)
    b = make_scene(3, seed=2)
    both = a.concat(b)
    assert len(both) == 8
    np.testing.assert_allclose(both.subset(np.arange(5, 8)).positions, b.positions)


def test_with_kernel_flattens_surface_particles():
    scene = make_scene(3, seed=4).with_kernel(KernelType.SURFACE_2D)
    assert np.all(scene.kernels == KernelType.SURFACE_2D)
    assert np.all(scene.scales[:, 2] == 0.0)
    gg = make_scene(3, seed=4).with_kernel(KernelType.GENERALIZED_GAUSSIAN)
    assert np.all(gg.degrees == 2.0)


def test_rotations_are_orthonormal():
    scene = make_scene(6, seed=5)
    r = scene.rotations
    np.testing.assert_allclose(np.einsum('nij,nkj->nik', r, r), np.broadcast_to(np.eye(3), r.shape), atol=1e-12)
