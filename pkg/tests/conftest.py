import hypothesis
import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from src.particle_tracer.models.camera import CameraModel, Pose
from src.particle_tracer.models.particles import SH_COEFFS, KernelType, ParticleScene

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.register_profile("debugger", report_multiple_bugs=False, deadline=None)
hypothesis.settings.register_profile("default", max_examples=25, deadline=None)
hypothesis.settings.load_profile("default")


def make_scene(count: int, seed: int = 0, kernel: KernelType = KernelType.GAUSSIAN, spread: float = 1.0,
               sh_degree: int = 3, opacity=(0.3, 0.95)) -> ParticleScene:
    """Random float64 scene inside a cube of half-width ``spread``."""
    rng = np.random.default_rng(seed)
    scales = rng.uniform(0.05, 0.3, (count, 3))
    if kernel == KernelType.SURFACE_2D:
        scales[:, 2] = 0.0
    psi = rng.normal(0.0, 2.0, (count, 3)) if kernel == KernelType.COSINE_MODULATED else np.zeros((count, 3))
    return ParticleScene(
        positions=rng.uniform(-spread, spread, (count, 3)),
        quaternions=Rotation.random(count, random_state=seed).as_quat()[:, [3, 0, 1, 2]] if count else np.zeros((0, 4)),
        scales=scales,
        opacities=rng.uniform(opacity[0], opacity[1], count),
        sh=rng.normal(0.0, 0.5, (count, SH_COEFFS, 3)),
        psi=psi,
        kernels=np.full(count, int(kernel), dtype=np.int8),
        sh_degree=sh_degree,
        dtype=np.float64,
    )


def make_camera(width: int = 8, height: int = 6, distance: float = 4.0, **kwargs) -> CameraModel:
    """Pinhole camera on the -z axis looking at the origin."""
    return CameraModel.pinhole(width, height, 50.0, pose=Pose.look_at((0.0, 0.0, -distance), (0.0, 0.0, 0.0)),
                               **kwargs)


@pytest.fixture
def small_scene() -> ParticleScene:
    return make_scene(12, seed=3)


@pytest.fixture
def camera() -> CameraModel:
    return make_camera()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def make_column(count: int = 5, spacing: float = 1.0, scale: float = 0.2, opacity: float = 0.5,
                seed: int = 0) -> ParticleScene:
    """Isotropic particles centred on the z axis, ``spacing`` apart, with degree-0 colours."""
    rng = np.random.default_rng(seed)
    z = (np.arange(count) - (count - 1) / 2.0) * spacing
    sh = np.zeros((count, SH_COEFFS, 3))
    sh[:, 0] = rng.normal(0.0, 1.0, (count, 3))
    return ParticleScene(
        positions=np.column_stack([np.zeros(count), np.zeros(count), z]),
        quaternions=np.tile([1.0, 0.0, 0.0, 0.0], (count, 1)),
        scales=np.full((count, 3), scale),
        opacities=np.full(count, opacity),
        sh=sh, sh_degree=0, dtype=np.float64,
    )
