"""Synthetic toy scenes and datasets for acceptance runs and the ``make-toy`` command."""
import logging
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy.spatial.transform import Rotation
from scipy.special import logit

from src.particle_tracer.kernels import SH_C0
from src.particle_tracer.models.camera import CameraModel, Pose
from src.particle_tracer.models.dataset import Dataset, TrainingView
from src.particle_tracer.models.particles import SH_COEFFS, KernelType, ParticleScene
from src.particle_tracer.models.settings import RenderSettings
from src.particle_tracer.orchestrator import RenderOrchestrator
from src.particle_tracer.services.acceleration.geometry import SceneGeometry
from src.particle_tracer.services.io.dataset import save_dataset
from src.particle_tracer.services.io.ply import save_ply

logger = logging.getLogger(__name__)

TOY_RADIUS = 1.0
CAMERA_DISTANCE = 3.5


def toy_scene(count: int = 200, seed: int = 0, kernel: KernelType = KernelType.GAUSSIAN,
              sh_degree: int = 0) -> ParticleScene:
    """
    ``count`` random anisotropic particles inside the unit ball with saturated colours.

    Higher SH bands get small random coefficients when ``sh_degree`` > 0.
    """
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal((count, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    positions = direction * (TOY_RADIUS * rng.uniform(0.0, 1.0, count) ** (1.0 / 3.0))[:, None]
    scales = rng.uniform(0.04, 0.15, (count, 3))
    if kernel == KernelType.SURFACE_2D:
        scales[:, 2] = 0.0
    colors = np.clip(rng.uniform(0.05, 0.95, (count, 3)), 1e-3, 1.0 - 1e-3)
    sh = np.zeros((count, SH_COEFFS, 3))
    sh[:, 0] = logit(colors) / SH_C0
    active = (sh_degree + 1) ** 2
    sh[:, 1:active] = rng.normal(0.0, 0.2, (count, active - 1, 3))
    quaternions = Rotation.random(count, random_state=seed).as_quat()[:, [3, 0, 1, 2]]
    return ParticleScene(
        positions=positions, quaternions=quaternions, scales=scales,
        opacities=rng.uniform(0.5, 0.95, count), sh=sh,
        kernels=np.full(count, int(kernel), dtype=np.int8), sh_degree=sh_degree, dtype=np.float64,
    )


def orbit_cameras(count: int, width: int, height: int, seed: int = 0, distance: float = CAMERA_DISTANCE,
                  fov_y_deg: float = 45.0) -> List[CameraModel]:
    """Pinhole cameras on a sphere around the origin, spread with a golden-angle spiral, all looking at it."""
    rng = np.random.default_rng(seed)
    index = np.arange(count) + 0.5
    z = 1.0 - 2.0 * index / count
    phi = np.pi * (1.0 + np.sqrt(5.0)) * index + rng.uniform(0.0, 2.0 * np.pi)
    ring = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    eyes = distance * np.stack([ring * np.cos(phi), ring * np.sin(phi), z], axis=1)
    return [CameraModel.pinhole(width, height, fov_y_deg, pose=Pose.look_at(eye, (0.0, 0.0, 0.0),
                                                                             up=(0.0, 0.0, -1.0)),
                                name=f"orbit_{i:03d}")
            for i, eye in enumerate(eyes)]


def render_views(scene: ParticleScene, cameras: List[CameraModel], settings: RenderSettings,
                 threads: int = 1) -> List[TrainingView]:
    orchestrator = RenderOrchestrator(SceneGeometry.from_settings(scene, settings), settings)
    return [TrainingView(camera=cam, image=orchestrator.render_image(cam, threads).image, name=cam.name or "")
            for cam in cameras]


def make_toy_dataset(count: int = 200, views: int = 30, test_views: int = 5, resolution: int = 128,
                     seed: int = 0, init_points: Optional[int] = None,
                     settings: Optional[RenderSettings] = None,
                     threads: int = 1) -> Tuple[ParticleScene, Dataset]:
    """
    Ground-truth toy scene plus rendered training and held-out views.

    The dataset's initialisation points are uniform in the scene's bounding cube with grey
    colours, so training starts from a random initialisation.
    """
    settings = settings or RenderSettings(seed=seed, t_min_transmittance=0.0)
    scene = toy_scene(count, seed)
    cameras = orbit_cameras(views + test_views, resolution, resolution, seed)
    rendered = render_views(scene, cameras, settings, threads)
    rng = np.random.default_rng(seed + 1)
    points = rng.uniform(-TOY_RADIUS, TOY_RADIUS, (init_points or count, 3))
    # held-out views interleave with the training orbit
    test_ids = set(np.linspace(0, len(cameras) - 1, test_views).round().astype(int).tolist()) if test_views else set()
    dataset = Dataset(
        views=[v for i, v in enumerate(rendered) if i not in test_ids],
        test_views=[v for i, v in enumerate(rendered) if i in test_ids],
        points=points, point_colors=np.full_like(points, 0.5),
    )
    logger.info(f"Toy dataset: {count} particles, {len(dataset.views)} training and "
                f"{len(dataset.test_views)} test views at {resolution}x{resolution}.")
    return scene, dataset


def write_toy_dataset(root: Union[str, Path], **kwargs) -> Tuple[ParticleScene, Dataset]:
    """Writes the toy dataset to ``root`` along with the ground-truth ``scene.ply``."""
    root = Path(root)
    scene, dataset = make_toy_dataset(**kwargs)
    save_dataset(root, dataset.views, dataset.test_views, dataset.points, dataset.point_colors)
    save_ply(scene, root / "scene.ply")
    return scene, dataset
