"""
Trainable particle parameters in their raw domains (log scale, opacity logit, unnormalized
quaternion) together with the optimizer and the densification statistics.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import expit, logit

from src.particle_tracer.kernels import SH_C0
from src.particle_tracer.models.camera import CameraModel
from src.particle_tracer.models.particles import SH_COEFFS, KernelType, ParticleScene
from src.particle_tracer.models.train_config import TrainConfig
from src.particle_tracer.optim.adam import Adam, ParamGroup

logger = logging.getLogger(__name__)

PARAM_NAMES = ("position", "quaternion", "scale", "opacity", "sh_dc", "sh_rest", "psi")
COLOR_EPS = 1e-4
KNN_NEIGHBOURS = 3
MIN_SCALE_FRACTION = 1e-4


def _row_shapes(n: int) -> Dict[str, tuple]:
    return {"position": (n, 3), "quaternion": (n, 4), "scale": (n, 3), "opacity": (n,),
            "sh_dc": (n, 1, 3), "sh_rest": (n, SH_COEFFS - 1, 3), "psi": (n, 3)}


def scene_extent(cameras: Sequence[CameraModel]) -> float:
    """1.1 times the radius of the camera centres around their mean (1.1 for a single camera)."""
    centers = np.array([cam.pose0.center for cam in cameras], dtype=np.float64).reshape(-1, 3)
    if len(centers) == 0:
        return 1.1
    radius = float(np.linalg.norm(centers - centers.mean(axis=0), axis=1).max())
    return 1.1 * (radius if radius > 0.0 else 1.0)


def make_optimizer(config: TrainConfig, extent: float, n: int) -> Adam:
    groups = {
        "position": ParamGroup(lr=config.lr_position_init * extent),
        "quaternion": ParamGroup(lr=config.lr_rotation),
        "scale": ParamGroup(lr=config.lr_scale, eps=1e-15),
        "opacity": ParamGroup(lr=config.lr_opacity, eps=1e-15),
        "sh_dc": ParamGroup(lr=config.lr_albedo),
        "sh_rest": ParamGroup(lr=config.sh_rest_lr),
        "psi": ParamGroup(lr=config.lr_psi),
    }
    return Adam(groups, _row_shapes(n))


@dataclass
class TrainState:
    params: Dict[str, np.ndarray]
    kernels: np.ndarray
    degrees: np.ndarray
    optimizer: Adam
    scene_extent: float
    config: TrainConfig
    iteration: int = 0
    sh_degree: int = 0
    grad_accum: np.ndarray = None
    grad_vector_accum: np.ndarray = None
    observations: np.ndarray = None
    weight_accum: np.ndarray = None
    rng: np.random.Generator = field(default=None, repr=False)

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.default_rng(self.config.seed)
        if self.grad_accum is None:
            self.reset_statistics()

    def __len__(self) -> int:
        return len(self.params["position"])

    def reset_statistics(self):
        n = len(self)
        self.grad_accum = np.zeros(n)
        self.grad_vector_accum = np.zeros((n, 3))
        self.observations = np.zeros(n, dtype=np.int64)
        self.weight_accum = np.zeros(n)

    def to_scene(self, dtype: type = np.float64) -> ParticleScene:
        """Activated scene: exp(scale), sigmoid(opacity), normalized quaternion."""
        sh = np.concatenate([self.params["sh_dc"], self.params["sh_rest"]], axis=1)
        return ParticleScene(
            positions=self.params["position"], quaternions=self.params["quaternion"],
            scales=np.exp(self.params["scale"]), opacities=expit(self.params["opacity"]),
            sh=sh, psi=self.params["psi"], kernels=self.kernels, degrees=self.degrees,
            sh_degree=self.sh_degree, dtype=dtype,
        )

    def select(self, keep: np.ndarray):
        """Keeps only the rows in ``keep`` (boolean mask or indices) across every array."""
        for name in PARAM_NAMES:
            self.params[name] = self.params[name][keep]
        self.kernels = self.kernels[keep]
        self.degrees = self.degrees[keep]
        self.grad_accum = self.grad_accum[keep]
        self.grad_vector_accum = self.grad_vector_accum[keep]
        self.observations = self.observations[keep]
        self.weight_accum = self.weight_accum[keep]
        self.optimizer.select(keep)

    def append(self, rows: Dict[str, np.ndarray], kernels: np.ndarray, degrees: np.ndarray):
        count = len(rows["position"])
        for name in PARAM_NAMES:
            self.params[name] = np.concatenate([self.params[name], rows[name]])
        self.kernels = np.concatenate([self.kernels, kernels])
        self.degrees = np.concatenate([self.degrees, degrees])
        self.grad_accum = np.concatenate([self.grad_accum, np.zeros(count)])
        self.grad_vector_accum = np.concatenate([self.grad_vector_accum, np.zeros((count, 3))])
        self.observations = np.concatenate([self.observations, np.zeros(count, dtype=np.int64)])
        self.weight_accum = np.concatenate([self.weight_accum, np.zeros(count)])
        self.optimizer.append(count)

    def rows(self, index: np.ndarray) -> Dict[str, np.ndarray]:
        return {name: self.params[name][index].copy() for name in PARAM_NAMES}

    def position_lr(self) -> float:
        """Exponential decay from lr_position_init to lr_position_final over total_iters, times the extent."""
        c = self.config
        progress = min(max(self.iteration / max(c.total_iters, 1), 0.0), 1.0)
        lr = np.exp((1.0 - progress) * np.log(c.lr_position_init) + progress * np.log(c.lr_position_final))
        return float(lr) * self.scene_extent

    @classmethod
    def from_scene(cls, scene: ParticleScene, config: TrainConfig, extent: float) -> 'TrainState':
        n = len(scene)
        sh = scene.sh.astype(np.float64)
        with np.errstate(divide='ignore'):
            scale_log = np.log(scene.scales.astype(np.float64))
        params = {
            "position": scene.positions.astype(np.float64).copy(),
            "quaternion": scene.quaternions.astype(np.float64).copy(),
            "scale": scale_log,
            "opacity": logit(np.clip(scene.opacities.astype(np.float64), 1e-7, 1.0 - 1e-7)),
            "sh_dc": sh[:, :1].copy(), "sh_rest": sh[:, 1:].copy(),
            "psi": scene.psi.astype(np.float64).copy(),
        }
        return cls(params=params, kernels=scene.kernels.copy(), degrees=scene.degrees.astype(np.float64),
                   optimizer=make_optimizer(config, extent, n), scene_extent=extent, config=config,
                   sh_degree=min(scene.sh_degree, config.max_sh_degree))


def init_from_points(points: np.ndarray, colors: Optional[np.ndarray], cameras: Sequence[CameraModel],
                     config: TrainConfig) -> TrainState:
    """
    One isotropic Gaussian per point. The scale is the mean distance to the three nearest
    neighbours (at least 1e-4 of the scene extent), opacity starts at ``config.init_opacity``
    and the SH DC term is chosen so the degree-0 radiance equals the point colour.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise ValueError("at least one initialisation point is required")
    n = len(points)
    extent = scene_extent(cameras)
    floor = MIN_SCALE_FRACTION * extent
    if n > 1:
        k = min(KNN_NEIGHBOURS, n - 1)
        distances, _ = cKDTree(points).query(points, k=k + 1)
        mean_distance = distances[:, 1:].reshape(n, k).mean(axis=1)
    else:
        mean_distance = np.zeros(1)
    radius = np.maximum(mean_distance, floor)

    if colors is None:
        colors = np.full((n, 3), 0.5)
    colors = np.clip(np.asarray(colors, dtype=np.float64).reshape(n, 3), COLOR_EPS, 1.0 - COLOR_EPS)
    params = {
        "position": points.copy(),
        "quaternion": np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        "scale": np.repeat(np.log(radius)[:, None], 3, axis=1),
        "opacity": np.full(n, float(logit(config.init_opacity))),
        "sh_dc": (logit(colors) / SH_C0)[:, None, :],
        "sh_rest": np.zeros((n, SH_COEFFS - 1, 3)),
        "psi": np.zeros((n, 3)),
    }
    kernel = KernelType.GAUSSIAN if config.kernel is None else config.kernel
    degree = 2.0 if kernel == KernelType.GENERALIZED_GAUSSIAN else 1.0
    if kernel == KernelType.SURFACE_2D:
        params["scale"][:, 2] = -np.inf  # flat: exp(-inf) = 0
    logger.info(f"Initialised {n} particles from points; scene extent {extent:.3f}.")
    return TrainState(params=params, kernels=np.full(n, int(kernel), dtype=np.int8), degrees=np.full(n, degree),
                      optimizer=make_optimizer(config, extent, n), scene_extent=extent, config=config)
