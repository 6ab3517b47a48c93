from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from src.particle_tracer.utils.rotations import normalize_quaternions, quat_to_rotmat

SCALE_EPS = 1e-8
SH_COEFFS = 16  # degree <= 3
SH_CHANNELS = 3


class KernelType(IntEnum):
    """Spatial falloff of a particle's density."""
    GAUSSIAN = 0
    GENERALIZED_GAUSSIAN = 1
    SURFACE_2D = 2
    COSINE_MODULATED = 3


class Particle(BaseModel):
    """
    A single particle. ``sh`` holds the 48 radiance coefficients coefficient-major,
    i.e. ``sh[3 * k + channel]`` for basis function ``k``.
    """
    mu: Tuple[float, float, float]
    quat: Tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    scale: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    opacity: float = Field(..., gt=0.0, lt=1.0, description="Activated opacity sigma")
    sh: List[float] = Field(default_factory=lambda: [0.0] * (SH_COEFFS * SH_CHANNELS))
    kernel: KernelType = KernelType.GAUSSIAN
    degree: Optional[float] = Field(default=None, ge=1.0, description="Generalized Gaussian degree n (default 2 for GG, else 1)")
    psi: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    @field_validator('sh')
    @classmethod
    def sh_must_have_48_values(cls, v: List[float]):
        if len(v) != SH_COEFFS * SH_CHANNELS:
            raise ValueError(f'sh must contain {SH_COEFFS * SH_CHANNELS} values, got {len(v)}')
        return v

    @model_validator(mode='after')
    def normalize_and_check_scale(self) -> 'Particle':
        if self.degree is None:
            self.degree = 2.0 if self.kernel == KernelType.GENERALIZED_GAUSSIAN else 1.0
        q = normalize_quaternions(np.asarray(self.quat, dtype=np.float64))
        self.quat = tuple(float(c) for c in q)
        s = self.scale
        if self.kernel == KernelType.SURFACE_2D:
            if s[2] != 0.0:
                raise ValueError('Surface2D particles must have a zero third scale component')
            if min(s[0], s[1]) < SCALE_EPS:
                raise ValueError(f'in-plane scale components must be >= {SCALE_EPS}')
        elif min(s) < SCALE_EPS:
            raise ValueError(f'scale components must be >= {SCALE_EPS}')
        return self


@dataclass
class ParticleScene:
    """
    Structure-of-arrays particle scene holding activated parameters.

    Quaternions are unit and w-first, scales are per-axis extents, opacities are sigma in (0, 1),
    ``sh`` has shape (N, 16, 3). Instances are treated as immutable once built; the cached
    rotation matrices are never invalidated.
    """
    positions: np.ndarray
    quaternions: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray
    sh: np.ndarray
    psi: np.ndarray = None
    kernels: np.ndarray = None
    degrees: np.ndarray = None
    sh_degree: int = 3
    dtype: type = field(default=np.float32, repr=False)

    def __post_init__(self):
        n = len(self.positions)
        dt = self.dtype
        self.positions = np.asarray(self.positions, dtype=dt).reshape(n, 3)
        self.quaternions = normalize_quaternions(np.asarray(self.quaternions, dtype=dt).reshape(n, 4)).astype(dt)
        self.scales = np.asarray(self.scales, dtype=dt).reshape(n, 3)
        self.opacities = np.asarray(self.opacities, dtype=dt).reshape(n)
        self.sh = np.asarray(self.sh, dtype=dt).reshape(n, SH_COEFFS, SH_CHANNELS)
        self.psi = np.zeros((n, 3), dtype=dt) if self.psi is None else np.asarray(self.psi, dtype=dt).reshape(n, 3)
        self.kernels = (np.zeros(n, dtype=np.int8) if self.kernels is None
                        else np.asarray(self.kernels, dtype=np.int8).reshape(n))
        if self.degrees is None:
            self.degrees = np.where(self.kernels == KernelType.GENERALIZED_GAUSSIAN, 2.0, 1.0).astype(dt)
        else:
            self.degrees = np.asarray(self.degrees, dtype=dt).reshape(n)

    def __len__(self) -> int:
        return len(self.positions)

    @classmethod
    def empty(cls, dtype: type = np.float32) -> 'ParticleScene':
        return cls(
            positions=np.zeros((0, 3)), quaternions=np.zeros((0, 4)), scales=np.zeros((0, 3)),
            opacities=np.zeros(0), sh=np.zeros((0, SH_COEFFS, SH_CHANNELS)), dtype=dtype,
        )

    @classmethod
    def from_particles(cls, particles: Sequence[Particle], dtype: type = np.float32) -> 'ParticleScene':
        if not particles:
            return cls.empty(dtype)
        return cls(
            positions=np.array([p.mu for p in particles]),
            quaternions=np.array([p.quat for p in particles]),
            scales=np.array([p.scale for p in particles]),
            opacities=np.array([p.opacity for p in particles]),
            sh=np.array([p.sh for p in particles]),
            psi=np.array([p.psi for p in particles]),
            kernels=np.array([int(p.kernel) for p in particles]),
            degrees=np.array([p.degree for p in particles]),
            dtype=dtype,
        )

    def particle(self, index: int) -> Particle:
        return Particle(
            mu=tuple(float(v) for v in self.positions[index]),
            quat=tuple(float(v) for v in self.quaternions[index]),
            scale=tuple(float(v) for v in self.scales[index]),
            opacity=float(self.opacities[index]),
            sh=[float(v) for v in self.sh[index].reshape(-1)],
            kernel=KernelType(int(self.kernels[index])),
            degree=float(self.degrees[index]),
            psi=tuple(float(v) for v in self.psi[index]),
        )

    @cached_property
    def rotations(self) -> np.ndarray:
        """Per-particle rotation matrices (N, 3, 3), computed in float64."""
        return quat_to_rotmat(self.quaternions.astype(np.float64))

    @cached_property
    def finite_mask(self) -> np.ndarray:
        """True for particles whose parameters are all finite (Surface2D zero scale allowed)."""
        n = len(self)
        if n == 0:
            return np.zeros(0, dtype=bool)
        parts = [
            self.positions.reshape(n, -1), self.quaternions.reshape(n, -1), self.scales.reshape(n, -1),
            self.opacities.reshape(n, -1), self.sh.reshape(n, -1), self.psi.reshape(n, -1),
        ]
        return np.all(np.isfinite(np.concatenate(parts, axis=1)), axis=1)

    def subset(self, indices: np.ndarray) -> 'ParticleScene':
        idx = np.asarray(indices)
        return ParticleScene(
            positions=self.positions[idx], quaternions=self.quaternions[idx], scales=self.scales[idx],
            opacities=self.opacities[idx], sh=self.sh[idx], psi=self.psi[idx], kernels=self.kernels[idx],
            degrees=self.degrees[idx], sh_degree=self.sh_degree, dtype=self.dtype,
        )

    def concat(self, other: 'ParticleScene') -> 'ParticleScene':
        return ParticleScene(
            positions=np.concatenate([self.positions, other.positions]),
            quaternions=np.concatenate([self.quaternions, other.quaternions]),
            scales=np.concatenate([self.scales, other.scales]),
            opacities=np.concatenate([self.opacities, other.opacities]),
            sh=np.concatenate([self.sh, other.sh]),
            psi=np.concatenate([self.psi, other.psi]),
            kernels=np.concatenate([self.kernels, other.kernels]),
            degrees=np.concatenate([self.degrees, other.degrees]),
            sh_degree=max(self.sh_degree, other.sh_degree), dtype=self.dtype,
        )

    def astype(self, dtype: type) -> 'ParticleScene':
        return ParticleScene(
            positions=self.positions, quaternions=self.quaternions, scales=self.scales,
            opacities=self.opacities, sh=self.sh, psi=self.psi, kernels=self.kernels,
            degrees=self.degrees, sh_degree=self.sh_degree, dtype=dtype,
        )

    def with_kernel(self, kernel: KernelType, degree: Optional[float] = None) -> 'ParticleScene':
        """Copy of the scene with every particle switched to ``kernel``."""
        n = len(self)
        if degree is None:
            degree = 2.0 if kernel == KernelType.GENERALIZED_GAUSSIAN else 1.0
        scales = self.scales.copy()
        if kernel == KernelType.SURFACE_2D:
            scales[:, 2] = 0.0
        return ParticleScene(
            positions=self.positions, quaternions=self.quaternions, scales=scales,
            opacities=self.opacities, sh=self.sh, psi=self.psi,
            kernels=np.full(n, int(kernel), dtype=np.int8), degrees=np.full(n, degree),
            sh_degree=self.sh_degree, dtype=self.dtype,
        )
