from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.particle_tracer.models.meshes import Material, MirrorMaterial, PointLight

Matrix4 = List[List[float]]


def _identity() -> Matrix4:
    return np.eye(4).tolist()


def _check_matrix(v: Matrix4) -> Matrix4:
    m = np.asarray(v, dtype=np.float64)
    if m.shape != (4, 4):
        raise ValueError(f"transform must be a 4x4 matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("transform must be finite")
    if abs(np.linalg.det(m[:3, :3])) < 1e-12:
        raise ValueError("transform is not invertible")
    return v


class InstanceSpec(BaseModel):
    """A placed copy of a particle scene, optionally cropped to a world box before placement."""
    model_config = ConfigDict(extra='forbid')

    transform: Matrix4 = Field(default_factory=_identity)
    scene: Optional[str] = Field(default=None, description="Scene file; the compose scene when omitted")
    crop_min: Optional[Tuple[float, float, float]] = None
    crop_max: Optional[Tuple[float, float, float]] = None

    @field_validator('transform')
    @classmethod
    def transform_must_be_invertible(cls, v: Matrix4):
        return _check_matrix(v)


class MeshSpec(BaseModel):
    model_config = ConfigDict(extra='forbid')

    path: str
    material: Material = Field(default_factory=MirrorMaterial)
    transform: Matrix4 = Field(default_factory=_identity)

    @field_validator('transform')
    @classmethod
    def transform_must_be_invertible(cls, v: Matrix4):
        return _check_matrix(v)


class ComposeSpec(BaseModel):
    """
    Effect composition: particle instances, triangle meshes with materials, point lights and a
    camera file. Relative paths are resolved against the compose file's directory.
    """
    model_config = ConfigDict(extra='forbid')

    scene: str
    camera: str
    instances: List[InstanceSpec] = Field(default_factory=list)
    meshes: List[MeshSpec] = Field(default_factory=list)
    lights: List[PointLight] = Field(default_factory=list)
    settings: Dict[str, Any] = Field(default_factory=dict)
    max_bounces: int = Field(default=8, ge=0)
    output: Optional[str] = None

    @model_validator(mode='after')
    def crops_are_paired(self) -> 'ComposeSpec':
        for i, inst in enumerate(self.instances):
            if (inst.crop_min is None) != (inst.crop_max is None):
                raise ValueError(f"instance {i}: crop_min and crop_max must be given together")
        return self
