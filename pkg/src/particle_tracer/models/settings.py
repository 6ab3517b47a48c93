from enum import Enum
from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.particle_tracer.models.particles import KernelType


class ProxyKind(str, Enum):
    """Bounding primitive inserted into the BVH for each particle."""
    ICOSAHEDRON_CLAMPED = "icosahedron"
    ICOSAHEDRON_UNCLAMPED = "icosahedron_unclamped"
    OCTAHEDRON = "octahedron"
    AABB = "aabb"


class TracingAlgorithm(str, Enum):
    KBUFFER = "kbuffer"
    NAIVE_CLOSEST_HIT = "naive"
    SLAB = "slab"
    MLAT = "mlat"
    TILED = "tiled"
    STOCHASTIC_DEPTH = "stochastic"


class MlatMergeRule(str, Enum):
    """Which adjacent pair of fragments multi-layer alpha tracing merges on overflow."""
    CLOSEST = "closest"
    FARTHEST = "farthest"


class RenderSettings(BaseModel):
    """
    Settings shared by every tracing algorithm.

    ``t_min_transmittance`` is 0.001 while training and typically 0.03 for inference.
    """
    model_config = ConfigDict(extra='forbid', frozen=True)

    k: int = Field(default=16, ge=1, description="Hit buffer capacity")
    alpha_min: float = Field(default=0.01, gt=0.0, lt=1.0, description="Minimum captured response")
    t_min_transmittance: float = Field(default=0.001, ge=0.0, lt=1.0, description="Early termination threshold")
    kernel: Optional[KernelType] = Field(default=None, description="Render every particle with this kernel")
    kernel_degree: Optional[float] = Field(default=None, ge=1.0)
    sh_degree: int = Field(default=3, ge=0, le=3)
    algorithm: TracingAlgorithm = TracingAlgorithm.KBUFFER
    proxy_kind: ProxyKind = ProxyKind.ICOSAHEDRON_CLAMPED
    tile_size: int = Field(default=2, ge=1, description="N for Tiled(N)")
    slab_count: int = Field(default=4, ge=1)
    mlat_merge: MlatMergeRule = MlatMergeRule.CLOSEST
    spp: int = Field(default=1, ge=1, description="Samples per pixel")
    seed: int = Field(default=0, ge=0)
    background: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    threads: int = Field(default=1, ge=1)
    debug: bool = False

    @field_validator('background')
    @classmethod
    def background_must_be_finite(cls, v: Tuple[float, float, float]):
        if any(c != c or c in (float('inf'), float('-inf')) for c in v):
            raise ValueError('background must be finite')
        return v
