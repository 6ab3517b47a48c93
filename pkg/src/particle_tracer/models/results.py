from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from src.particle_tracer.interfaces.traceable import ResolvedHit
from src.particle_tracer.kernels import HitSample


@dataclass
class BlendRecord:
    """One blended sample as replayed by the backward pass."""
    t_hit: float
    prim: int
    hit: ResolvedHit
    sample: HitSample
    color: np.ndarray
    basis: np.ndarray
    transmittance: float  # before this sample


@dataclass
class RayResult:
    """
    Output of one traced ray. ``depth`` is the transmittance-weighted sample distance plus
    the residual transmittance times tau_SceneMax.
    """
    radiance: np.ndarray = field(default_factory=lambda: np.zeros(3))
    transmittance: float = 1.0
    depth: float = 0.0
    hit_count: int = 0
    blended: int = 0
    rounds: int = 0
    skipped: int = 0
    records: Optional[List[BlendRecord]] = field(default=None, repr=False)

    def composite(self, background: np.ndarray) -> np.ndarray:
        return self.radiance + self.transmittance * np.asarray(background, dtype=np.float64)


@dataclass
class RenderOutput:
    """
    A rendered frame. ``image`` is linear radiance already composited over the background;
    ``sample_count`` holds the samples averaged per pixel.
    """
    image: np.ndarray
    transmittance: np.ndarray
    depth: np.ndarray
    hits: np.ndarray
    sample_count: np.ndarray
    stats: Dict[str, Any] = field(default_factory=dict)

    @property
    def mean_hits(self) -> float:
        return float(self.hits.mean()) if self.hits.size else 0.0
