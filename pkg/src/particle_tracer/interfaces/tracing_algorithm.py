from abc import ABC, abstractmethod
from typing import Optional, Sequence, Tuple

import numpy as np

from src.particle_tracer.interfaces.traceable import ITraceable
from src.particle_tracer.models.results import RayResult
from src.particle_tracer.models.settings import RenderSettings


class ITracingAlgorithm(ABC):
    """
    Abstract Base Class for per-ray forward tracing schedules.
    Implementations differ in how they collect and order hits, not in the per-hit math.
    """

    @abstractmethod
    def trace(self, traceable: ITraceable, o: np.ndarray, d: np.ndarray, settings: RenderSettings,
              ray_id: int = 0, guide: Optional[Sequence[Tuple[float, int]]] = None) -> RayResult:
        """
        Traces one ray.

        Args:
            traceable: Scene or instance geometry.
            o: Ray origin.
            d: Unit ray direction.
            settings: Render settings.
            ray_id: Stable ray identifier, used to seed stochastic algorithms.
            guide: Optional hit sequence shared from another ray (tiled rendering).

        Returns:
            The RayResult for this ray.
        """
        pass
