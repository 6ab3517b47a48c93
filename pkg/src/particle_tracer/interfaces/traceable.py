from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from src.particle_tracer.interfaces.acceleration_structure import AnyHitCallback
from src.particle_tracer.models.particles import ParticleScene


@dataclass(frozen=True)
class ResolvedHit:
    """
    A proxy hit mapped back to the particle it bounds.

    ``origin``/``direction`` are the ray in the particle's frame of reference (object space for
    instances, with t left in world parameterization). ``key`` identifies the particle uniquely
    within the traceable and is used to blend every particle at most once per ray.
    """
    key: int
    scene: ParticleScene
    particle: int
    origin: np.ndarray
    direction: np.ndarray
    instance: int = 0


class ITraceable(ABC):
    """
    Abstract Base Class for particle geometry the tracers march through.
    Primitive indices are global to the traceable; hits are ordered by (t, prim).
    """

    @abstractmethod
    def traverse(self, o: np.ndarray, d: np.ndarray, t_min: float, t_max: float,
                 callback: AnyHitCallback) -> float:
        """Any-hit traversal over all proxy triangles; same contract as IAccelerationStructure."""
        pass

    @abstractmethod
    def resolve(self, prim: int, o: np.ndarray, d: np.ndarray) -> ResolvedHit:
        """Maps a global primitive index to its particle and the ray in that particle's frame."""
        pass

    @abstractmethod
    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """World-space box enclosing every proxy."""
        pass

    @abstractmethod
    def __len__(self) -> int:
        """Number of proxy triangles."""
        pass
