from abc import ABC, abstractmethod
from enum import Enum
from typing import Callable, Tuple

import numpy as np


class HitAction(Enum):
    """Any-hit callback verdict."""
    IGNORE = 0  # keep traversing, t_max unchanged
    ACCEPT = 1  # commit this hit: t_max shrinks to its t


AnyHitCallback = Callable[[float, int], HitAction]


class IAccelerationStructure(ABC):
    """
    Abstract Base Class for ray acceleration structures.
    Defines the any-hit traversal contract the tracers are written against.
    """

    @abstractmethod
    def traverse_anyhit(self, o: np.ndarray, d: np.ndarray, t_min: float, t_max: float,
                        callback: AnyHitCallback) -> float:
        """
        Reports every front-facing primitive hit with t in (t_min, t_max].

        Args:
            o: Ray origin.
            d: Ray direction; need not be unit length, t is measured in units of d.
            t_min: Exclusive lower bound.
            t_max: Inclusive upper bound; shrinks whenever the callback returns ACCEPT.
            callback: Invoked as callback(t_hit, prim_index); invocation order is unspecified.
                A hit lying exactly on an edge or vertex shared by several primitives is
                reported once.

        Returns:
            The committed t_max at the end of traversal.
        """
        pass

    @abstractmethod
    def refit(self, triangle_vertices: np.ndarray):
        """Re-tightens node boxes after primitives moved. The primitive count must be unchanged."""
        pass

    @abstractmethod
    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Root box as (lo, hi)."""
        pass

    @abstractmethod
    def __len__(self) -> int:
        """Number of primitives."""
        pass
