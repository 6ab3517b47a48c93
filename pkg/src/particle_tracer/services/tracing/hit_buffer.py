from bisect import insort
from typing import List, Optional, Tuple

import numpy as np

from src.particle_tracer.interfaces.acceleration_structure import HitAction

Hit = Tuple[float, int]


class HitBuffer:
    """
    Fixed-capacity buffer of the k closest hits of one traversal round, sorted by (t, prim).

    ``any_hit`` is the per-hit traversal program: hits that fit are inserted and ignored so the
    traversal keeps going; a hit beyond a full buffer is accepted, which shrinks t_max to it.
    """

    def __init__(self, k: int):
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        self.k = k
        self.entries: List[Hit] = []

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def full(self) -> bool:
        return len(self.entries) >= self.k

    @property
    def farthest(self) -> Optional[Hit]:
        return self.entries[-1] if self.entries else None

    def clear(self):
        self.entries.clear()

    def insert(self, t: float, prim: int) -> bool:
        """Inserts a hit in order; returns False when it is not closer than a full buffer's last entry."""
        key = (t, prim)
        if self.full and key >= self.entries[-1]:
            return False
        insort(self.entries, key)
        if len(self.entries) > self.k:
            self.entries.pop()
        return True

    def any_hit(self, t: float, prim: int) -> HitAction:
        return HitAction.IGNORE if self.insert(t, prim) else HitAction.ACCEPT

    def as_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        """(t, prim) arrays of length k padded with (+inf, -1)."""
        t = np.full(self.k, np.inf)
        prim = np.full(self.k, -1, dtype=np.int64)
        for i, (th, p) in enumerate(self.entries):
            t[i], prim[i] = th, p
        return t, prim
