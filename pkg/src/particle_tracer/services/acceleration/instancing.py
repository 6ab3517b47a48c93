"""
Two-level instancing: a top-level BVH over instance boxes whose leaves reference shared child
SceneGeometry objects. Rays are mapped into object space with the inverse instance transform
and the direction is left unnormalized, so t values stay comparable across instances.
"""
import logging
from bisect import bisect_right
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.particle_tracer.exceptions import ComposeError
from src.particle_tracer.interfaces.acceleration_structure import AnyHitCallback, HitAction
from src.particle_tracer.interfaces.traceable import ITraceable, ResolvedHit
from src.particle_tracer.services.acceleration.bvh import Bvh, ray_box_interval
from src.particle_tracer.services.acceleration.geometry import SceneGeometry

logger = logging.getLogger(__name__)

_CORNER_SIGNS = np.array([[i & 1, (i >> 1) & 1, (i >> 2) & 1] for i in range(8)], dtype=np.float64)


@dataclass
class Instance:
    """
    One placed copy of a child geometry; ``transform`` maps object to world space (4x4).

    ``crop`` is an optional object-space box (lo, hi). Only proxy hits inside it are reported.
    """
    transform: np.ndarray
    geometry: SceneGeometry
    crop: Optional[Tuple[np.ndarray, np.ndarray]] = None


def transform_box(transform: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    corners = lo + _CORNER_SIGNS * (hi - lo)
    world = corners @ transform[:3, :3].T + transform[:3, 3]
    return world.min(axis=0), world.max(axis=0)


class InstancedGeometry(ITraceable):
    """
    Instance tree over shared child geometries. Global primitive ``offset[i] + p`` is triangle
    ``p`` of instance ``i``; child BVHs are referenced, never copied.
    """

    def __init__(self, instances: Sequence[Instance]):
        self.instances: List[Instance] = list(instances)
        self._linear_inv: List[np.ndarray] = []
        self._translation: List[np.ndarray] = []
        prim_offsets, key_offsets = [0], [0]
        self._crops: List[Optional[Tuple[np.ndarray, np.ndarray]]] = []
        lo_boxes, hi_boxes = [], []
        for i, inst in enumerate(self.instances):
            m = np.asarray(inst.transform, dtype=np.float64)
            if m.shape != (4, 4):
                raise ComposeError(f"instance {i}: transform must be 4x4, got {m.shape}")
            linear = m[:3, :3]
            if abs(np.linalg.det(linear)) < 1e-12:
                raise ComposeError(f"instance {i}: transform is not invertible")
            self._linear_inv.append(np.linalg.inv(linear))
            self._translation.append(m[:3, 3].copy())
            prim_offsets.append(prim_offsets[-1] + len(inst.geometry))
            key_offsets.append(key_offsets[-1] + len(inst.geometry.scene))
            crop = None
            if inst.crop is not None:
                crop = (np.asarray(inst.crop[0], dtype=np.float64), np.asarray(inst.crop[1], dtype=np.float64))
                if np.any(crop[0] > crop[1]):
                    raise ComposeError(f"instance {i}: crop box minimum exceeds its maximum")
            self._crops.append(crop)
            lo, hi = np.full(3, np.inf), np.full(3, -np.inf)
            if len(inst.geometry):
                lo, hi = inst.geometry.bounds()
                if crop is not None:
                    lo, hi = np.maximum(lo, crop[0]), np.minimum(hi, crop[1])
                if np.all(lo <= hi):
                    lo, hi = transform_box(m, lo, hi)
            lo_boxes.append(lo)
            hi_boxes.append(hi)
        self._prim_offsets = prim_offsets
        self._key_offsets = key_offsets
        live = [i for i in range(len(self.instances)) if np.all(lo_boxes[i] <= hi_boxes[i])]
        self._live = live
        self.top = Bvh.build_from_boxes(np.array([lo_boxes[i] for i in live]).reshape(-1, 3),
                                        np.array([hi_boxes[i] for i in live]).reshape(-1, 3))
        shared = len({id(inst.geometry) for inst in self.instances})
        logger.info(f"Instance tree built: {len(self.instances)} instances over {shared} child geometries.")

    def to_object(self, instance: int, o: np.ndarray, d: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        inv = self._linear_inv[instance]
        return inv @ (np.asarray(o, dtype=np.float64) - self._translation[instance]), inv @ np.asarray(d, dtype=np.float64)

    def traverse(self, o: np.ndarray, d: np.ndarray, t_min: float, t_max: float,
                 callback: AnyHitCallback) -> float:
        def visit(leaf: int, lo: float, hi: float) -> float:
            instance = self._live[leaf]
            o_l, d_l = self.to_object(instance, o, d)
            offset = self._prim_offsets[instance]
            crop = self._crops[instance]
            if crop is None:
                def forward(t: float, prim: int) -> HitAction:
                    return callback(t, offset + prim)

                return self.instances[instance].geometry.bvh.traverse_anyhit(o_l, d_l, lo, hi, forward)

            span = ray_box_interval(o_l, d_l, *crop)
            if span is None or span[1] <= lo or span[0] > hi:
                return hi
            # (lo, hi] narrowed to the box; only an accepted hit may shrink the caller's hi
            accepted = hi

            def forward_cropped(t: float, prim: int) -> HitAction:
                nonlocal accepted
                action = callback(t, offset + prim)
                if action == HitAction.ACCEPT:
                    accepted = min(accepted, t)
                return action

            inner_lo = max(lo, np.nextafter(span[0], -np.inf))
            self.instances[instance].geometry.bvh.traverse_anyhit(o_l, d_l, inner_lo, min(hi, span[1]),
                                                                  forward_cropped)
            return accepted

        return self.top.traverse_leaves(o, d, t_min, t_max, visit)

    def resolve(self, prim: int, o: np.ndarray, d: np.ndarray) -> ResolvedHit:
        instance = bisect_right(self._prim_offsets, prim) - 1
        child = self.instances[instance].geometry
        local = child.resolve(prim - self._prim_offsets[instance], *self.to_object(instance, o, d))
        return ResolvedHit(
            key=self._key_offsets[instance] + local.particle, scene=local.scene, particle=local.particle,
            origin=local.origin, direction=local.direction, instance=instance,
        )

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.top.bounds()

    def __len__(self) -> int:
        return self._prim_offsets[-1]
