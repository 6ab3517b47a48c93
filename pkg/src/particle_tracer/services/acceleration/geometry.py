import logging
import time
from typing import Optional, Tuple

import numpy as np

from src.particle_tracer.interfaces.acceleration_structure import AnyHitCallback
from src.particle_tracer.interfaces.traceable import ITraceable, ResolvedHit
from src.particle_tracer.models.particles import ParticleScene
from src.particle_tracer.models.settings import ProxyKind, RenderSettings
from src.particle_tracer.proxies import DEFAULT_ALPHA_MIN, ProxySet, rebuild_proxies
from src.particle_tracer.services.acceleration.bvh import Bvh, ray_box_interval

logger = logging.getLogger(__name__)


class SceneGeometry(ITraceable):
    """
    A particle scene with its proxies and BVH.

    ``update`` refits the tree when the proxy topology is unchanged and rebuilds it otherwise.
    """

    def __init__(self, scene: ParticleScene, proxy_kind: ProxyKind = ProxyKind.ICOSAHEDRON_CLAMPED,
                 alpha_min: float = DEFAULT_ALPHA_MIN):
        self.proxy_kind = proxy_kind
        self.alpha_min = alpha_min
        self.build_seconds = 0.0
        self.refits = 0
        self.rebuilds = 0
        self.scene = scene
        self.proxies: ProxySet = rebuild_proxies(scene, proxy_kind, alpha_min)
        self.bvh: Bvh = self._build()

    @classmethod
    def from_settings(cls, scene: ParticleScene, settings: RenderSettings) -> 'SceneGeometry':
        """Builds geometry for ``scene``, switching every particle to ``settings.kernel`` when set."""
        if settings.kernel is not None:
            scene = scene.with_kernel(settings.kernel, settings.kernel_degree)
        return cls(scene, settings.proxy_kind, settings.alpha_min)

    def _build(self) -> Bvh:
        started = time.perf_counter()
        bvh = Bvh.build(self.proxies.triangle_vertices, self.proxies.double_sided, self.proxies.prim_to_particle)
        self.build_seconds = time.perf_counter() - started
        self.rebuilds += 1
        self._prim_to_particle = self.proxies.prim_to_particle.tolist()
        logger.info(f"Scene geometry built: {len(self.scene)} particles, {len(self.proxies)} proxy triangles, "
                    f"{self.build_seconds * 1e3:.1f} ms.")
        return bvh

    def update(self, scene: ParticleScene) -> bool:
        """
        Points the geometry at new particle parameters.

        Returns:
            True when the BVH was refit in place, False when it had to be rebuilt.
        """
        proxies = rebuild_proxies(scene, self.proxy_kind, self.alpha_min)
        self.scene = scene
        same_topology = (len(proxies) == len(self.proxies)
                         and np.array_equal(proxies.prim_to_particle, self.proxies.prim_to_particle))
        self.proxies = proxies
        if same_topology:
            self.bvh.refit(proxies.triangle_vertices)
            self.refits += 1
            return True
        self.bvh = self._build()
        return False

    @property
    def skipped_particles(self) -> int:
        """Particles left out because of non-finite parameters."""
        return int(np.count_nonzero(~self.scene.finite_mask))

    def traverse(self, o: np.ndarray, d: np.ndarray, t_min: float, t_max: float,
                 callback: AnyHitCallback) -> float:
        return self.bvh.traverse_anyhit(o, d, t_min, t_max, callback)

    def resolve(self, prim: int, o: np.ndarray, d: np.ndarray) -> ResolvedHit:
        particle = self._prim_to_particle[prim]
        return ResolvedHit(key=particle, scene=self.scene, particle=particle, origin=o, direction=d)

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.bvh.bounds()

    def __len__(self) -> int:
        return len(self.proxies)


def scene_interval(traceable: ITraceable, o: np.ndarray, d: np.ndarray) -> Optional[Tuple[float, float]]:
    """(tau_SceneMin, tau_SceneMax) from the ray against the root box, clamped to t >= 0; None on a miss."""
    if len(traceable) == 0:
        return None
    lo, hi = traceable.bounds()
    hit = ray_box_interval(o, d, lo, hi)
    if hit is None:
        return None
    near, far = hit
    near = max(near, 0.0)
    if far < near:
        return None
    return near, far
