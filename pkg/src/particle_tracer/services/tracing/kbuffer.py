"""
The reference forward march: repeated k-buffer traversal rounds, each gathering the next k
proxy hits past a lexicographic (t, prim) cursor, blended front to back.

The cursor replaces an epsilon re-trace: each round traverses from just below the last
processed t and discards every hit not strictly after (t_last, prim_last), so no hit is lost
or repeated whatever k is. Early termination is tested before every hit, which keeps the
result independent of k.
"""
import logging
import math
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.particle_tracer.exceptions import ContractViolationError, NumericalError
from src.particle_tracer.interfaces.acceleration_structure import HitAction
from src.particle_tracer.interfaces.traceable import ITraceable, ResolvedHit
from src.particle_tracer.kernels import HitSample, radiance_from_basis, sample_hit, sh_basis
from src.particle_tracer.models.results import BlendRecord, RayResult
from src.particle_tracer.models.settings import RenderSettings
from src.particle_tracer.services.acceleration.geometry import scene_interval
from src.particle_tracer.services.tracing.hit_buffer import Hit, HitBuffer

logger = logging.getLogger(__name__)


def _upper_bound(t_stop: float) -> float:
    return math.nextafter(t_stop, -math.inf) if math.isfinite(t_stop) else math.inf


class RayIntegrator:
    """
    Front-to-back blending state of one ray: L += T * alpha * c, T *= 1 - alpha.

    Every particle (by ResolvedHit.key) is evaluated at most once per ray. ``tau_cursor`` is the
    proxy t of the previous evaluated hit; samples never move behind it.
    """

    def __init__(self, traceable: ITraceable, o: np.ndarray, d: np.ndarray, settings: RenderSettings,
                 t_scene_min: float, with_radiance: bool = True, record: bool = False,
                 transmittance: float = 1.0):
        self.traceable = traceable
        self.o = o
        self.d = d
        self.settings = settings
        self.with_radiance = with_radiance
        self.radiance = np.zeros(3)
        self.transmittance = transmittance
        self.depth = 0.0
        self.tau_cursor = t_scene_min
        self.last_t = -math.inf
        self.seen = set()
        self.hit_count = 0
        self.blended = 0
        self.skipped = 0
        self.records: Optional[List[BlendRecord]] = [] if record else None
        self._basis: Dict[int, np.ndarray] = {}

    @property
    def terminated(self) -> bool:
        return self.transmittance <= self.settings.t_min_transmittance

    def basis_for(self, hit: ResolvedHit) -> np.ndarray:
        basis = self._basis.get(hit.instance)
        if basis is None:
            degree = min(self.settings.sh_degree, hit.scene.sh_degree)
            basis = sh_basis(hit.direction, degree)
            self._basis[hit.instance] = basis
        return basis

    def evaluate(self, t_hit: float, prim: int) -> Optional[Tuple[ResolvedHit, HitSample]]:
        """Resolves and samples one hit; None for an already evaluated particle."""
        hit = self.traceable.resolve(prim, self.o, self.d)
        if hit.key in self.seen:
            return None
        self.seen.add(hit.key)
        self.hit_count += 1
        sample = sample_hit(hit.scene, hit.particle, hit.origin, hit.direction, self.tau_cursor, t_hit)
        self.tau_cursor = t_hit
        return hit, sample

    def blend(self, t_hit: float, prim: int, hit: ResolvedHit, sample: HitSample):
        alpha = sample.alpha
        if not math.isfinite(alpha):
            self.skipped += 1
            logger.warning(f"Particle {hit.particle} produced a non-finite alpha and was skipped.")
            return
        if alpha <= self.settings.alpha_min:
            return
        weight = self.transmittance * alpha
        color = basis = None
        if self.with_radiance:
            basis = self.basis_for(hit)
            color = radiance_from_basis(hit.scene.sh[hit.particle], basis)
            self.radiance = self.radiance + weight * color
        self.depth += weight * sample.tau
        if self.records is not None:
            self.records.append(BlendRecord(t_hit=t_hit, prim=prim, hit=hit, sample=sample, color=color,
                                            basis=basis, transmittance=self.transmittance))
        self.transmittance *= 1.0 - alpha
        self.blended += 1

    def process(self, t_hit: float, prim: int) -> bool:
        """Handles one hit in march order; returns False once the ray has terminated."""
        if self.terminated:
            return False
        if self.settings.debug and t_hit < self.last_t:
            raise ContractViolationError(f"hit order regressed: t={t_hit} after t={self.last_t}")
        self.last_t = t_hit
        evaluated = self.evaluate(t_hit, prim)
        if evaluated is not None:
            self.blend(t_hit, prim, *evaluated)
        return True

    def finish(self, t_end: float, rounds: int) -> RayResult:
        depth = self.depth + self.transmittance * t_end
        if not np.all(np.isfinite(self.radiance)) or not math.isfinite(self.transmittance):
            raise NumericalError(f"non-finite ray output: L={self.radiance}, T={self.transmittance}")
        return RayResult(
            radiance=self.radiance, transmittance=self.transmittance, depth=depth,
            hit_count=self.hit_count, blended=self.blended, rounds=rounds, skipped=self.skipped,
            records=self.records,
        )


def gather_round(traceable: ITraceable, o: np.ndarray, d: np.ndarray, k: int, cursor: Hit,
                 t_max: float) -> List[Hit]:
    """One traversal round: the k lexicographically closest hits strictly after ``cursor``."""
    buffer = HitBuffer(k)

    def any_hit(t: float, prim: int) -> HitAction:
        if (t, prim) <= cursor:
            return HitAction.IGNORE
        return buffer.any_hit(t, prim)

    traceable.traverse(o, d, math.nextafter(cursor[0], -math.inf), t_max, any_hit)
    return list(buffer.entries)


def march(traceable: ITraceable, o: np.ndarray, d: np.ndarray, settings: RenderSettings,
          t_stop: float = math.inf, with_radiance: bool = True, record: bool = False,
          transmittance: float = 1.0) -> RayResult:
    """
    Integrates the particles along o + t d with the k-buffer schedule.

    Args:
        traceable: Scene or instance geometry.
        o: Ray origin.
        d: Ray direction (unit for camera rays).
        settings: Render settings; k, alpha_min and t_min_transmittance are used.
        t_stop: Proxy hits at or beyond this distance are not integrated (mesh truncation).
        with_radiance: False skips colour evaluation (shadow rays).
        record: Keeps the blended samples for the backward pass.
        transmittance: Transmittance already accumulated in front of o (ray continuations).

    Returns:
        The RayResult; a ray missing the scene box returns L=0, T=1, depth=0.
    """
    o = np.asarray(o, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    interval = scene_interval(traceable, o, d)
    if interval is None:
        return RayResult(transmittance=transmittance, records=[] if record else None)
    t_scene_min, t_scene_max = interval
    t_end = min(t_scene_max, t_stop)
    integrator = RayIntegrator(traceable, o, d, settings, t_scene_min, with_radiance, record, transmittance)
    cursor: Hit = (t_scene_min, -1)
    t_max = _upper_bound(t_stop)
    rounds = 0
    while not integrator.terminated and cursor[0] <= t_scene_max:
        hits = gather_round(traceable, o, d, settings.k, cursor, t_max)
        rounds += 1
        if not hits:
            break
        for t_hit, prim in hits:
            if not integrator.process(t_hit, prim):
                break
            cursor = (t_hit, prim)
        logger.debug(f"round {rounds}: {len(hits)} hits, T={integrator.transmittance:.4f}")
    return integrator.finish(t_end, rounds)


def collect_hit_sequence(traceable: ITraceable, o: np.ndarray, d: np.ndarray, k: int = 16,
                         t_stop: float = math.inf) -> List[Hit]:
    """Every proxy hit along the ray in (t, prim) order, without blending or termination."""
    o = np.asarray(o, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    interval = scene_interval(traceable, o, d)
    if interval is None:
        return []
    cursor: Hit = (interval[0], -1)
    sequence: List[Hit] = []
    while True:
        hits = gather_round(traceable, o, d, k, cursor, _upper_bound(t_stop))
        if not hits:
            return sequence
        sequence.extend(hits)
        cursor = hits[-1]


def trace_ray(traceable: ITraceable, o: np.ndarray, d: np.ndarray, settings: RenderSettings) -> RayResult:
    """Forward render of one ray with the k-buffer algorithm."""
    return march(traceable, o, d, settings)
