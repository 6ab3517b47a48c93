"""
Alternative hit-scheduling algorithms compared against the k-buffer march.

All of them share the per-hit math of RayIntegrator; they differ in which hits they see and
in what order. Only KBuffer, NaiveClosestHit and (with enough capacity) Slab are exact.
"""
import logging
import math
from bisect import insort
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.particle_tracer.interfaces.acceleration_structure import HitAction
from src.particle_tracer.interfaces.traceable import ITraceable
from src.particle_tracer.interfaces.tracing_algorithm import ITracingAlgorithm
from src.particle_tracer.kernels import radiance_from_basis
from src.particle_tracer.models.results import RayResult
from src.particle_tracer.models.settings import MlatMergeRule, RenderSettings, TracingAlgorithm
from src.particle_tracer.services.acceleration.geometry import scene_interval
from src.particle_tracer.services.tracing.hit_buffer import Hit
from src.particle_tracer.services.tracing.kbuffer import RayIntegrator, collect_hit_sequence, march

logger = logging.getLogger(__name__)


def _as_arrays(o: np.ndarray, d: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return np.asarray(o, dtype=np.float64), np.asarray(d, dtype=np.float64)


class KBufferTracer(ITracingAlgorithm):
    def trace(self, traceable, o, d, settings, ray_id=0, guide=None) -> RayResult:
        return march(traceable, o, d, settings)


class NaiveClosestHitTracer(ITracingAlgorithm):
    """One closest-hit traversal per blended particle."""

    def trace(self, traceable, o, d, settings, ray_id=0, guide=None) -> RayResult:
        o, d = _as_arrays(o, d)
        interval = scene_interval(traceable, o, d)
        if interval is None:
            return RayResult()
        integrator = RayIntegrator(traceable, o, d, settings, interval[0])
        cursor: Hit = (interval[0], -1)
        rounds = 0
        while not integrator.terminated:
            best: List[Hit] = []

            def closest_hit(t: float, prim: int) -> HitAction:
                key = (t, prim)
                if key <= cursor:
                    return HitAction.IGNORE
                if not best or key < best[0]:
                    best[:] = [key]
                return HitAction.ACCEPT

            traceable.traverse(o, d, math.nextafter(cursor[0], -math.inf), math.inf, closest_hit)
            rounds += 1
            if not best:
                break
            cursor = best[0]
            integrator.process(*cursor)
        return integrator.finish(interval[1], rounds)


class SlabTracer(ITracingAlgorithm):
    """
    Splits the scene interval into equal slabs; one traversal per slab keeps the first k hits
    met in traversal order (order independent), which are then sorted and blended.
    """

    def __init__(self, slab_count: int):
        self.slab_count = slab_count

    def trace(self, traceable, o, d, settings, ray_id=0, guide=None) -> RayResult:
        o, d = _as_arrays(o, d)
        interval = scene_interval(traceable, o, d)
        if interval is None:
            return RayResult()
        t_lo, t_hi = interval
        integrator = RayIntegrator(traceable, o, d, settings, t_lo)
        edges = np.linspace(t_lo, t_hi, self.slab_count + 1)
        edges[-1] = t_hi
        rounds = 0
        for j in range(self.slab_count):
            if integrator.terminated:
                break
            collected: List[Hit] = []

            def first_k(t: float, prim: int) -> HitAction:
                if len(collected) < settings.k:
                    collected.append((t, prim))
                return HitAction.IGNORE

            lower = math.nextafter(float(edges[j]), -math.inf) if j == 0 else float(edges[j])
            traceable.traverse(o, d, lower, float(edges[j + 1]), first_k)
            rounds += 1
            for t_hit, prim in sorted(collected):
                if not integrator.process(t_hit, prim):
                    break
        return integrator.finish(t_hi, rounds)


class MlatTracer(ITracingAlgorithm):
    """
    Multi-layer alpha tracing: fragments are shaded inside the any-hit program and kept in a
    k-entry list sorted by t; on overflow two adjacent fragments are merged front-to-back.
    ``CLOSEST`` merges the adjacent pair with the smallest t gap, ``FARTHEST`` the last two.
    """

    def __init__(self, merge: MlatMergeRule):
        self.merge = merge

    def _merge(self, fragments: list):
        if self.merge == MlatMergeRule.FARTHEST:
            i = len(fragments) - 2
        else:
            gaps = [fragments[j + 1][0] - fragments[j][0] for j in range(len(fragments) - 1)]
            i = int(np.argmin(gaps))
        t_a, p_a, c_a, a_a, tau_a = fragments[i]
        _, _, c_b, a_b, tau_b = fragments[i + 1]
        alpha = 1.0 - (1.0 - a_a) * (1.0 - a_b)
        tau = (a_a * tau_a + (1.0 - a_a) * a_b * tau_b) / alpha
        fragments[i:i + 2] = [(t_a, p_a, c_a + (1.0 - a_a) * c_b, alpha, tau)]

    def trace(self, traceable, o, d, settings, ray_id=0, guide=None) -> RayResult:
        o, d = _as_arrays(o, d)
        interval = scene_interval(traceable, o, d)
        if interval is None:
            return RayResult()
        # any-hit order is arbitrary, so every fragment is sampled against the ray start
        integrator = RayIntegrator(traceable, o, d, settings, interval[0])
        fragments: list = []
        merges = [0]

        def shade(t: float, prim: int) -> HitAction:
            integrator.tau_cursor = interval[0]
            evaluated = integrator.evaluate(t, prim)
            if evaluated is None:
                return HitAction.IGNORE
            hit, sample = evaluated
            if not math.isfinite(sample.alpha):
                integrator.skipped += 1
                return HitAction.IGNORE
            if sample.alpha <= settings.alpha_min:
                return HitAction.IGNORE
            color = radiance_from_basis(hit.scene.sh[hit.particle], integrator.basis_for(hit))
            insort(fragments, (t, prim, sample.alpha * color, sample.alpha, sample.tau), key=lambda f: (f[0], f[1]))
            if len(fragments) > settings.k:
                self._merge(fragments)
                merges[0] += 1
            return HitAction.IGNORE

        traceable.traverse(o, d, math.nextafter(interval[0], -math.inf), math.inf, shade)
        for _, _, premultiplied, alpha, tau in fragments:
            if integrator.terminated:
                break
            integrator.radiance = integrator.radiance + integrator.transmittance * premultiplied
            integrator.depth += integrator.transmittance * alpha * tau
            integrator.transmittance *= 1.0 - alpha
            integrator.blended += 1
        if merges[0]:
            logger.debug(f"MLAT merged {merges[0]} fragment pairs.")
        return integrator.finish(interval[1], 1)


class TiledTracer(ITracingAlgorithm):
    """
    Blends the hit sequence of a guide ray (the tile centre) while evaluating alpha and colour
    with this ray's own origin and direction. Without a guide it traces its own sequence.
    """

    def trace(self, traceable, o, d, settings, ray_id=0, guide=None) -> RayResult:
        o, d = _as_arrays(o, d)
        if guide is None:
            return march(traceable, o, d, settings)
        interval = scene_interval(traceable, o, d)
        if interval is None:
            return RayResult()
        integrator = RayIntegrator(traceable, o, d, settings, interval[0])
        for t_hit, prim in guide:
            if not integrator.process(t_hit, prim):
                break
        return integrator.finish(interval[1], 0)


class StochasticDepthTracer(ITracingAlgorithm):
    """
    k independent trials walk the ordered hits and stop at the first hit accepted with
    probability alpha. L is the mean accepted colour and T the fraction of empty trials,
    an unbiased estimate of the blended result.
    """

    def trace(self, traceable, o, d, settings, ray_id=0, guide=None) -> RayResult:
        o, d = _as_arrays(o, d)
        interval = scene_interval(traceable, o, d)
        if interval is None:
            return RayResult()
        integrator = RayIntegrator(traceable, o, d, settings, interval[0])
        alphas, colors, taus = [], [], []
        for t_hit, prim in collect_hit_sequence(traceable, o, d, settings.k):
            evaluated = integrator.evaluate(t_hit, prim)
            if evaluated is None:
                continue
            hit, sample = evaluated
            if not math.isfinite(sample.alpha) or sample.alpha <= settings.alpha_min:
                continue
            alphas.append(sample.alpha)
            colors.append(radiance_from_basis(hit.scene.sh[hit.particle], integrator.basis_for(hit)))
            taus.append(sample.tau)
        trials = settings.k
        if not alphas:
            return integrator.finish(interval[1], 1)
        rng = np.random.default_rng([settings.seed, ray_id])
        accepted = rng.random((trials, len(alphas))) < np.asarray(alphas)[None, :]
        landed = accepted.any(axis=1)
        first = np.argmax(accepted, axis=1)[landed]
        colors_arr = np.asarray(colors)
        integrator.radiance = colors_arr[first].sum(axis=0) / trials
        integrator.transmittance = 1.0 - float(np.count_nonzero(landed)) / trials
        integrator.depth = float(np.asarray(taus)[first].sum()) / trials
        integrator.blended = int(np.count_nonzero(landed))
        return integrator.finish(interval[1], 1)


_FACTORIES: Dict[TracingAlgorithm, Callable[[RenderSettings], ITracingAlgorithm]] = {
    TracingAlgorithm.KBUFFER: lambda s: KBufferTracer(),
    TracingAlgorithm.NAIVE_CLOSEST_HIT: lambda s: NaiveClosestHitTracer(),
    TracingAlgorithm.SLAB: lambda s: SlabTracer(s.slab_count),
    TracingAlgorithm.MLAT: lambda s: MlatTracer(s.mlat_merge),
    TracingAlgorithm.TILED: lambda s: TiledTracer(),
    TracingAlgorithm.STOCHASTIC_DEPTH: lambda s: StochasticDepthTracer(),
}


def get_tracer(settings: RenderSettings) -> ITracingAlgorithm:
    return _FACTORIES[settings.algorithm](settings)


def trace_ray_variant(algorithm: TracingAlgorithm, traceable: ITraceable, o: np.ndarray, d: np.ndarray,
                      settings: RenderSettings, ray_id: int = 0,
                      guide: Optional[Sequence[Hit]] = None) -> RayResult:
    """Traces one ray with ``algorithm`` (overriding ``settings.algorithm``)."""
    return get_tracer(settings.model_copy(update={'algorithm': algorithm})).trace(
        traceable, o, d, settings, ray_id=ray_id, guide=guide)
