import logging
import time
from typing import Any, Dict, Optional, Sequence

import numpy as np

from src.particle_tracer.exceptions import NumericalError
from src.particle_tracer.interfaces.traceable import ITraceable
from src.particle_tracer.models.camera import CameraModel
from src.particle_tracer.models.meshes import PointLight
from src.particle_tracer.models.results import RayResult, RenderOutput
from src.particle_tracer.models.settings import RenderSettings, TracingAlgorithm
from src.particle_tracer.services.cameras.raygen import RayBundle, generate_rays, rays_for_pixels, sample_rng
from src.particle_tracer.services.tracing.effects import DEFAULT_MAX_BOUNCES, MeshScene, trace_with_meshes
from src.particle_tracer.services.tracing.kbuffer import collect_hit_sequence
from src.particle_tracer.services.tracing.variants import get_tracer
from src.particle_tracer.utils.parallel import run_chunks, shared_payload, split_range

logger = logging.getLogger(__name__)


def _trace_one(payload: Dict[str, Any], i: int, guides: Dict[int, list]) -> RayResult:
    o = payload["origins"][i]
    d = payload["directions"][i]
    settings: RenderSettings = payload["settings"]
    meshes: Optional[MeshScene] = payload["meshes"]
    if meshes is not None and len(meshes):
        return trace_with_meshes(payload["traceable"], meshes, o, d, settings,
                                 payload["max_bounces"], payload["lights"])
    guide = None
    tiles = payload.get("tile_of_ray")
    if tiles is not None:
        tile = int(tiles[i])
        if tile not in guides:
            guides[tile] = collect_hit_sequence(payload["traceable"], payload["guide_origins"][tile],
                                                payload["guide_directions"][tile], settings.k)
        guide = guides[tile]
    return payload["tracer"].trace(payload["traceable"], o, d, settings, int(payload["ray_ids"][i]), guide)


def _render_chunk(indices: range) -> Dict[str, np.ndarray]:
    payload = shared_payload()
    n = len(indices)
    out = {
        "radiance": np.zeros((n, 3)), "transmittance": np.ones(n), "depth": np.zeros(n),
        "hits": np.zeros(n, dtype=np.int64), "rounds": np.zeros(n, dtype=np.int64),
        "skipped": np.zeros(n, dtype=np.int64),
    }
    guides: Dict[int, list] = {}
    for j, i in enumerate(indices):
        if not payload["valid"][i]:
            continue
        result = _trace_one(payload, i, guides)
        out["radiance"][j] = result.radiance
        out["transmittance"][j] = result.transmittance
        out["depth"][j] = result.depth
        out["hits"][j] = result.hit_count
        out["rounds"][j] = result.rounds
        out["skipped"][j] = result.skipped
    return out


class RenderOrchestrator:
    """
    Renders frames and ray batches: picks the tracing algorithm from the settings, routes
    rays through meshes when the scene has any, averages samples per pixel and fans the
    work out over worker processes.
    """

    def __init__(self, traceable: ITraceable, settings: RenderSettings, meshes: Optional[MeshScene] = None,
                 lights: Sequence[PointLight] = (), max_bounces: int = DEFAULT_MAX_BOUNCES):
        """
        Initializes the RenderOrchestrator.

        Args:
            traceable: Scene geometry (a SceneGeometry or an InstancedGeometry).
            settings: Render settings, including the algorithm and the worker count.
            meshes: Optional triangle meshes; rays then go through the mesh-aware tracer.
            lights: Point lights used by diffuse mesh surfaces.
            max_bounces: Bounce limit for mesh interactions.
        """
        self.traceable = traceable
        self.settings = settings
        self.meshes = meshes
        self.lights = list(lights)
        self.max_bounces = max_bounces
        self.tracer = get_tracer(settings)
        logger.debug(f"RenderOrchestrator ready: algorithm={settings.algorithm.value}, k={settings.k}, "
                     f"threads={settings.threads}.")

    def _payload(self, rays: RayBundle, ray_ids: np.ndarray) -> Dict[str, Any]:
        return {
            "traceable": self.traceable, "settings": self.settings, "tracer": self.tracer,
            "meshes": self.meshes, "lights": self.lights, "max_bounces": self.max_bounces,
            "origins": rays.origins, "directions": rays.directions, "valid": rays.valid, "ray_ids": ray_ids,
        }

    def _run(self, payload: Dict[str, Any], count: int, threads: int) -> Dict[str, np.ndarray]:
        chunks = split_range(count, threads * 4 if threads > 1 else 1)
        parts = run_chunks(_render_chunk, payload, chunks, threads)
        if not parts:
            return {"radiance": np.zeros((0, 3)), "transmittance": np.ones(0), "depth": np.zeros(0),
                    "hits": np.zeros(0, dtype=np.int64), "rounds": np.zeros(0, dtype=np.int64),
                    "skipped": np.zeros(0, dtype=np.int64)}
        return {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}

    def trace_bundle(self, rays: RayBundle, threads: Optional[int] = None) -> Dict[str, np.ndarray]:
        """Traces an arbitrary ray batch; returns per-ray radiance, transmittance, depth and counters."""
        threads = self.settings.threads if threads is None else threads
        ray_ids = rays.pixel_ids * self.settings.spp + rays.sample_ids
        return self._run(self._payload(rays, ray_ids), len(rays), threads)

    def _tile_guides(self, camera: CameraModel, sample_index: int, rng) -> Dict[str, np.ndarray]:
        n = self.settings.tile_size
        tiles_x = -(-camera.width // n)
        tiles_y = -(-camera.height // n)
        ty, tx = np.divmod(np.arange(tiles_x * tiles_y), tiles_x)
        cx = np.minimum(tx * n + n // 2, camera.width - 1)
        cy = np.minimum(ty * n + n // 2, camera.height - 1)
        guide = rays_for_pixels(camera, cx, cy, sample_index, rng)
        py, px = np.divmod(np.arange(camera.width * camera.height), camera.width)
        return {"tile_of_ray": (py // n) * tiles_x + px // n,
                "guide_origins": guide.origins, "guide_directions": guide.directions}

    def render_image(self, camera: CameraModel, threads: Optional[int] = None) -> RenderOutput:
        """
        Renders every pixel of ``camera`` with ``settings.spp`` samples.

        Returns:
            RenderOutput whose image is the mean of L + T * background over the valid samples;
            pixels the lens model cannot see stay 0 with a sample count of 0.
        """
        threads = self.settings.threads if threads is None else threads
        started = time.perf_counter()
        h, w = camera.height, camera.width
        n = h * w
        image = np.zeros((n, 3))
        trans = np.zeros(n)
        depth = np.zeros(n)
        hits = np.zeros(n)
        count = np.zeros(n, dtype=np.int64)
        rounds = skipped = 0
        background = np.asarray(self.settings.background, dtype=np.float64)
        for s in range(self.settings.spp):
            rng = sample_rng(self.settings, s)
            rays = generate_rays(camera, s, rng)
            payload = self._payload(rays, np.arange(n) * self.settings.spp + s)
            if self.settings.algorithm == TracingAlgorithm.TILED and self.meshes is None:
                payload.update(self._tile_guides(camera, s, rng))
            result = self._run(payload, n, threads)
            live = rays.valid
            image[live] += result["radiance"][live] + result["transmittance"][live, None] * background
            trans[live] += result["transmittance"][live]
            depth[live] += result["depth"][live]
            hits[live] += result["hits"][live]
            count[live] += 1
            rounds += int(result["rounds"].sum())
            skipped += int(result["skipped"].sum())
        seen = np.maximum(count, 1)
        image /= seen[:, None]
        trans = np.where(count > 0, trans / seen, 1.0)
        depth /= seen
        hits /= seen
        if not np.all(np.isfinite(image)):
            raise NumericalError("rendered image contains non-finite values")
        wall = time.perf_counter() - started
        stats = {
            "rays": int(count.sum()), "wall_seconds": wall, "mean_hits": float(hits.mean()) if n else 0.0,
            "rounds": rounds, "skipped_particles": skipped, "algorithm": self.settings.algorithm.value,
            "k": self.settings.k, "spp": self.settings.spp,
        }
        logger.info(f"Rendered {w}x{h} ({self.settings.spp} spp, {self.settings.algorithm.value}) "
                    f"in {wall:.2f}s, mean hits {stats['mean_hits']:.2f}.")
        return RenderOutput(image=image.reshape(h, w, 3), transmittance=trans.reshape(h, w),
                            depth=depth.reshape(h, w), hits=hits.reshape(h, w),
                            sample_count=count.reshape(h, w), stats=stats)
