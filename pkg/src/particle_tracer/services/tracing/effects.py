"""
Particles mixed with triangle meshes: a separate mesh BVH provides the closest surface hit,
particles are integrated only up to it, and the surface material decides how the ray goes on.
"""
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.particle_tracer.interfaces.acceleration_structure import HitAction
from src.particle_tracer.interfaces.traceable import ITraceable
from src.particle_tracer.models.meshes import DiffuseMaterial, Material, MirrorMaterial, PointLight, RefractMaterial
from src.particle_tracer.models.results import RayResult
from src.particle_tracer.models.settings import RenderSettings
from src.particle_tracer.services.acceleration.bvh import Bvh
from src.particle_tracer.services.tracing.kbuffer import march

logger = logging.getLogger(__name__)

SELF_HIT_EPS = 1e-6
DEFAULT_MAX_BOUNCES = 8


class MeshScene:
    """Triangles with one material each, in a double-sided BVH of their own."""

    def __init__(self, triangle_vertices: np.ndarray, materials: Sequence[Material]):
        self.triangle_vertices = np.asarray(triangle_vertices, dtype=np.float64).reshape(-1, 3, 3)
        if len(materials) != len(self.triangle_vertices):
            raise ValueError(f"{len(self.triangle_vertices)} triangles but {len(materials)} materials")
        self.materials: List[Material] = list(materials)
        normals = np.cross(self.triangle_vertices[:, 1] - self.triangle_vertices[:, 0],
                           self.triangle_vertices[:, 2] - self.triangle_vertices[:, 0])
        lengths = np.linalg.norm(normals, axis=1, keepdims=True)
        self.normals = normals / np.where(lengths > 0.0, lengths, 1.0)
        self.bvh = Bvh.build(self.triangle_vertices, np.ones(len(self.triangle_vertices), dtype=bool))

    @classmethod
    def from_meshes(cls, meshes: Sequence[Tuple[np.ndarray, Material]]) -> 'MeshScene':
        tris = [np.asarray(t, dtype=np.float64).reshape(-1, 3, 3) for t, _ in meshes]
        materials: List[Material] = []
        for t, (_, material) in zip(tris, meshes):
            materials.extend([material] * len(t))
        return cls(np.concatenate(tris) if tris else np.zeros((0, 3, 3)), materials)

    def __len__(self) -> int:
        return len(self.triangle_vertices)

    def closest_hit(self, o: np.ndarray, d: np.ndarray, t_min: float = SELF_HIT_EPS,
                    t_max: float = math.inf) -> Optional[Tuple[float, int]]:
        best: List[Tuple[float, int]] = []

        def closest(t: float, prim: int) -> HitAction:
            if not best or (t, prim) < best[0]:
                best[:] = [(t, prim)]
            return HitAction.ACCEPT

        self.bvh.traverse_anyhit(o, d, t_min, t_max, closest)
        return best[0] if best else None


def reflect(d: np.ndarray, n: np.ndarray) -> np.ndarray:
    return d - 2.0 * float(d @ n) * n


def refract(d: np.ndarray, n: np.ndarray, ior: float) -> np.ndarray:
    """
    Snell refraction of unit ``d`` through a surface with geometric normal ``n``.
    Entering when d faces against n (eta = 1/ior), leaving otherwise; total internal
    reflection falls back to the mirror direction.
    """
    cos_i = -float(d @ n)
    eta = 1.0 / ior
    if cos_i < 0.0:
        n = -n
        cos_i = -cos_i
        eta = ior
    k = 1.0 - eta * eta * (1.0 - cos_i * cos_i)
    if k < 0.0:
        return reflect(d, n)
    out = eta * d + (eta * cos_i - math.sqrt(k)) * n
    return out / np.linalg.norm(out)


def shadow_factor(traceable: ITraceable, x: np.ndarray, light_pos: np.ndarray, settings: RenderSettings,
                  meshes: Optional[MeshScene] = None) -> float:
    """
    Particle transmittance on the segment from ``x`` to the light; an opaque mesh in between
    gives 0.
    """
    x = np.asarray(x, dtype=np.float64)
    to_light = np.asarray(light_pos, dtype=np.float64) - x
    distance = float(np.linalg.norm(to_light))
    if distance == 0.0:
        return 1.0
    d = to_light / distance
    if meshes is not None and len(meshes) and meshes.closest_hit(x, d, SELF_HIT_EPS, distance) is not None:
        return 0.0
    return march(traceable, x, d, settings, t_stop=distance, with_radiance=False).transmittance


def trace_with_meshes(traceable: ITraceable, meshes: Optional[MeshScene], o: np.ndarray, d: np.ndarray,
                      settings: RenderSettings, max_bounces: int = DEFAULT_MAX_BOUNCES,
                      lights: Sequence[PointLight] = ()) -> RayResult:
    """
    Traces a ray through particles and meshes.

    Mirror surfaces reflect, refractive ones bend the ray (mirror on total internal reflection),
    diffuse ones add albedo times the mean light visibility and end the ray. A ray still
    bouncing after ``max_bounces`` is terminated with its accumulated radiance and T = 0.

    Returns:
        RayResult whose depth is the distance to the first surface or the particle depth.
    """
    o = np.asarray(o, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if meshes is None or len(meshes) == 0:
        return march(traceable, o, d, settings)

    radiance = np.zeros(3)
    transmittance = 1.0
    hit_count = blended = rounds = 0
    depth = None
    for bounce in range(max_bounces + 1):
        surface = meshes.closest_hit(o, d, 0.0 if bounce == 0 else SELF_HIT_EPS)
        t_stop = surface[0] if surface is not None else math.inf
        segment = march(traceable, o, d, settings, t_stop=t_stop, transmittance=transmittance)
        radiance = radiance + segment.radiance
        transmittance = segment.transmittance
        hit_count += segment.hit_count
        blended += segment.blended
        rounds += segment.rounds
        if depth is None:
            depth = t_stop if surface is not None else segment.depth
        if surface is None or transmittance <= settings.t_min_transmittance:
            break
        t_surf, tri = surface
        x = o + t_surf * d
        material = meshes.materials[tri]
        normal = meshes.normals[tri]
        if isinstance(material, DiffuseMaterial):
            visibility = 1.0
            if lights:
                visibility = float(np.mean([shadow_factor(traceable, x, light.position, settings, meshes)
                                            for light in lights]))
            radiance = radiance + transmittance * visibility * np.asarray(material.albedo)
            transmittance = 0.0
            break
        if isinstance(material, MirrorMaterial):
            d = reflect(d, normal)
        elif isinstance(material, RefractMaterial):
            d = refract(d, normal, material.ior)
        o = x
    else:
        logger.debug(f"Ray exceeded {max_bounces} bounces; terminated.")
        transmittance = 0.0
    return RayResult(radiance=radiance, transmittance=transmittance, depth=float(depth or 0.0),
                     hit_count=hit_count, blended=blended, rounds=rounds)
