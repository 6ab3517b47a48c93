"""
Brute-force reference renderer and finite-difference gradients.

Nothing here touches the proxy builder, the BVH or the tracing algorithms: every particle's
bounding polyhedron is clipped against the ray directly from its face planes, all entry hits
are sorted globally and blended with the same alpha and colour math as the tracer. Used by
tests and acceptance runs only.
"""
import math
from enum import Enum
from functools import lru_cache
from itertools import combinations
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit, logit

from src.particle_tracer.kernels import eval_sh_radiance, sample_hit
from src.particle_tracer.models.camera import CameraModel
from src.particle_tracer.models.particles import KernelType, ParticleScene
from src.particle_tracer.models.results import RayResult
from src.particle_tracer.models.settings import ProxyKind, RenderSettings
from src.particle_tracer.services.cameras.raygen import generate_rays

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0
FD_STEP = 1e-4


class HitOrder(str, Enum):
    ENTRY = "entry"
    TAU_MAX = "tau_max"


def _icosahedron_vertices() -> np.ndarray:
    base = []
    for a in (-1.0, 1.0):
        for b in (-GOLDEN, GOLDEN):
            base += [(0.0, a, b), (a, b, 0.0), (b, 0.0, a)]
    # unit inradius
    return np.array(base) * math.sqrt(3.0) / (GOLDEN * GOLDEN)


def _octahedron_vertices() -> np.ndarray:
    return np.concatenate([np.eye(3), -np.eye(3)]) * math.sqrt(3.0)


@lru_cache(maxsize=None)
def _polyhedron(kind: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(vertices, face normals, face offsets) of a regular deltahedron centred at the origin."""
    vertices = _octahedron_vertices() if kind == ProxyKind.OCTAHEDRON.value else _icosahedron_vertices()
    dist = np.linalg.norm(vertices[:, None] - vertices[None], axis=-1)
    edge = dist[dist > 0].min()
    is_edge = np.isclose(dist, edge)
    normals, offsets = [], []
    for i, j, k in combinations(range(len(vertices)), 3):
        if is_edge[i, j] and is_edge[j, k] and is_edge[i, k]:
            centroid = (vertices[i] + vertices[j] + vertices[k]) / 3.0
            offsets.append(np.linalg.norm(centroid))
            normals.append(centroid / offsets[-1])
    return vertices, np.array(normals), np.array(offsets)


def _level_radius(scene: ParticleScene, alpha_min: float, clamped: bool) -> np.ndarray:
    sigma = scene.opacities.astype(np.float64) if clamped else np.ones(len(scene))
    with np.errstate(divide='ignore', invalid='ignore'):
        log_term = 2.0 * np.log(sigma / alpha_min)
    log_term = np.where(np.isfinite(log_term) & (log_term > 0.0), log_term, 0.0)
    return log_term ** (1.0 / (2.0 * scene.degrees.astype(np.float64)))


def _slab_interval(o: np.ndarray, d: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized ray/box interval over boxes (P, 3); the entry is NaN-free and +inf on a parallel miss."""
    with np.errstate(divide='ignore', invalid='ignore'):
        t0 = (lo - o) / d
        t1 = (hi - o) / d
    parallel = d == 0.0
    inside = (o >= lo) & (o <= hi)
    t0 = np.where(parallel, np.where(inside, -np.inf, np.inf), t0)
    t1 = np.where(parallel, np.where(inside, np.inf, -np.inf), t1)
    return np.minimum(t0, t1).max(axis=-1), np.maximum(t0, t1).min(axis=-1)


class _OracleScene:
    """Per-particle bounding shapes in the form the direct ray tests need."""

    def __init__(self, scene: ParticleScene, kind: ProxyKind, alpha_min: float):
        self.scene = scene
        self.kind = kind
        opacity = scene.opacities.astype(np.float64)
        radius = _level_radius(scene, alpha_min, kind != ProxyKind.ICOSAHEDRON_UNCLAMPED)
        self.live = scene.finite_mask & (opacity > alpha_min) & (radius > 0.0)
        self.surface = scene.kernels == KernelType.SURFACE_2D
        self.mu = scene.positions.astype(np.float64)
        self.rot = scene.rotations
        self.stretch = scene.scales.astype(np.float64) * radius[:, None]
        vertices, self.normals, self.offsets = _polyhedron(kind.value)
        quad = np.array([[-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [1.0, 1.0, 0.0], [-1.0, 1.0, 0.0]])
        n = len(scene)
        self.lo = np.full((n, 3), np.inf)
        self.hi = np.full((n, 3), -np.inf)
        for mask, corners in ((self.live & ~self.surface, vertices), (self.live & self.surface, quad)):
            ids = np.flatnonzero(mask)
            if not len(ids):
                continue
            world = np.einsum('nij,nvj->nvi', self.rot[ids], corners[None] * self.stretch[ids][:, None]) \
                + self.mu[ids][:, None]
            self.lo[ids] = world.min(axis=1)
            self.hi[ids] = world.max(axis=1)

    def bounds(self) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        if not np.any(self.live):
            return None
        return self.lo[self.live].min(axis=0), self.hi[self.live].max(axis=0)

    def entry_hits(self, o: np.ndarray, d: np.ndarray) -> List[Tuple[float, int]]:
        """Front-face entry distance (t >= 0) of every particle whose proxy the ray enters."""
        n = len(self.scene)
        t_hit = np.full(n, np.nan)
        o_l = np.einsum('nji,nj->ni', self.rot, o - self.mu)
        d_l = np.einsum('nji,j->ni', self.rot, d)

        quads = np.flatnonzero(self.live & self.surface)
        if len(quads):
            dz = d_l[quads, 2]
            with np.errstate(divide='ignore', invalid='ignore'):
                t = -o_l[quads, 2] / dz
                point = (o_l[quads, :2] + t[:, None] * d_l[quads, :2]) / self.stretch[quads, :2]
            ok = (dz != 0.0) & np.all(np.abs(point) <= 1.0, axis=1) & (t >= 0.0)
            t_hit[quads[ok]] = t[ok]

        solids = np.flatnonzero(self.live & ~self.surface)
        if len(solids) and self.kind == ProxyKind.AABB:
            near, far = _slab_interval(o, d, self.lo[solids], self.hi[solids])
            ok = (near <= far) & (near >= 0.0)
            t_hit[solids[ok]] = near[ok]
        elif len(solids):
            with np.errstate(divide='ignore', invalid='ignore'):
                o_c = o_l[solids] / self.stretch[solids]
                d_c = d_l[solids] / self.stretch[solids]
                num = self.offsets[None] - o_c @ self.normals.T
                den = d_c @ self.normals.T
                t = num / den
            entering = den < 0.0
            leaving = den > 0.0
            near = np.where(entering, t, -np.inf).max(axis=1)
            far = np.where(leaving, t, np.inf).min(axis=1)
            blocked = np.any((den == 0.0) & (num < 0.0), axis=1)
            ok = (np.any(entering, axis=1) & ~blocked & (near <= far) & (near >= 0.0)
                  & np.all(np.isfinite(o_c), axis=1) & np.all(np.isfinite(d_c), axis=1))
            t_hit[solids[ok]] = near[ok]

        hit = np.flatnonzero(np.isfinite(t_hit))
        return sorted((float(t_hit[i]), int(i)) for i in hit)


def oracle_render_ray(scene: ParticleScene, o: np.ndarray, d: np.ndarray, settings: RenderSettings,
                      order: HitOrder = HitOrder.ENTRY, prepared: Optional[_OracleScene] = None) -> RayResult:
    """
    Renders one ray by brute force.

    With ``HitOrder.ENTRY`` particles are blended in proxy-entry order (ties by particle index),
    which is the order the tracer produces. ``HitOrder.TAU_MAX`` blends in order of each
    particle's maximum-response distance instead, sampling every particle at that point; it
    measures the ordering approximation and is not expected to match the tracer.

    ``depth`` holds the transmittance-weighted sample distance plus the residual
    transmittance times the far side of the proxies' bounding box.
    """
    o = np.asarray(o, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if settings.kernel is not None:
        scene = scene.with_kernel(settings.kernel, settings.kernel_degree)
    prepared = prepared or _OracleScene(scene, settings.proxy_kind, settings.alpha_min)
    box = prepared.bounds()
    if box is None:
        return RayResult()
    near, far = _slab_interval(o, d, box[0][None], box[1][None])
    near, far = max(float(near[0]), 0.0), float(far[0])
    if far < near:
        return RayResult()

    hits = prepared.entry_hits(o, d)
    scene = prepared.scene
    degree = min(settings.sh_degree, scene.sh_degree)
    cursor = near
    samples = []
    for t_entry, index in hits:
        if order == HitOrder.TAU_MAX:
            samples.append(sample_hit(scene, index, o, d, -math.inf, t_entry))
        else:
            samples.append(sample_hit(scene, index, o, d, cursor, t_entry))
            cursor = t_entry
    if order == HitOrder.TAU_MAX:
        samples.sort(key=lambda s: (s.tau, s.particle))

    radiance = np.zeros(3)
    transmittance = 1.0
    depth = 0.0
    blended = skipped = 0
    for sample in samples:
        if transmittance <= settings.t_min_transmittance:
            break
        alpha = sample.alpha
        if not math.isfinite(alpha):
            skipped += 1
            continue
        if alpha <= settings.alpha_min:
            continue
        weight = transmittance * alpha
        radiance = radiance + weight * eval_sh_radiance(scene.sh[sample.particle], d, degree)
        depth += weight * sample.tau
        transmittance *= 1.0 - alpha
        blended += 1
    return RayResult(radiance=radiance, transmittance=transmittance, depth=depth + transmittance * far,
                     hit_count=len(hits), blended=blended, rounds=1, skipped=skipped)


def oracle_render(scene: ParticleScene, camera: CameraModel, settings: RenderSettings,
                  order: HitOrder = HitOrder.ENTRY) -> Tuple[np.ndarray, np.ndarray]:
    """Pixel-centre image composited over the background, and its transmittance; single sample."""
    if settings.kernel is not None:
        scene = scene.with_kernel(settings.kernel, settings.kernel_degree)
        settings = settings.model_copy(update={"kernel": None, "kernel_degree": None})
    prepared = _OracleScene(scene, settings.proxy_kind, settings.alpha_min)
    rays = generate_rays(camera)
    background = np.asarray(settings.background, dtype=np.float64)
    image = np.zeros((len(rays), 3))
    trans = np.ones(len(rays))
    for i in np.flatnonzero(rays.valid):
        result = oracle_render_ray(scene, rays.origins[i], rays.directions[i], settings, order, prepared)
        image[i] = result.radiance + result.transmittance * background
        trans[i] = result.transmittance
    return image.reshape(camera.height, camera.width, 3), trans.reshape(camera.height, camera.width)


def _perturbed(scene: ParticleScene, name: str, index: Tuple[int, ...], step: float) -> ParticleScene:
    fields = {
        "positions": scene.positions.copy(), "quaternions": scene.quaternions.copy(),
        "scales": scene.scales.copy(), "opacities": scene.opacities.copy(), "sh": scene.sh.copy(),
        "psi": scene.psi.copy(),
    }
    if name == "opacity_logit":
        i = index[0]
        fields["opacities"][i] = expit(logit(fields["opacities"][i]) + step)
    else:
        target = {"position": "positions", "quaternion": "quaternions", "scale": "scales",
                  "sh": "sh", "psi": "psi"}[name]
        fields[target][index] += step
    return ParticleScene(**fields, kernels=scene.kernels, degrees=scene.degrees, sh_degree=scene.sh_degree,
                         dtype=np.float64)


def oracle_grad(scene: ParticleScene, camera: CameraModel, loss: Callable[[np.ndarray], float],
                settings: RenderSettings, step: float = FD_STEP,
                parameters: Tuple[str, ...] = ("position", "quaternion", "scale", "opacity_logit", "sh", "psi"),
                particles: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
    """
    Central finite differences of ``loss(oracle_render(...)[0])`` in 64-bit.

    Quaternion entries are perturbed before normalization, so the result is the tangent
    gradient at the unit quaternion. Zero scale components (flat Surface2D axes) and particles
    outside ``particles`` are left at zero.

    Returns:
        Arrays keyed like the gradient buffers: position (N, 3), quaternion (N, 4), scale (N, 3),
        opacity_logit (N,), sh (N, 16, 3), psi (N, 3).
    """
    scene = scene.astype(np.float64)
    if settings.kernel is not None:
        scene = scene.with_kernel(settings.kernel, settings.kernel_degree)
        settings = settings.model_copy(update={"kernel": None, "kernel_degree": None})
    n = len(scene)
    shapes = {"position": (3,), "quaternion": (4,), "scale": (3,), "opacity_logit": (), "sh": (16, 3), "psi": (3,)}
    out = {name: np.zeros((n,) + shape) for name, shape in shapes.items()}
    ids = np.arange(n) if particles is None else np.asarray(particles)

    def evaluate(perturbed: ParticleScene) -> float:
        return float(loss(oracle_render(perturbed, camera, settings)[0]))

    for name in parameters:
        for i in ids:
            for component in np.ndindex(*shapes[name]):
                index = (int(i),) + component
                if name == "scale" and scene.scales[index] == 0.0:
                    continue
                plus = evaluate(_perturbed(scene, name, index, step))
                minus = evaluate(_perturbed(scene, name, index, -step))
                out[name][index] = (plus - minus) / (2.0 * step)
    return out
