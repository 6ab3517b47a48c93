"""
Bounding proxies: one stretched polyhedron (or quad, or box) per particle, sized so that it
encloses the particle's super-level set {x : rho_hat(x) >= alpha_min}.

Canonical polyhedra are stored with a unit inscribed sphere, so scaling them by the level-set
radius r and then by S, R, mu circumscribes the level-set ellipsoid. The radius keeps the
factor 2 of sqrt(2 log(sigma / alpha_min)) although the exponent of the kernel has no 1/2,
which over-covers by about 19% along each axis.
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import ConvexHull

from src.particle_tracer.models.particles import KernelType, Particle, ParticleScene
from src.particle_tracer.models.settings import ProxyKind

logger = logging.getLogger(__name__)

GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0
DEFAULT_ALPHA_MIN = 0.01

_BOX_CORNERS = np.array([
    [-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
    [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1],
], dtype=np.float64)


def _outward_hull_faces(vertices: np.ndarray) -> np.ndarray:
    """Triangles of the convex hull, wound counter-clockwise seen from outside."""
    hull = ConvexHull(vertices)
    faces = hull.simplices.copy()
    for i, (a, b, c) in enumerate(faces):
        normal = np.cross(vertices[b] - vertices[a], vertices[c] - vertices[a])
        centroid = (vertices[a] + vertices[b] + vertices[c]) / 3.0
        if normal @ centroid < 0.0:
            faces[i] = (a, c, b)
    return faces.astype(np.int64)


@lru_cache(maxsize=None)
def canonical_icosahedron() -> Tuple[np.ndarray, np.ndarray]:
    """Regular icosahedron with unit inradius: 12 vertices, 20 outward faces."""
    raw = []
    for s1 in (-1.0, 1.0):
        for s2 in (-1.0, 1.0):
            raw.append((0.0, s1, s2 * GOLDEN))
            raw.append((s1, s2 * GOLDEN, 0.0))
            raw.append((s2 * GOLDEN, 0.0, s1))
    vertices = np.array(raw)
    # edge length 2, so the inradius is GOLDEN^2 / sqrt(3)
    vertices /= GOLDEN * GOLDEN / np.sqrt(3.0)
    return vertices, _outward_hull_faces(vertices)


@lru_cache(maxsize=None)
def canonical_octahedron() -> Tuple[np.ndarray, np.ndarray]:
    """Regular octahedron with unit inradius: vertices at distance sqrt(3) on the axes."""
    vertices = np.concatenate([np.eye(3), -np.eye(3)]) * np.sqrt(3.0)
    return vertices, _outward_hull_faces(vertices)


@lru_cache(maxsize=None)
def canonical_box_faces() -> np.ndarray:
    return _outward_hull_faces(_BOX_CORNERS)


_QUAD_CORNERS = np.array([[-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [1.0, 1.0, 0.0], [-1.0, 1.0, 0.0]])
_QUAD_FACES = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int64)


def level_set_radius(opacity: np.ndarray, degree: np.ndarray, alpha_min: float, clamped: bool = True) -> np.ndarray:
    """
    Whitened-space radius enclosing rho_hat >= alpha_min: (2 log(sigma / alpha_min))^(1 / 2n).

    Unclamped proxies drop the opacity term (sigma replaced by 1). Non-positive logs map to 0.
    """
    sigma = np.ones_like(np.asarray(opacity, dtype=np.float64)) if not clamped else np.asarray(opacity, dtype=np.float64)
    with np.errstate(divide='ignore', invalid='ignore'):
        log_term = 2.0 * np.log(sigma / alpha_min)
    log_term = np.where(np.isfinite(log_term) & (log_term > 0.0), log_term, 0.0)
    return log_term ** (1.0 / (2.0 * np.asarray(degree, dtype=np.float64)))


@dataclass
class ProxyBlock:
    """Proxy geometry of one particle."""
    vertices: np.ndarray
    triangles: np.ndarray
    double_sided: bool = False


@dataclass
class ProxySet:
    """
    Proxy triangles of a whole scene. Triangle ``t`` belongs to particle ``prim_to_particle[t]``;
    blocks are contiguous and ordered by particle index.
    """
    vertices: np.ndarray
    triangles: np.ndarray
    prim_to_particle: np.ndarray
    kind: ProxyKind
    double_sided: np.ndarray = field(default=None)
    alpha_min: float = DEFAULT_ALPHA_MIN

    def __post_init__(self):
        if self.double_sided is None:
            self.double_sided = np.zeros(len(self.triangles), dtype=bool)

    def __len__(self) -> int:
        return len(self.triangles)

    @property
    def triangle_vertices(self) -> np.ndarray:
        """Triangle corner positions, shape (T, 3, 3)."""
        return self.vertices[self.triangles]

    def particle_triangles(self, particle: int) -> np.ndarray:
        return np.flatnonzero(self.prim_to_particle == particle)

    def live_particles(self) -> np.ndarray:
        return np.unique(self.prim_to_particle)


def _world_vertices(canonical: np.ndarray, mu: np.ndarray, rot: np.ndarray, stretch: np.ndarray) -> np.ndarray:
    """v_world = R (stretch * v) + mu, batched over particles: canonical (V, 3), stretch (N, 3)."""
    local = canonical[None, :, :] * stretch[:, None, :]
    return np.einsum('nij,nvj->nvi', rot, local) + mu[:, None, :]


def _polyhedron_for(kind: ProxyKind) -> Tuple[np.ndarray, np.ndarray]:
    if kind == ProxyKind.OCTAHEDRON:
        return canonical_octahedron()
    return canonical_icosahedron()


def _box_blocks(world: np.ndarray) -> np.ndarray:
    lo = world.min(axis=1)
    hi = world.max(axis=1)
    corners = (_BOX_CORNERS + 1.0) / 2.0
    return lo[:, None, :] + corners[None, :, :] * (hi - lo)[:, None, :]


def build_proxy(p: Particle, kind: ProxyKind = ProxyKind.ICOSAHEDRON_CLAMPED,
                alpha_min: float = DEFAULT_ALPHA_MIN) -> Optional[ProxyBlock]:
    """
    Builds the proxy of a single particle.

    Args:
        p: The particle.
        kind: Proxy kind; Surface2D particles always receive a two-triangle quad.
        alpha_min: Minimum response to capture.

    Returns:
        The ProxyBlock, or None when sigma <= alpha_min (the particle can never pass the threshold).
    """
    proxies = rebuild_proxies(ParticleScene.from_particles([p], dtype=np.float64), kind, alpha_min)
    if len(proxies) == 0:
        return None
    return ProxyBlock(
        vertices=proxies.vertices,
        triangles=proxies.triangles,
        double_sided=bool(proxies.double_sided[0]),
    )


def rebuild_proxies(scene: ParticleScene, kind: ProxyKind = ProxyKind.ICOSAHEDRON_CLAMPED,
                    alpha_min: float = DEFAULT_ALPHA_MIN) -> ProxySet:
    """
    Builds the proxies of every particle, vectorized over particles.

    Particles with sigma <= alpha_min or non-finite parameters get no proxy.
    """
    n = len(scene)
    if n == 0:
        return ProxySet(
            vertices=np.zeros((0, 3)), triangles=np.zeros((0, 3), dtype=np.int64),
            prim_to_particle=np.zeros(0, dtype=np.int64), kind=kind, alpha_min=alpha_min,
        )

    opacities = scene.opacities.astype(np.float64)
    finite = scene.finite_mask
    live = finite & (opacities > alpha_min)
    skipped_nonfinite = int(np.count_nonzero(~finite))
    if skipped_nonfinite:
        logger.warning(f"{skipped_nonfinite} particles with non-finite parameters received no proxy.")

    clamped = kind != ProxyKind.ICOSAHEDRON_UNCLAMPED
    radius = level_set_radius(opacities, scene.degrees, alpha_min, clamped=clamped)
    surface = scene.kernels == KernelType.SURFACE_2D
    live &= radius > 0.0

    mu = scene.positions.astype(np.float64)
    rot = scene.rotations
    stretch = scene.scales.astype(np.float64) * radius[:, None]

    solid_ids = np.flatnonzero(live & ~surface)
    quad_ids = np.flatnonzero(live & surface)

    solid_blocks = np.zeros((0, 0, 3))
    solid_faces = np.zeros((0, 3), dtype=np.int64)
    if len(solid_ids):
        canonical, faces = _polyhedron_for(kind)
        solid_blocks = _world_vertices(canonical, mu[solid_ids], rot[solid_ids], stretch[solid_ids])
        if kind == ProxyKind.AABB:
            solid_blocks = _box_blocks(solid_blocks)
            faces = canonical_box_faces()
        solid_faces = faces
    quad_blocks = np.zeros((0, 4, 3))
    if len(quad_ids):
        quad_blocks = _world_vertices(_QUAD_CORNERS, mu[quad_ids], rot[quad_ids], stretch[quad_ids])

    order = np.flatnonzero(live)
    is_quad = surface[order]
    v_solid = solid_blocks.shape[1] if len(solid_ids) else 0
    vcount = np.where(is_quad, 4, v_solid)
    tcount = np.where(is_quad, len(_QUAD_FACES), len(solid_faces))
    voff = np.concatenate([[0], np.cumsum(vcount)[:-1]]).astype(np.int64)
    toff = np.concatenate([[0], np.cumsum(tcount)[:-1]]).astype(np.int64)

    vertices = np.zeros((int(vcount.sum()), 3))
    triangles = np.zeros((int(tcount.sum()), 3), dtype=np.int64)

    for ids, blocks, faces in ((solid_ids, solid_blocks, solid_faces), (quad_ids, quad_blocks, _QUAD_FACES)):
        if not len(ids):
            continue
        slot = np.searchsorted(order, ids)
        nv = blocks.shape[1]
        vertices[(voff[slot][:, None] + np.arange(nv)).ravel()] = blocks.reshape(-1, 3)
        tri_rows = (toff[slot][:, None] + np.arange(len(faces))).ravel()
        triangles[tri_rows] = (faces[None, :, :] + voff[slot][:, None, None]).reshape(-1, 3)

    prim_to_particle = np.repeat(order, tcount).astype(np.int64)
    double_sided = np.repeat(is_quad, tcount)
    logger.debug(f"Built {len(triangles)} proxy triangles for {len(order)}/{n} particles ({kind.value}).")
    return ProxySet(
        vertices=vertices, triangles=triangles, prim_to_particle=prim_to_particle,
        kind=kind, double_sided=double_sided, alpha_min=alpha_min,
    )


def proxy_radius(p: Particle, alpha_min: float = DEFAULT_ALPHA_MIN, clamped: bool = True) -> float:
    """Inscribed-sphere radius of the canonical polyhedron after the level-set scaling (before S)."""
    return float(level_set_radius(np.array([p.opacity]), np.array([p.degree]), alpha_min, clamped)[0])

