"""
Binned-SAH bounding volume hierarchy over triangles (or arbitrary boxes for the instance level).

Nodes are kept in flat arrays with parents before children, so refitting is a single reverse
sweep. Traversal runs over plain Python tuples; per-ray work is scalar and numpy only pays
off for whole-array construction and refit.
"""
import logging
import math
import time
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from src.particle_tracer.exceptions import ContractViolationError
from src.particle_tracer.interfaces.acceleration_structure import AnyHitCallback, HitAction, IAccelerationStructure

logger = logging.getLogger(__name__)

SAH_BINS = 16
LEAF_SIZE = 4
BOX_PAD = 1e-9
_BIG = 1e300

LeafVisitor = Callable[[int, float, float], float]


ShearedRay = Tuple[float, float, float, int, int, int, float, float, float]
TieKey = Tuple[int, Tuple[Tuple[float, ...], ...]]


def shear_ray(o: np.ndarray, d: np.ndarray) -> ShearedRay:
    """
    Per-ray setup of the watertight test: the dominant axis of ``d`` becomes z, and x/y are
    swapped when it points backwards so triangle winding keeps its sign.
    """
    ox, oy, oz = float(o[0]), float(o[1]), float(o[2])
    dd = (float(d[0]), float(d[1]), float(d[2]))
    ax, ay, az = abs(dd[0]), abs(dd[1]), abs(dd[2])
    kz = 0 if ax >= ay and ax >= az else (1 if ay >= az else 2)
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    if dd[kz] < 0.0:
        kx, ky = ky, kx
    return ox, oy, oz, kx, ky, kz, dd[kx] / dd[kz], dd[ky] / dd[kz], 1.0 / dd[kz]


def _edge_sign(value: float, px: float, qy: float, py: float, qx: float) -> int:
    if value != 0.0:
        return 1 if value > 0.0 else -1
    exact = Fraction(px) * Fraction(qy) - Fraction(py) * Fraction(qx)
    return (exact > 0) - (exact < 0)


def intersect_triangle(ray: ShearedRay, tri: Tuple) -> Optional[Tuple[float, Optional[tuple]]]:
    """
    Watertight ray-triangle test against one packed triangle (v0, v1, v2, double_sided, group).

    Edge functions are evaluated on the sheared vertices, so an edge shared by two triangles gets
    exactly opposite values in each and a ray through it cannot slip between them. A zero edge
    function is re-checked in exact arithmetic. Single-sided triangles only report hits from their
    front side (counter-clockwise winding, normal (v1 - v0) x (v2 - v0) facing the ray origin).

    Returns:
        None on a miss, otherwise ``(t, tie)`` where ``tie`` names the shared edge or vertex the
        hit lies exactly on (None for interior hits).
    """
    ox, oy, oz, kx, ky, kz, sx, sy, sz = ray
    a = (tri[0] - ox, tri[1] - oy, tri[2] - oz)
    b = (tri[3] - ox, tri[4] - oy, tri[5] - oz)
    c = (tri[6] - ox, tri[7] - oy, tri[8] - oz)
    az, bz, cz = a[kz], b[kz], c[kz]
    ax, ay = a[kx] - sx * az, a[ky] - sy * az
    bx, by = b[kx] - sx * bz, b[ky] - sy * bz
    cx, cy = c[kx] - sx * cz, c[ky] - sy * cz
    u = cx * by - cy * bx
    v = ax * cy - ay * cx
    w = bx * ay - by * ax
    su = _edge_sign(u, cx, by, cy, bx)
    sv = _edge_sign(v, ax, cy, ay, cx)
    sw = _edge_sign(w, bx, ay, by, ax)
    if su < 0 or sv < 0 or sw < 0:
        if not tri[9] or su > 0 or sv > 0 or sw > 0:
            return None
    det = u + v + w
    if det == 0.0:
        return None
    t = (u * az + v * bz + w * cz) * sz / det
    tie = None
    if su == 0 or sv == 0 or sw == 0:
        corners = (tuple(tri[0:3]), tuple(tri[3:6]), tuple(tri[6:9]))
        # u, v and w vanish on the edges opposite v0, v1 and v2
        on = tuple(corners[i] for i, s in enumerate((su, sv, sw)) if s != 0)
        tie = (tri[10], tuple(sorted(on)))
    return t, tie


def _ties_to_lowest(hits: Dict[TieKey, Tuple[int, float]], prim: int, t: float, tie: TieKey):
    kept = hits.get(tie)
    if kept is None or prim < kept[0]:
        hits[tie] = (prim, t)


def intersect_triangles(o: np.ndarray, d: np.ndarray, triangle_vertices: np.ndarray,
                        double_sided: Optional[np.ndarray] = None,
                        groups: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Brute-force version over all triangles; returns t per triangle, NaN where missed.

    Uses the same watertight test as the BVH, so a hit exactly on a shared edge or vertex is
    reported by the lowest-indexed triangle of its group only.
    """
    tv = np.asarray(triangle_vertices, dtype=np.float64).reshape(-1, 3, 3)
    if len(tv) == 0:
        return np.zeros(0)
    two = np.zeros(len(tv), dtype=bool) if double_sided is None else np.asarray(double_sided, dtype=bool)
    grp = np.zeros(len(tv), dtype=np.int64) if groups is None else np.asarray(groups, dtype=np.int64)
    ray = shear_ray(o, d)
    out = np.full(len(tv), np.nan)
    ties: Dict[TieKey, Tuple[int, float]] = {}
    for i, row in enumerate(tv.reshape(-1, 9).tolist()):
        found = intersect_triangle(ray, tuple(row) + (bool(two[i]), int(grp[i])))
        if found is None:
            continue
        t, tie = found
        if tie is None:
            out[i] = t
        else:
            _ties_to_lowest(ties, i, t, tie)
    for prim, t in ties.values():
        out[prim] = t
    return out


def ray_box_interval(o: np.ndarray, d: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> Optional[Tuple[float, float]]:
    """Slab test; returns the (entry, exit) parameters or None when the line misses the box."""
    with np.errstate(divide='ignore', invalid='ignore'):
        inv = np.where(d != 0.0, 1.0 / np.where(d != 0.0, d, 1.0), _BIG)
        t0 = (lo - o) * inv
        t1 = (hi - o) * inv
    near = float(np.max(np.minimum(t0, t1)))
    far = float(np.min(np.maximum(t0, t1)))
    if near > far:
        return None
    return near, far


def _surface_area(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    ext = hi - lo
    return 2.0 * (ext[..., 0] * ext[..., 1] + ext[..., 1] * ext[..., 2] + ext[..., 2] * ext[..., 0])


def _pad(lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return lo - BOX_PAD * (1.0 + np.abs(lo)), hi + BOX_PAD * (1.0 + np.abs(hi))


def _sah_split(centroids: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> Optional[np.ndarray]:
    """Best binned-SAH partition of a node; returns the left-side mask or None if no split separates."""
    cmin = centroids.min(axis=0)
    extent = centroids.max(axis=0) - cmin
    total = len(centroids)
    best_cost = math.inf
    best_mask = None
    for axis in range(3):
        if extent[axis] <= 0.0:
            continue
        bins = ((centroids[:, axis] - cmin[axis]) / extent[axis] * SAH_BINS).astype(np.int64)
        bins = np.clip(bins, 0, SAH_BINS - 1)
        counts = np.bincount(bins, minlength=SAH_BINS)
        blo = np.full((SAH_BINS, 3), np.inf)
        bhi = np.full((SAH_BINS, 3), -np.inf)
        np.minimum.at(blo, bins, lo)
        np.maximum.at(bhi, bins, hi)
        llo = np.minimum.accumulate(blo, axis=0)[:-1]
        lhi = np.maximum.accumulate(bhi, axis=0)[:-1]
        rlo = np.minimum.accumulate(blo[::-1], axis=0)[::-1][1:]
        rhi = np.maximum.accumulate(bhi[::-1], axis=0)[::-1][1:]
        lcount = np.cumsum(counts)[:-1]
        rcount = total - lcount
        valid = (lcount > 0) & (rcount > 0)
        with np.errstate(invalid='ignore'):
            cost = _surface_area(llo, lhi) * lcount + _surface_area(rlo, rhi) * rcount
        cost = np.where(valid, cost, np.inf)
        split = int(np.argmin(cost))
        if cost[split] < best_cost:
            best_cost = float(cost[split])
            best_mask = bins <= split
    return best_mask


class Bvh(IAccelerationStructure):
    """
    Flat binned-SAH BVH. A node is a leaf when ``left < 0``; its primitives are
    ``prim_order[start:start + count]``.
    """

    def __init__(self, node_lo: np.ndarray, node_hi: np.ndarray, left: np.ndarray, right: np.ndarray,
                 start: np.ndarray, count: np.ndarray, prim_order: np.ndarray, num_prims: int,
                 triangle_vertices: Optional[np.ndarray] = None, double_sided: Optional[np.ndarray] = None,
                 groups: Optional[np.ndarray] = None):
        self.node_lo = node_lo
        self.node_hi = node_hi
        self.left = left
        self.right = right
        self.start = start
        self.count = count
        self.prim_order = prim_order
        self.num_prims = num_prims
        self.double_sided = double_sided
        self.groups = groups
        self.triangle_vertices = None
        self._py_tris: List[Tuple[float, ...]] = []
        if triangle_vertices is not None:
            self._set_triangles(triangle_vertices)
        self._sync_nodes()

    # --- construction ---

    @staticmethod
    def _build_nodes(lo: np.ndarray, hi: np.ndarray):
        n = len(lo)
        order = np.arange(n, dtype=np.int64)
        centroids = 0.5 * (lo + hi)
        nodes_lo: List[np.ndarray] = [np.zeros(3)]
        nodes_hi: List[np.ndarray] = [np.zeros(3)]
        left: List[int] = [-1]
        right: List[int] = [-1]
        start: List[int] = [0]
        count: List[int] = [n]
        stack = [(0, 0, n)]
        while stack:
            node, s, e = stack.pop()
            idx = order[s:e]
            nodes_lo[node] = lo[idx].min(axis=0)
            nodes_hi[node] = hi[idx].max(axis=0)
            if e - s <= LEAF_SIZE:
                start[node], count[node] = s, e - s
                continue
            mask = _sah_split(centroids[idx], lo[idx], hi[idx])
            if mask is None:
                # coincident centroids: halve in index order
                mask = np.zeros(e - s, dtype=bool)
                mask[:(e - s) // 2] = True
            order[s:e] = np.concatenate([idx[mask], idx[~mask]])
            mid = s + int(np.count_nonzero(mask))
            children = []
            for cs, ce in ((s, mid), (mid, e)):
                nodes_lo.append(np.zeros(3))
                nodes_hi.append(np.zeros(3))
                left.append(-1)
                right.append(-1)
                start.append(cs)
                count.append(ce - cs)
                children.append(len(left) - 1)
            left[node], right[node] = children
            start[node], count[node] = 0, 0
            stack.append((children[1], mid, e))
            stack.append((children[0], s, mid))
        node_lo, node_hi = _pad(np.array(nodes_lo), np.array(nodes_hi))
        return (node_lo, node_hi, np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(start, dtype=np.int64), np.array(count, dtype=np.int64), order)

    @classmethod
    def build(cls, triangle_vertices: np.ndarray, double_sided: Optional[np.ndarray] = None,
              groups: Optional[np.ndarray] = None) -> 'Bvh':
        """
        Builds a BVH over triangles.

        Args:
            triangle_vertices: Corner positions, shape (T, 3, 3).
            double_sided: Optional per-triangle flag; single-sided triangles report front faces only.
            groups: Optional per-triangle owner id (the particle of a proxy triangle). A hit exactly on
                an edge or vertex shared inside one group is reported once, by its lowest-indexed triangle.

        Returns:
            The Bvh; an empty input gives an empty tree on which every traversal misses.
        """
        tv = np.asarray(triangle_vertices, dtype=np.float64).reshape(-1, 3, 3)
        n = len(tv)
        two = np.zeros(n, dtype=bool) if double_sided is None else np.asarray(double_sided, dtype=bool)
        if n == 0:
            return cls.empty()
        started = time.perf_counter()
        arrays = cls._build_nodes(tv.min(axis=1), tv.max(axis=1))
        grp = np.zeros(n, dtype=np.int64) if groups is None else np.asarray(groups, dtype=np.int64)
        bvh = cls(*arrays, num_prims=n, triangle_vertices=tv, double_sided=two, groups=grp)
        logger.debug(f"BVH built over {n} triangles: {bvh.num_nodes} nodes in "
                     f"{(time.perf_counter() - started) * 1e3:.1f} ms.")
        return bvh

    @classmethod
    def build_from_boxes(cls, lo: np.ndarray, hi: np.ndarray) -> 'Bvh':
        """Builds a BVH over arbitrary boxes; traverse it with traverse_leaves."""
        lo = np.asarray(lo, dtype=np.float64).reshape(-1, 3)
        hi = np.asarray(hi, dtype=np.float64).reshape(-1, 3)
        if len(lo) == 0:
            return cls.empty()
        return cls(*cls._build_nodes(lo, hi), num_prims=len(lo))

    @classmethod
    def empty(cls) -> 'Bvh':
        z3 = np.zeros((0, 3))
        zi = np.zeros(0, dtype=np.int64)
        return cls(z3, z3.copy(), zi, zi.copy(), zi.copy(), zi.copy(), zi.copy(), num_prims=0,
                   triangle_vertices=np.zeros((0, 3, 3)), double_sided=np.zeros(0, dtype=bool),
                   groups=np.zeros(0, dtype=np.int64))

    def _set_triangles(self, triangle_vertices: np.ndarray):
        tv = np.asarray(triangle_vertices, dtype=np.float64)
        self.triangle_vertices = tv
        if self.double_sided is None:
            self.double_sided = np.zeros(len(tv), dtype=bool)
        if self.groups is None:
            self.groups = np.zeros(len(tv), dtype=np.int64)
        # absolute corners: shared vertices must shear to identical values in every triangle
        self._py_tris = [tuple(row) + (bool(two), int(group)) for row, two, group in
                         zip(tv.reshape(-1, 9).tolist(), self.double_sided.tolist(), self.groups.tolist())]

    def _sync_nodes(self):
        self._py_nodes = list(zip(
            *self.node_lo.T.tolist(), *self.node_hi.T.tolist(),
            self.left.tolist(), self.right.tolist(), self.start.tolist(), self.count.tolist(),
        )) if len(self.left) else []
        self._py_order = self.prim_order.tolist()

    # --- maintenance ---

    def refit(self, triangle_vertices: np.ndarray):
        tv = np.asarray(triangle_vertices, dtype=np.float64).reshape(-1, 3, 3)
        if len(tv) != self.num_prims:
            raise ContractViolationError(
                f"refit expects {self.num_prims} triangles, got {len(tv)}; rebuild after topology changes"
            )
        self.refit_boxes(tv.min(axis=1), tv.max(axis=1))
        self._set_triangles(tv)

    def refit_boxes(self, lo: np.ndarray, hi: np.ndarray):
        """Re-tightens every node box bottom-up from new primitive boxes."""
        if len(lo) != self.num_prims:
            raise ContractViolationError(f"refit expects {self.num_prims} boxes, got {len(lo)}")
        if self.num_prims == 0:
            return
        node_lo = np.empty_like(self.node_lo)
        node_hi = np.empty_like(self.node_hi)
        leaves = np.flatnonzero(self.left < 0)
        for node in leaves:
            idx = self.prim_order[self.start[node]:self.start[node] + self.count[node]]
            node_lo[node] = lo[idx].min(axis=0)
            node_hi[node] = hi[idx].max(axis=0)
        node_lo[leaves], node_hi[leaves] = _pad(node_lo[leaves], node_hi[leaves])
        # parents precede children, so one reverse sweep unions every subtree
        for node in range(len(self.left) - 1, -1, -1):
            a = int(self.left[node])
            if a >= 0:
                b = int(self.right[node])
                node_lo[node] = np.minimum(node_lo[a], node_lo[b])
                node_hi[node] = np.maximum(node_hi[a], node_hi[b])
        self.node_lo, self.node_hi = node_lo, node_hi
        self._sync_nodes()

    # --- queries ---

    def __len__(self) -> int:
        return self.num_prims

    @property
    def num_nodes(self) -> int:
        return len(self.left)

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        if self.num_prims == 0:
            return np.full(3, np.inf), np.full(3, -np.inf)
        return self.node_lo[0].copy(), self.node_hi[0].copy()

    def subtree_primitives(self, node: int) -> np.ndarray:
        """All primitive indices stored below ``node``."""
        found = []
        stack = [node]
        while stack:
            i = stack.pop()
            if self.left[i] < 0:
                found.append(self.prim_order[self.start[i]:self.start[i] + self.count[i]])
            else:
                stack.extend((int(self.right[i]), int(self.left[i])))
        return np.sort(np.concatenate(found)) if found else np.zeros(0, dtype=np.int64)

    def validate(self, prim_lo: Optional[np.ndarray] = None, prim_hi: Optional[np.ndarray] = None):
        """
        Structural check: acyclic, every primitive in exactly one leaf, every primitive box inside
        its leaf and every child inside its parent. Raises ContractViolationError.
        """
        if self.num_prims == 0:
            return
        if prim_lo is None and self.triangle_vertices is not None:
            prim_lo = self.triangle_vertices.min(axis=1)
            prim_hi = self.triangle_vertices.max(axis=1)
        parents = np.full(self.num_nodes, -1)
        seen = np.zeros(self.num_prims, dtype=np.int64)
        for node in range(self.num_nodes):
            a, b = int(self.left[node]), int(self.right[node])
            lo, hi = self.node_lo[node], self.node_hi[node]
            if a < 0:
                idx = self.prim_order[self.start[node]:self.start[node] + self.count[node]]
                if len(idx) == 0 or len(idx) > LEAF_SIZE:
                    raise ContractViolationError(f"leaf {node} holds {len(idx)} primitives")
                seen[idx] += 1
                if prim_lo is not None and (np.any(prim_lo[idx] < lo) or np.any(prim_hi[idx] > hi)):
                    raise ContractViolationError(f"leaf {node} does not contain its primitives")
                continue
            for child in (a, b):
                if child <= node or parents[child] >= 0:
                    raise ContractViolationError(f"node {child} has an invalid parent link")
                parents[child] = node
                if np.any(self.node_lo[child] < lo) or np.any(self.node_hi[child] > hi):
                    raise ContractViolationError(f"node {child} escapes its parent {node}")
        if np.any(seen != 1):
            raise ContractViolationError("primitives missing from or duplicated across leaves")

    # --- traversal ---

    def traverse_leaves(self, o: np.ndarray, d: np.ndarray, t_min: float, t_max: float,
                        visit: LeafVisitor) -> float:
        """
        Walks every leaf whose box overlaps [t_min, t_max] and calls ``visit(prim, t_min, t_max)``
        for its primitives; the visitor returns the (possibly shrunk) t_max.
        """
        nodes = self._py_nodes
        if not nodes:
            return t_max
        ox, oy, oz = float(o[0]), float(o[1]), float(o[2])
        dx, dy, dz = float(d[0]), float(d[1]), float(d[2])
        ix = 1.0 / dx if dx != 0.0 else _BIG
        iy = 1.0 / dy if dy != 0.0 else _BIG
        iz = 1.0 / dz if dz != 0.0 else _BIG
        order = self._py_order
        stack = [0]
        while stack:
            lx, ly, lz, hx, hy, hz, a, b, s, c = nodes[stack.pop()]
            t0 = (lx - ox) * ix
            t1 = (hx - ox) * ix
            near, far = (t0, t1) if t0 < t1 else (t1, t0)
            t0 = (ly - oy) * iy
            t1 = (hy - oy) * iy
            if t0 > t1:
                t0, t1 = t1, t0
            near = t0 if t0 > near else near
            far = t1 if t1 < far else far
            t0 = (lz - oz) * iz
            t1 = (hz - oz) * iz
            if t0 > t1:
                t0, t1 = t1, t0
            near = t0 if t0 > near else near
            far = t1 if t1 < far else far
            if near > far or far < t_min or near > t_max:
                continue
            if a < 0:
                for j in range(s, s + c):
                    t_max = visit(order[j], t_min, t_max)
            else:
                stack.append(b)
                stack.append(a)
        return t_max

    def traverse_anyhit(self, o: np.ndarray, d: np.ndarray, t_min: float, t_max: float,
                        callback: AnyHitCallback) -> float:
        if self.num_prims and not self._py_tris:
            raise ContractViolationError("box-level BVH has no triangles; use traverse_leaves")
        tris = self._py_tris
        ray = shear_ray(o, d)
        ties: Dict[TieKey, Tuple[int, float]] = {}

        def visit(prim: int, lo: float, hi: float) -> float:
            found = intersect_triangle(ray, tris[prim])
            if found is None:
                return hi
            t, tie = found
            if not lo < t <= hi:
                return hi
            if tie is not None:
                _ties_to_lowest(ties, prim, t, tie)
                return hi
            if callback(t, prim) is HitAction.ACCEPT:
                return t
            return hi

        t_max = self.traverse_leaves(o, d, t_min, t_max, visit)
        # edge and vertex hits go out once all candidates sharing them have been seen
        for prim, t in sorted(ties.values()):
            if t_min < t <= t_max and callback(t, prim) is HitAction.ACCEPT:
                t_max = t
        return t_max
