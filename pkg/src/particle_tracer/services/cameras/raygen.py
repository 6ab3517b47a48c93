"""
Camera ray generation: distortion-aware unprojection, rolling-shutter pose interpolation,
thin-lens depth of field and incoherent training batches.

Pixel (px, py) covers [px, px + 1) x [py, py + 1); sample 0 is the pixel centre, later
samples are placed by a Halton sequence shared with the lens sample.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation, Slerp
from scipy.stats import qmc

from src.particle_tracer.exceptions import CameraError
from src.particle_tracer.models.camera import CameraModel, ShutterKind
from src.particle_tracer.models.dataset import TrainingView
from src.particle_tracer.models.settings import RenderSettings
from src.particle_tracer.services.cameras.distortion import make_distortion

logger = logging.getLogger(__name__)

GLOBAL_SHUTTER_TIME = 0.5
HALTON_DIMS = 4  # sub-pixel x, y and lens u, v


@dataclass
class RayBundle:
    """World-space rays; ``valid`` is False where the lens model cannot unproject the pixel."""
    origins: np.ndarray
    directions: np.ndarray
    pixel_ids: np.ndarray
    sample_ids: np.ndarray
    times: np.ndarray
    valid: np.ndarray
    view_ids: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.origins)

    @classmethod
    def concatenate(cls, bundles: Sequence['RayBundle']) -> 'RayBundle':
        def cat(name):
            parts = [getattr(b, name) for b in bundles]
            return None if any(p is None for p in parts) else np.concatenate(parts)
        return cls(**{name: cat(name) for name in
                      ("origins", "directions", "pixel_ids", "sample_ids", "times", "valid", "view_ids")})


@lru_cache(maxsize=8)
def halton_table(count: int) -> np.ndarray:
    """First ``count`` points of the unscrambled 4-D Halton sequence; row 0 is the origin."""
    table = qmc.Halton(d=HALTON_DIMS, scramble=False).random(count)
    table.setflags(write=False)
    return table


def _sample_offsets(sample_index: int, rng: Optional[np.random.Generator]) -> Tuple[np.ndarray, np.ndarray]:
    """Sub-pixel offset in [0, 1)^2 and lens sample in [0, 1)^2 for one sample index."""
    table = halton_table(max(64, 2 * (sample_index + 2)))
    shift = rng.random(HALTON_DIMS) if rng is not None else np.zeros(HALTON_DIMS)
    if sample_index == 0:
        pixel = np.array([0.5, 0.5])
    else:
        pixel = (table[sample_index, :2] + shift[:2]) % 1.0
    lens = (table[sample_index + 1, 2:] + shift[2:]) % 1.0
    return pixel, lens


def sample_rng(settings: RenderSettings, sample_index: int) -> Optional[np.random.Generator]:
    """
    Per-sample generator for the Halton rotation: None for single-sample renders, so that
    spp = 1 always traces pixel centres through the lens centre sample.
    """
    if settings.spp <= 1:
        return None
    return np.random.default_rng([settings.seed, sample_index])


def concentric_disk(u: np.ndarray) -> np.ndarray:
    """Maps points of the unit square (..., 2) to the unit disk preserving relative area."""
    a = 2.0 * np.asarray(u, dtype=np.float64) - 1.0
    x, y = a[..., 0], a[..., 1]
    horizontal = np.abs(x) > np.abs(y)
    r = np.where(horizontal, x, y)
    safe_x = np.where(x != 0.0, x, 1.0)
    safe_y = np.where(y != 0.0, y, 1.0)
    theta = np.where(horizontal, (np.pi / 4.0) * (y / safe_x), np.pi / 2.0 - (np.pi / 4.0) * (x / safe_y))
    disk = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)
    return np.where(((x == 0.0) & (y == 0.0))[..., None], 0.0, disk)


def shutter_time(cam: CameraModel, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """
    Normalized exposure time per pixel: row / (rows - 1) top to bottom, column / (cols - 1)
    left to right, 0.5 for a global shutter.
    """
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    if cam.shutter == ShutterKind.ROLLING_TOP_TO_BOTTOM and cam.height > 1:
        return py / (cam.height - 1)
    if cam.shutter == ShutterKind.ROLLING_LEFT_TO_RIGHT and cam.width > 1:
        return px / (cam.width - 1)
    return np.full(np.broadcast(px, py).shape, GLOBAL_SHUTTER_TIME)


def _wxyz_to_xyzw(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return np.concatenate([q[..., 1:], q[..., :1]], axis=-1)


def pose_at(cam: CameraModel, times: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Camera-to-world rotations (N, 3, 3) and centres (N, 3) at the given shutter times.

    Translation is interpolated linearly and rotation by slerp; a static camera returns
    pose0 unchanged for every time.
    """
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    if cam.is_static:
        rot = np.broadcast_to(cam.pose0.rotation_matrix, (len(times), 3, 3))
        center = np.broadcast_to(cam.pose0.center, (len(times), 3))
        return rot, center
    keys = Rotation.from_quat(np.stack([_wxyz_to_xyzw(cam.pose0.rotation), _wxyz_to_xyzw(cam.pose1.rotation)]))
    rot = Slerp([0.0, 1.0], keys)(np.clip(times, 0.0, 1.0)).as_matrix()
    center = (1.0 - times)[:, None] * cam.pose0.center + times[:, None] * cam.pose1.center
    return rot, center


def _camera_space_rays(cam: CameraModel, u: np.ndarray, v: np.ndarray,
                       lens_sample: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Camera-space origins, unit directions and validity for image positions (u, v) in pixels."""
    k = cam.intrinsics
    coords = np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy], axis=1)
    dirs, valid = make_distortion(cam.distortion).unproject(coords)
    origins = np.zeros_like(dirs)
    if cam.lens is None or cam.lens.aperture_radius == 0.0:
        return origins, dirs, valid
    # thin lens: every ray through the lens disk meets the pinhole ray on the focus surface
    z = dirs[:, 2]
    focus = cam.lens.focus_distance
    reach = np.where(z > 0.0, focus / np.where(z > 0.0, z, 1.0), focus)
    focal_points = dirs * reach[:, None]
    disk = concentric_disk(lens_sample) * cam.lens.aperture_radius
    origins[:, 0] = disk[..., 0]
    origins[:, 1] = disk[..., 1]
    rays = focal_points - origins
    return origins, rays / np.linalg.norm(rays, axis=1, keepdims=True), valid


def rays_for_pixels(cam: CameraModel, px: np.ndarray, py: np.ndarray, sample_index: int = 0,
                    rng: Optional[np.random.Generator] = None) -> RayBundle:
    """World-space rays for the integer pixel coordinates (px, py)."""
    px = np.asarray(px, dtype=np.int64).reshape(-1)
    py = np.asarray(py, dtype=np.int64).reshape(-1)
    if np.any((px < 0) | (px >= cam.width) | (py < 0) | (py >= cam.height)):
        raise CameraError(f"pixel outside the {cam.width}x{cam.height} image")
    pixel_offset, lens_sample = _sample_offsets(sample_index, rng)
    u = px + pixel_offset[0]
    v = py + pixel_offset[1]
    o_cam, d_cam, valid = _camera_space_rays(cam, u, v, np.broadcast_to(lens_sample, (len(px), 2)))
    times = shutter_time(cam, px, py)
    rot, center = pose_at(cam, times)
    directions = np.einsum('nij,nj->ni', rot, d_cam)
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    origins = center + np.einsum('nij,nj->ni', rot, o_cam)
    return RayBundle(
        origins=origins, directions=directions, pixel_ids=py * cam.width + px,
        sample_ids=np.full(len(px), sample_index, dtype=np.int64), times=times, valid=valid,
    )


def generate_pixel_ray(cam: CameraModel, px: int, py: int, sample_index: int = 0,
                       rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, np.ndarray, float, bool]:
    """
    One camera ray.

    Returns:
        (origin, unit direction, shutter time, valid). Invalid rays fall outside the lens
        model's field of view and should not be traced.
    """
    bundle = rays_for_pixels(cam, np.array([px]), np.array([py]), sample_index, rng)
    return bundle.origins[0], bundle.directions[0], float(bundle.times[0]), bool(bundle.valid[0])


def generate_rays(cam: CameraModel, sample_index: int = 0, rng: Optional[np.random.Generator] = None) -> RayBundle:
    """Rays for every pixel in row-major order."""
    py, px = np.divmod(np.arange(cam.width * cam.height), cam.width)
    return rays_for_pixels(cam, px, py, sample_index, rng)


def sample_incoherent_batch(views: Sequence[TrainingView], batch_size: int, rng: np.random.Generator,
                            replace: bool = True) -> Tuple[RayBundle, np.ndarray]:
    """
    Draws ``batch_size`` (view, pixel) pairs uniformly over all training pixels.

    Args:
        views: Training views; must not be empty.
        batch_size: Number of rays.
        rng: Source of randomness; the same generator state gives the same batch.
        replace: False samples without replacement (batch_size may not exceed the pixel total).

    Returns:
        Pixel-centre rays tagged with ``view_ids`` and the matching target colours (N, 3).
    """
    if not views:
        raise CameraError("at least one training view is required")
    counts = np.array([view.pixel_count for view in views], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    total = int(offsets[-1])
    if not replace and batch_size > total:
        raise CameraError(f"cannot draw {batch_size} distinct rays from {total} pixels")
    if replace:
        flat = rng.integers(0, total, batch_size)
    else:
        flat = rng.choice(total, size=batch_size, replace=False)
    view_ids = np.searchsorted(offsets, flat, side='right') - 1

    bundles: List[RayBundle] = []
    colors: List[np.ndarray] = []
    order: List[np.ndarray] = []
    for view_id in np.unique(view_ids):
        picked = np.nonzero(view_ids == view_id)[0]
        view = views[view_id]
        py, px = np.divmod(flat[picked] - offsets[view_id], view.camera.width)
        bundle = rays_for_pixels(view.camera, px, py)
        bundle.view_ids = np.full(len(picked), view_id, dtype=np.int64)
        bundles.append(bundle)
        colors.append(np.asarray(view.image, dtype=np.float64)[py, px])
        order.append(picked)
    # restore draw order so the batch does not depend on how views were grouped
    inverse = np.argsort(np.concatenate(order), kind='stable')
    merged = RayBundle.concatenate(bundles)
    for name in ("origins", "directions", "pixel_ids", "sample_ids", "times", "valid", "view_ids"):
        setattr(merged, name, getattr(merged, name)[inverse])
    logger.debug(f"Sampled {batch_size} rays from {len(views)} views.")
    return merged, np.concatenate(colors)[inverse]
