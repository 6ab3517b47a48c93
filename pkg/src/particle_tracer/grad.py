"""
Reverse-mode differentiation of the k-buffer renderer.

The backward pass re-casts each ray with the same settings, so the march meets the same
hits in the same order, then walks the blended samples back to front with a running
"radiance behind" sum:

    dL/dalpha_i = T_i (c_i . g) - (S_i . g) / (1 - alpha_i) - T_final g_T / (1 - alpha_i)

where S_i is the radiance contributed by every sample after i. Early termination is a
stopping rule; samples past it receive no gradient.
"""
import logging
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from src.particle_tracer.exceptions import ContractViolationError, NumericalError
from src.particle_tracer.interfaces.traceable import ITraceable
from src.particle_tracer.kernels import hit_backward, radiance_backward
from src.particle_tracer.models.camera import CameraModel
from src.particle_tracer.models.results import RayResult
from src.particle_tracer.models.settings import RenderSettings
from src.particle_tracer.services.cameras.raygen import generate_rays, sample_rng
from src.particle_tracer.services.tracing.kbuffer import march
from src.particle_tracer.utils.parallel import run_chunks, shared_payload, split_range

logger = logging.getLogger(__name__)


@dataclass
class GradientBuffers:
    """
    Per-particle gradient accumulators plus the densify/prune statistics.

    ``quaternion`` is the gradient w.r.t. the stored unit quaternion, already projected on
    the sphere's tangent. ``weight`` sums T_i * alpha_i over every ray a particle was
    blended on.
    """
    position: np.ndarray
    quaternion: np.ndarray
    scale: np.ndarray
    opacity_logit: np.ndarray
    sh: np.ndarray
    psi: np.ndarray
    hit_count: np.ndarray
    weight: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> 'GradientBuffers':
        return cls(
            position=np.zeros((n, 3)), quaternion=np.zeros((n, 4)), scale=np.zeros((n, 3)),
            opacity_logit=np.zeros(n), sh=np.zeros((n, 16, 3)), psi=np.zeros((n, 3)),
            hit_count=np.zeros(n, dtype=np.int64), weight=np.zeros(n),
        )

    def __len__(self) -> int:
        return len(self.position)

    def add(self, other: 'GradientBuffers') -> 'GradientBuffers':
        for f in fields(self):
            mine = getattr(self, f.name)
            mine += getattr(other, f.name)
        return self

    def scaled(self, factor: float) -> 'GradientBuffers':
        """Copy with every gradient (not the statistics) multiplied by ``factor``."""
        out = GradientBuffers(**{f.name: getattr(self, f.name).copy() for f in fields(self)})
        for name in ("position", "quaternion", "scale", "opacity_logit", "sh", "psi"):
            values = getattr(out, name)
            values *= factor
        return out

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(getattr(self, f.name))) for f in fields(self))


def _same_replay(forward: RayResult, replay: RayResult) -> bool:
    return (forward.blended == replay.blended and forward.hit_count == replay.hit_count
            and forward.transmittance == replay.transmittance)


def backward_ray(traceable: ITraceable, o: np.ndarray, d: np.ndarray, settings: RenderSettings,
                 dL_dradiance: np.ndarray, grads: GradientBuffers, dL_dtransmittance: float = 0.0,
                 forward: Optional[RayResult] = None) -> RayResult:
    """
    Accumulates the gradients of one ray into ``grads``.

    Args:
        traceable: The geometry the forward pass rendered; resolved particle indices must
            index ``grads``.
        o: Ray origin.
        d: Unit ray direction.
        settings: Forward settings; the replay uses the k-buffer march with the same k,
            alpha_min and T_min.
        dL_dradiance: Gradient of the loss w.r.t. the ray radiance (3,).
        grads: Buffers to accumulate into.
        dL_dtransmittance: Gradient w.r.t. the final transmittance (background composite).
        forward: The forward result; in debug mode a replay that differs from it raises.

    Returns:
        The replayed forward result.
    """
    g = np.asarray(dL_dradiance, dtype=np.float64)
    if not np.all(np.isfinite(g)) or not np.isfinite(dL_dtransmittance):
        raise NumericalError(f"non-finite loss gradient {g}, {dL_dtransmittance}")
    replay = march(traceable, o, d, settings, record=True)
    if settings.debug and forward is not None and not _same_replay(forward, replay):
        raise ContractViolationError(
            f"backward replay diverged: forward blended {forward.blended} hits (T={forward.transmittance}), "
            f"replay blended {replay.blended} (T={replay.transmittance})")
    t_final = replay.transmittance
    behind = 0.0
    for record in reversed(replay.records):
        sample = record.sample
        index = record.hit.particle
        alpha = sample.alpha
        t_i = record.transmittance
        shade = float(record.color @ g)
        g_alpha = t_i * shade - (behind + t_final * dL_dtransmittance) / (1.0 - alpha)
        behind += t_i * alpha * shade

        grads.sh[index] += radiance_backward(record.basis, record.color, t_i * alpha * g)
        hit_grad = hit_backward(record.hit.scene, sample, record.hit.origin, record.hit.direction, g_alpha)
        grads.position[index] += hit_grad.position
        grads.quaternion[index] += hit_grad.quaternion
        grads.scale[index] += hit_grad.scale
        grads.opacity_logit[index] += hit_grad.opacity_logit
        grads.psi[index] += hit_grad.psi
        grads.hit_count[index] += 1
        grads.weight[index] += t_i * alpha
    return replay


def _backward_chunk(indices: range) -> GradientBuffers:
    traceable, origins, directions, settings, g_rad, g_t, n = shared_payload()
    grads = GradientBuffers.zeros(n)
    for i in indices:
        backward_ray(traceable, origins[i], directions[i], settings, g_rad[i], grads, float(g_t[i]))
    return grads


def backward_rays(traceable: ITraceable, particle_count: int, origins: np.ndarray, directions: np.ndarray,
                  settings: RenderSettings, dL_dradiance: np.ndarray,
                  dL_dtransmittance: Optional[np.ndarray] = None, threads: int = 1) -> GradientBuffers:
    """
    Sums backward_ray over a batch of rays.

    With threads > 1 the rays are split across worker processes and partial buffers are
    summed; the result then matches the sequential one up to float summation order.
    """
    n_rays = len(origins)
    g_rad = np.asarray(dL_dradiance, dtype=np.float64).reshape(n_rays, 3)
    g_t = np.zeros(n_rays) if dL_dtransmittance is None else np.asarray(dL_dtransmittance, dtype=np.float64)
    payload = (traceable, np.asarray(origins, dtype=np.float64), np.asarray(directions, dtype=np.float64),
               settings, g_rad, g_t.reshape(n_rays), particle_count)
    chunks = split_range(n_rays, threads * 4 if threads > 1 else 1)
    grads = GradientBuffers.zeros(particle_count)
    for partial in run_chunks(_backward_chunk, payload, chunks, threads):
        grads.add(partial)
    if not grads.is_finite():
        raise NumericalError("non-finite particle gradients")
    return grads


def backward_image(traceable: ITraceable, particle_count: int, camera: CameraModel, settings: RenderSettings,
                   loss_grad_image: np.ndarray, transmittance_grad_image: Optional[np.ndarray] = None,
                   threads: Optional[int] = None) -> GradientBuffers:
    """
    Gradients of a loss on a rendered frame.

    ``loss_grad_image`` is dL/d(image) with shape (H, W, 3), where the image is the
    background composite L + T * bg averaged over ``settings.spp`` samples; the background
    term is folded into dL/dT here.
    """
    h, w = camera.height, camera.width
    g_img = np.asarray(loss_grad_image, dtype=np.float64).reshape(h * w, 3)
    g_t = g_img @ np.asarray(settings.background, dtype=np.float64)
    if transmittance_grad_image is not None:
        g_t = g_t + np.asarray(transmittance_grad_image, dtype=np.float64).reshape(h * w)
    threads = settings.threads if threads is None else threads
    grads = GradientBuffers.zeros(particle_count)
    for s in range(settings.spp):
        rays = generate_rays(camera, s, sample_rng(settings, s))
        live = rays.valid
        grads.add(backward_rays(traceable, particle_count, rays.origins[live], rays.directions[live], settings,
                                g_img[live] / settings.spp, g_t[live] / settings.spp, threads))
    logger.debug(f"Backward pass over {h}x{w} pixels, {settings.spp} spp: "
                 f"{int(np.count_nonzero(grads.hit_count))} particles received gradient.")
    return grads
