"""
Particle kernel math: covariance products, maximum-response sampling, kernel responses,
spherical-harmonics radiance, and the hand-derived backward of a single hit sample.

All quadratic forms go through the whitened frame ``y = S^-1 R^T (x - mu)``; the covariance
matrix is never formed.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit

from src.particle_tracer.models.particles import SCALE_EPS, KernelType, Particle, ParticleScene
from src.particle_tracer.utils.rotations import quat_to_rotmat, rotmat_grad_to_quat

logger = logging.getLogger(__name__)

ALPHA_MAX = 0.999
DIRECTION_EPS = 1e-20
PLANE_EPS = 1e-12

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)


# --- Spherical harmonics ---

def sh_basis(d: np.ndarray, degree: int = 3) -> np.ndarray:
    """
    Real SH basis values for direction(s) d, shape (..., 16). Entries above ``degree`` are zero.

    Args:
        d: Direction (3,) or (N, 3); normalized internally.
        degree: Active degree in [0, 3].
    """
    d = np.asarray(d, dtype=np.float64)
    norm = np.linalg.norm(d, axis=-1, keepdims=True)
    d = d / np.where(norm > 0.0, norm, 1.0)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    out = np.zeros(d.shape[:-1] + (16,), dtype=np.float64)
    out[..., 0] = SH_C0
    if degree > 0:
        out[..., 1] = -SH_C1 * y
        out[..., 2] = SH_C1 * z
        out[..., 3] = -SH_C1 * x
    if degree > 1:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        out[..., 4] = SH_C2[0] * xy
        out[..., 5] = SH_C2[1] * yz
        out[..., 6] = SH_C2[2] * (2.0 * zz - xx - yy)
        out[..., 7] = SH_C2[3] * xz
        out[..., 8] = SH_C2[4] * (xx - yy)
    if degree > 2:
        out[..., 9] = SH_C3[0] * y * (3.0 * xx - yy)
        out[..., 10] = SH_C3[1] * xy * z
        out[..., 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
        out[..., 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        out[..., 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
        out[..., 14] = SH_C3[5] * z * (xx - yy)
        out[..., 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return out


def eval_sh_radiance(sh: np.ndarray, d: np.ndarray, degree: int = 3) -> np.ndarray:
    """
    Sigmoid of the real-SH expansion per colour channel.

    Args:
        sh: 48 coefficients (coefficient-major) or an array of shape (16, 3).
        d: View direction; the ray direction, normalized internally.
        degree: Active SH degree; higher coefficients are ignored.

    Returns:
        RGB radiance in (0, 1), shape (3,).
    """
    coeffs = np.asarray(sh, dtype=np.float64).reshape(16, 3)
    return expit(sh_basis(d, degree) @ coeffs)


def radiance_from_basis(sh: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Radiance for one particle given a precomputed basis row (the ray direction is shared by all hits)."""
    return expit(basis @ np.asarray(sh, dtype=np.float64).reshape(16, 3))


def radiance_backward(basis: np.ndarray, color: np.ndarray, g_color: np.ndarray) -> np.ndarray:
    """dL/dsh (16, 3) from dL/dcolor through the sigmoid and the linear SH expansion."""
    g_raw = g_color * color * (1.0 - color)
    return np.outer(basis, g_raw)


# --- Covariance and canonical frame ---

def _particle_arrays(p: Particle) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    mu = np.asarray(p.mu, dtype=np.float64)
    rot = quat_to_rotmat(np.asarray(p.quat, dtype=np.float64))
    scale = np.asarray(p.scale, dtype=np.float64)
    return mu, rot, scale


def _safe_scale(scale: np.ndarray) -> np.ndarray:
    if np.any(scale < SCALE_EPS):
        logger.debug(f"Degenerate scale {scale} clamped to {SCALE_EPS}.")
        return np.maximum(scale, SCALE_EPS)
    return scale


@dataclass
class CanonicalRay:
    """A ray expressed in a particle's whitened frame."""
    o_g: np.ndarray
    d_g: np.ndarray


def canonical_ray(p: Particle, o: np.ndarray, d: np.ndarray) -> CanonicalRay:
    mu, rot, scale = _particle_arrays(p)
    scale = _safe_scale(scale)
    o_g = rot.T @ (np.asarray(o, dtype=np.float64) - mu) / scale
    d_g = rot.T @ np.asarray(d, dtype=np.float64) / scale
    return CanonicalRay(o_g=o_g, d_g=d_g)


def covariance_inverse_apply(p: Particle, v: np.ndarray) -> np.ndarray:
    """Computes Sigma^-1 v = R S^-2 R^T v without forming Sigma."""
    _, rot, scale = _particle_arrays(p)
    scale = _safe_scale(scale)
    return rot @ ((rot.T @ np.asarray(v, dtype=np.float64)) / (scale * scale))


def max_response_t(p: Particle, o: np.ndarray, d: np.ndarray) -> float:
    """
    Distance along the ray of the particle's maximum response, ``-o_g.d_g / d_g.d_g``.

    The value may be negative (behind the origin); callers clamp it to their active segment.
    Returns 0 when the direction is annihilated by a degenerate scale.
    """
    ray = canonical_ray(p, o, d)
    dd = float(ray.d_g @ ray.d_g)
    if dd < DIRECTION_EPS:
        logger.debug("Ray direction annihilated in the particle frame; tau_max set to 0.")
        return 0.0
    return -float(ray.o_g @ ray.d_g) / dd


def kernel_response(p: Particle, x: np.ndarray) -> float:
    """
    Response rho_hat(x) = sigma * falloff(x), in [0, sigma].

    Gaussian and generalized Gaussian use exp(-Delta^n) with Delta the whitened squared
    distance; cosine modulation multiplies by 0.5 + 0.5 cos(psi . y); Surface2D uses the
    in-plane coordinates only (x is assumed to lie on the particle plane).
    """
    mu, rot, scale = _particle_arrays(p)
    local = rot.T @ (np.asarray(x, dtype=np.float64) - mu)
    if p.kernel == KernelType.SURFACE_2D:
        y = local[:2] / _safe_scale(scale[:2])
    else:
        y = local / _safe_scale(scale)
    delta = float(y @ y)
    falloff = np.exp(-(delta ** p.degree))
    if p.kernel == KernelType.COSINE_MODULATED:
        falloff *= 0.5 + 0.5 * np.cos(float(np.asarray(p.psi, dtype=np.float64) @ y))
    return float(p.opacity * falloff)


# --- Hit sampling used by the tracers ---

@dataclass
class HitSample:
    """
    One particle sample along a ray plus the intermediates its backward pass needs.

    ``tau_fixed`` marks samples whose location does not follow the particle parameters
    (taken at the proxy entry, or at tau=0 for an annihilated direction).
    """
    particle: int
    tau: float
    alpha: float
    response: float = 0.0
    opacity: float = 0.0
    clamped: bool = False
    tau_fixed: bool = False
    surface: bool = False
    o_l: Optional[np.ndarray] = field(default=None, repr=False)
    d_l: Optional[np.ndarray] = field(default=None, repr=False)
    o_g: Optional[np.ndarray] = field(default=None, repr=False)
    d_g: Optional[np.ndarray] = field(default=None, repr=False)
    point: Optional[np.ndarray] = field(default=None, repr=False)
    delta: float = 0.0
    falloff: float = 0.0
    modulation: float = 1.0


def _empty_sample(index: int, tau: float) -> HitSample:
    return HitSample(particle=index, tau=tau, alpha=0.0, tau_fixed=True)


def sample_hit(
    scene: ParticleScene,
    index: int,
    o: np.ndarray,
    d: np.ndarray,
    tau_cursor: float,
    t_entry: float,
) -> HitSample:
    """
    Evaluates alpha for particle ``index`` on the ray o + t d.

    The sample is taken at tau_max when tau_max >= tau_cursor and at the proxy entry t
    otherwise (the march never integrates behind its cursor). Surface2D particles are
    sampled at their plane intersection.

    Args:
        scene: Activated particle scene.
        index: Particle index.
        o: Ray origin (3,), float64.
        d: Ray direction (3,), float64. Need not be unit length.
        tau_cursor: Current march position.
        t_entry: Proxy entry distance reported by the traversal.

    Returns:
        HitSample with alpha already clamped to ALPHA_MAX.
    """
    mu = scene.positions[index].astype(np.float64)
    rot = scene.rotations[index]
    scale = scene.scales[index].astype(np.float64)
    sigma = float(scene.opacities[index])
    kernel = int(scene.kernels[index])
    degree = float(scene.degrees[index])

    o_l = rot.T @ (o - mu)
    d_l = rot.T @ d

    if kernel == KernelType.SURFACE_2D:
        dz = float(d_l[2])
        if abs(dz) < PLANE_EPS:
            return _empty_sample(index, t_entry)
        tau = -float(o_l[2]) / dz
        in_plane = np.maximum(scale[:2], SCALE_EPS)
        point = (o_l[:2] + tau * d_l[:2]) / in_plane
        sample = HitSample(particle=index, tau=tau, alpha=0.0, surface=True, o_l=o_l, d_l=d_l, point=point)
    else:
        safe = np.maximum(scale, SCALE_EPS)
        o_g = o_l / safe
        d_g = d_l / safe
        dd = float(d_g @ d_g)
        tau_fixed = False
        if dd < DIRECTION_EPS:
            tau_max = 0.0
            tau_fixed = True
        else:
            tau_max = -float(o_g @ d_g) / dd
        if tau_max >= tau_cursor:
            tau = tau_max
        else:
            tau = t_entry
            tau_fixed = True
        point = o_g + tau * d_g
        sample = HitSample(particle=index, tau=tau, alpha=0.0, tau_fixed=tau_fixed,
                           o_l=o_l, d_l=d_l, o_g=o_g, d_g=d_g, point=point)

    delta = float(point @ point)
    falloff = float(np.exp(-(delta ** degree)))
    modulation = 1.0
    if kernel == KernelType.COSINE_MODULATED:
        modulation = 0.5 + 0.5 * float(np.cos(float(scene.psi[index].astype(np.float64) @ point)))
    response = falloff * modulation
    raw_alpha = sigma * response

    sample.delta = delta
    sample.falloff = falloff
    sample.modulation = modulation
    sample.response = response
    sample.opacity = sigma
    sample.clamped = raw_alpha > ALPHA_MAX
    sample.alpha = min(raw_alpha, ALPHA_MAX)
    return sample


@dataclass
class HitGradient:
    """Parameter gradients contributed by one hit sample."""
    position: np.ndarray
    quaternion: np.ndarray
    scale: np.ndarray
    opacity_logit: float
    psi: np.ndarray


def hit_backward(
    scene: ParticleScene,
    sample: HitSample,
    o: np.ndarray,
    d: np.ndarray,
    g_alpha: float,
) -> HitGradient:
    """
    Backpropagates dL/dalpha of one hit to the particle parameters.

    Differentiates through tau_max (when the sample followed it), the whitening by S, the
    rotation R(q), the generalized exponent and the cosine modulation. The clamp at ALPHA_MAX
    has zero subgradient.
    """
    zeros3 = np.zeros(3)
    if sample.clamped or g_alpha == 0.0 or sample.point is None:
        return HitGradient(zeros3, np.zeros(4), zeros3.copy(), 0.0, zeros3.copy())

    index = sample.particle
    sigma = sample.opacity
    degree = float(scene.degrees[index])
    kernel = int(scene.kernels[index])
    scale = scene.scales[index].astype(np.float64)
    rot = scene.rotations[index]
    quat = scene.quaternions[index].astype(np.float64)
    mu = scene.positions[index].astype(np.float64)

    g_logit = g_alpha * sample.response * sigma * (1.0 - sigma)
    g_rho = g_alpha * sigma

    delta = sample.delta
    if degree == 1.0:
        d_falloff = -sample.falloff
    else:
        d_falloff = -degree * (delta ** (degree - 1.0)) * sample.falloff
    point = sample.point
    g_point = (g_rho * sample.modulation * d_falloff * 2.0) * point
    g_psi = zeros3.copy()
    if kernel == KernelType.COSINE_MODULATED:
        psi = scene.psi[index].astype(np.float64)
        phase = float(psi @ point)
        dm = -0.5 * np.sin(phase)
        g_point = g_point + (g_rho * sample.falloff * dm) * psi
        g_psi = (g_rho * sample.falloff * dm) * point

    g_scale = np.zeros(3)
    if sample.surface:
        o_l, d_l = sample.o_l, sample.d_l
        in_plane = np.maximum(scale[:2], SCALE_EPS)
        live = scale[:2] >= SCALE_EPS
        g_p3 = np.array([g_point[0] / in_plane[0], g_point[1] / in_plane[1], 0.0])
        g_scale[:2] = np.where(live, -g_point * point / in_plane, 0.0)
        tau = sample.tau
        dz = float(d_l[2])
        g_tau = float(g_p3 @ d_l)
        g_ol = g_p3.copy()
        g_ol[2] -= g_tau / dz
        g_dl = tau * g_p3
        g_dl[2] -= g_tau * tau / dz
    else:
        o_g, d_g = sample.o_g, sample.d_g
        tau = sample.tau
        safe = np.maximum(scale, SCALE_EPS)
        live = scale >= SCALE_EPS
        if sample.tau_fixed:
            g_og = g_point
            g_dg = tau * g_point
        else:
            dd = float(d_g @ d_g)
            g_tau = float(g_point @ d_g)
            g_og = g_point - (g_tau / dd) * d_g
            g_dg = tau * g_point - (g_tau / dd) * (o_g + 2.0 * tau * d_g)
        g_scale = np.where(live, -(g_og * o_g + g_dg * d_g) / safe, 0.0)
        g_ol = g_og / safe
        g_dl = g_dg / safe

    g_mu = -(rot @ g_ol)
    g_rot = np.outer(o - mu, g_ol) + np.outer(d, g_dl)
    g_quat = rotmat_grad_to_quat(quat, g_rot)
    # stored quaternions are unit; keep only the tangent component
    g_quat = g_quat - quat * float(quat @ g_quat)
    return HitGradient(position=g_mu, quaternion=g_quat, scale=g_scale, opacity_logit=g_logit, psi=g_psi)

