"""
OpenCV-convention lens models. Undistortion is iterative (Newton) in both cases.
"""
import logging
from typing import Tuple

import numpy as np

from src.particle_tracer.interfaces.distortion import IDistortionModel
from src.particle_tracer.models.camera import Distortion, DistortionKind

logger = logging.getLogger(__name__)

NEWTON_ITERATIONS = 10
NEWTON_TOL = 1e-9
FISHEYE_MARGIN = 0.05  # radians beyond 90 degrees still accepted
SINGULAR_DET = 1e-12


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


class NoDistortion(IDistortionModel):
    def project(self, directions: np.ndarray) -> np.ndarray:
        d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
        return d[:, :2] / d[:, 2:3]

    def unproject(self, coords: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        xy = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
        return _unit(np.concatenate([xy, np.ones((len(xy), 1))], axis=1)), np.ones(len(xy), dtype=bool)


class OpenCvFisheye(IDistortionModel):
    """
    Equidistant fisheye: theta_d = theta (1 + k1 theta^2 + k2 theta^4 + k3 theta^6 + k4 theta^8),
    with theta the angle to the optical axis. Directions beyond 90 degrees (plus a small margin)
    are reported invalid.
    """

    def __init__(self, k1: float, k2: float, k3: float, k4: float):
        self.k = np.array([k1, k2, k3, k4], dtype=np.float64)

    def _theta_d(self, theta: np.ndarray) -> np.ndarray:
        t2 = theta * theta
        k1, k2, k3, k4 = self.k
        return theta * (1.0 + t2 * (k1 + t2 * (k2 + t2 * (k3 + t2 * k4))))

    def _theta_d_prime(self, theta: np.ndarray) -> np.ndarray:
        t2 = theta * theta
        k1, k2, k3, k4 = self.k
        return 1.0 + t2 * (3.0 * k1 + t2 * (5.0 * k2 + t2 * (7.0 * k3 + t2 * 9.0 * k4)))

    def project(self, directions: np.ndarray) -> np.ndarray:
        d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
        r = np.hypot(d[:, 0], d[:, 1])
        theta = np.arctan2(r, d[:, 2])
        scale = np.where(r > 0.0, self._theta_d(theta) / np.where(r > 0.0, r, 1.0), 0.0)
        return d[:, :2] * scale[:, None]

    def unproject(self, coords: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        xy = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
        theta_d = np.hypot(xy[:, 0], xy[:, 1])
        theta = theta_d.copy()
        converged = np.zeros(len(xy), dtype=bool)
        for _ in range(NEWTON_ITERATIONS):
            slope = self._theta_d_prime(theta)
            step = (self._theta_d(theta) - theta_d) / np.where(slope != 0.0, slope, 1.0)
            theta = theta - step
            converged = np.abs(step) < NEWTON_TOL
            if np.all(converged):
                break
        valid = converged & (theta >= 0.0) & (theta <= np.pi / 2.0 + FISHEYE_MARGIN) & (self._theta_d_prime(theta) > 0.0)
        if not np.all(valid):
            logger.warning(f"{int(np.count_nonzero(~valid))} fisheye pixels lie outside the model's valid field of view.")
        phi = np.arctan2(xy[:, 1], xy[:, 0])
        sin_t = np.sin(theta)
        dirs = np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), np.cos(theta)], axis=1)
        return dirs, valid


class OpenCvRadialTangential(IDistortionModel):
    """Radial-tangential pinhole distortion with coefficients (k1, k2, p1, p2, k3)."""

    def __init__(self, k1: float, k2: float, p1: float, p2: float, k3: float):
        self.k1, self.k2, self.p1, self.p2, self.k3 = k1, k2, p1, p2, k3

    def distort(self, xy: np.ndarray) -> np.ndarray:
        x, y = xy[:, 0], xy[:, 1]
        r2 = x * x + y * y
        radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3))
        xd = x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x)
        yd = y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y
        return np.stack([xd, yd], axis=1)

    def _jacobian(self, xy: np.ndarray) -> np.ndarray:
        x, y = xy[:, 0], xy[:, 1]
        r2 = x * x + y * y
        radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3))
        dradial = self.k1 + 2.0 * self.k2 * r2 + 3.0 * self.k3 * r2 * r2
        jac = np.empty((len(xy), 2, 2))
        jac[:, 0, 0] = radial + 2.0 * x * x * dradial + 2.0 * self.p1 * y + 6.0 * self.p2 * x
        jac[:, 0, 1] = 2.0 * x * y * dradial + 2.0 * self.p1 * x + 2.0 * self.p2 * y
        jac[:, 1, 0] = 2.0 * x * y * dradial + 2.0 * self.p1 * x + 2.0 * self.p2 * y
        jac[:, 1, 1] = radial + 2.0 * y * y * dradial + 6.0 * self.p1 * y + 2.0 * self.p2 * x
        return jac

    def project(self, directions: np.ndarray) -> np.ndarray:
        d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
        return self.distort(d[:, :2] / d[:, 2:3])

    def undistort(self, coords: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Newton inversion of ``distort``. Pixels whose Jacobian turns singular keep their last
        iterate and are reported as not converged.
        """
        target = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
        xy = target.copy()
        converged = np.zeros(len(xy), dtype=bool)
        stuck = np.zeros(len(xy), dtype=bool)
        for _ in range(2 * NEWTON_ITERATIONS):
            residual = self.distort(xy) - target
            jac = self._jacobian(xy)
            det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
            stuck |= ~(np.abs(det) > SINGULAR_DET) | ~np.all(np.isfinite(residual), axis=1)
            live = ~stuck
            step = np.zeros_like(xy)
            if np.any(live):
                step[live] = np.linalg.solve(jac[live], residual[live][:, :, None])[:, :, 0]
            xy = xy - step
            converged = live & (np.max(np.abs(step), axis=1) < NEWTON_TOL)
            if np.all(converged | stuck):
                break
        if np.any(stuck):
            logger.warning(f"{int(np.count_nonzero(stuck))} pixels hit a singular distortion Jacobian and were marked invalid.")
        return xy, converged

    def unproject(self, coords: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        xy, valid = self.undistort(coords)
        return _unit(np.concatenate([xy, np.ones((len(xy), 1))], axis=1)), valid


def make_distortion(distortion: Distortion) -> IDistortionModel:
    if distortion.kind == DistortionKind.OPENCV_FISHEYE:
        return OpenCvFisheye(*distortion.coeffs)
    if distortion.kind == DistortionKind.OPENCV_PINHOLE:
        return OpenCvRadialTangential(*distortion.coeffs)
    return NoDistortion()
