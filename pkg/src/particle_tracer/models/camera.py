from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.particle_tracer.utils.rotations import normalize_quaternions, quat_to_rotmat, rotmat_to_quat


class DistortionKind(str, Enum):
    NONE = "none"
    OPENCV_FISHEYE = "opencv_fisheye"    # equidistant, k1..k4
    OPENCV_PINHOLE = "opencv_pinhole"    # radial-tangential, k1, k2, p1, p2, k3


class ShutterKind(str, Enum):
    GLOBAL = "global"
    ROLLING_TOP_TO_BOTTOM = "rolling_top_to_bottom"
    ROLLING_LEFT_TO_RIGHT = "rolling_left_to_right"


_DISTORTION_SIZES = {DistortionKind.NONE: 0, DistortionKind.OPENCV_FISHEYE: 4, DistortionKind.OPENCV_PINHOLE: 5}


class Intrinsics(BaseModel):
    fx: float = Field(..., gt=0.0)
    fy: float = Field(..., gt=0.0)
    cx: float
    cy: float


class Distortion(BaseModel):
    kind: DistortionKind = DistortionKind.NONE
    coeffs: List[float] = Field(default_factory=list)

    @model_validator(mode='after')
    def coeff_count_matches_kind(self) -> 'Distortion':
        expected = _DISTORTION_SIZES[self.kind]
        if len(self.coeffs) != expected:
            raise ValueError(f"{self.kind.value} distortion takes {expected} coefficients, got {len(self.coeffs)}")
        return self


class Pose(BaseModel):
    """Camera-to-world transform: ``rotation`` is a w-first unit quaternion, ``translation`` the camera centre."""
    rotation: Tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    @field_validator('rotation')
    @classmethod
    def normalize_rotation(cls, v):
        q = normalize_quaternions(np.asarray(v, dtype=np.float64))
        return tuple(float(c) for c in q)

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_rotmat(np.asarray(self.rotation, dtype=np.float64))

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.translation, dtype=np.float64)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix
        m[:3, 3] = self.center
        return m

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> 'Pose':
        m = np.asarray(m, dtype=np.float64)
        return cls(rotation=tuple(rotmat_to_quat(m[:3, :3])), translation=tuple(m[:3, 3]))

    @classmethod
    def look_at(cls, eye, target, up=(0.0, -1.0, 0.0)) -> 'Pose':
        """OpenCV-convention pose (x right, y down, z forward) at ``eye`` looking at ``target``."""
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-12:
            right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward], axis=1)
        return cls(rotation=tuple(rotmat_to_quat(rot)), translation=tuple(eye))


class Lens(BaseModel):
    aperture_radius: float = Field(default=0.0, ge=0.0)
    focus_distance: float = Field(default=1.0, gt=0.0)


class CameraModel(BaseModel):
    """
    A calibrated camera. Pixel (i, j) has its centre at (i + 0.5, j + 0.5); ``pose1`` is the pose
    at the end of the exposure, ``None`` for a static camera.
    """
    model_config = ConfigDict(extra='forbid')

    intrinsics: Intrinsics
    width: int = Field(..., gt=0)
    height: int = Field(..., gt=0)
    distortion: Distortion = Field(default_factory=Distortion)
    pose0: Pose = Field(default_factory=Pose)
    pose1: Optional[Pose] = None
    shutter: ShutterKind = ShutterKind.GLOBAL
    lens: Optional[Lens] = None
    name: Optional[str] = None

    @property
    def resolution(self) -> Tuple[int, int]:
        return self.width, self.height

    @property
    def is_static(self) -> bool:
        return self.pose1 is None or self.pose1 == self.pose0

    @classmethod
    def pinhole(cls, width: int, height: int, fov_y_deg: float = 60.0, pose: Optional[Pose] = None,
                **kwargs) -> 'CameraModel':
        """Undistorted camera with the principal point at the image centre."""
        f = 0.5 * height / np.tan(np.radians(fov_y_deg) / 2.0)
        return cls(intrinsics=Intrinsics(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0),
                   width=width, height=height, pose0=pose or Pose(), **kwargs)
