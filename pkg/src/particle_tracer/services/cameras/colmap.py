"""
Reader for COLMAP text reconstructions (cameras.txt, images.txt, points3D.txt).

COLMAP stores world-to-camera poses; they are inverted here to the camera-to-world poses
used by CameraModel. Both share the OpenCV axis convention.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from src.particle_tracer.exceptions import CameraError
from src.particle_tracer.models.camera import CameraModel, Distortion, DistortionKind, Intrinsics, Pose
from src.particle_tracer.utils.rotations import normalize_quaternions, quat_to_rotmat

logger = logging.getLogger(__name__)


@dataclass
class ColmapReconstruction:
    cameras: List[CameraModel]  # one per registered image, named after the image file
    points: np.ndarray
    colors: np.ndarray


def _intrinsics_for(model: str, params: List[float]) -> Tuple[Intrinsics, Distortion]:
    if model == "SIMPLE_PINHOLE":
        f, cx, cy = params
        return Intrinsics(fx=f, fy=f, cx=cx, cy=cy), Distortion()
    if model == "PINHOLE":
        fx, fy, cx, cy = params
        return Intrinsics(fx=fx, fy=fy, cx=cx, cy=cy), Distortion()
    if model == "SIMPLE_RADIAL":
        f, cx, cy, k = params
        return (Intrinsics(fx=f, fy=f, cx=cx, cy=cy),
                Distortion(kind=DistortionKind.OPENCV_PINHOLE, coeffs=[k, 0.0, 0.0, 0.0, 0.0]))
    if model == "RADIAL":
        f, cx, cy, k1, k2 = params
        return (Intrinsics(fx=f, fy=f, cx=cx, cy=cy),
                Distortion(kind=DistortionKind.OPENCV_PINHOLE, coeffs=[k1, k2, 0.0, 0.0, 0.0]))
    if model == "OPENCV":
        fx, fy, cx, cy, k1, k2, p1, p2 = params
        return (Intrinsics(fx=fx, fy=fy, cx=cx, cy=cy),
                Distortion(kind=DistortionKind.OPENCV_PINHOLE, coeffs=[k1, k2, p1, p2, 0.0]))
    if model == "OPENCV_FISHEYE":
        fx, fy, cx, cy, k1, k2, k3, k4 = params
        return (Intrinsics(fx=fx, fy=fy, cx=cx, cy=cy),
                Distortion(kind=DistortionKind.OPENCV_FISHEYE, coeffs=[k1, k2, k3, k4]))
    raise CameraError(f"unsupported COLMAP camera model {model}")


def _records(path: Path) -> List[Tuple[int, str]]:
    """(line number, text) for every non-comment line, blank lines included."""
    out = []
    with open(path, 'r', encoding='utf-8') as f:
        for number, line in enumerate(f, start=1):
            if not line.startswith('#'):
                out.append((number, line.strip()))
    return out


def read_cameras_txt(path: Union[str, Path]) -> Dict[int, Tuple[int, int, Intrinsics, Distortion]]:
    cameras = {}
    for number, line in _records(Path(path)):
        if not line:
            continue
        fields = line.split()
        try:
            camera_id, model, width, height = int(fields[0]), fields[1], int(fields[2]), int(fields[3])
            params = [float(v) for v in fields[4:]]
            intrinsics, distortion = _intrinsics_for(model, params)
        except (ValueError, IndexError) as e:
            raise CameraError(f"{path} line {number}: malformed camera record ({e})") from e
        cameras[camera_id] = (width, height, intrinsics, distortion)
    return cameras


def read_images_txt(path: Union[str, Path]) -> List[Tuple[str, int, Pose]]:
    """(image name, camera id, camera-to-world pose) in file order."""
    images = []
    records = _records(Path(path))
    i = 0
    while i < len(records):
        number, line = records[i]
        if not line:
            i += 1
            continue
        fields = line.split()
        try:
            q = normalize_quaternions(np.array([float(v) for v in fields[1:5]]))
            t = np.array([float(v) for v in fields[5:8]])
            camera_id = int(fields[8])
            name = fields[9]
        except (ValueError, IndexError) as e:
            raise CameraError(f"{path} line {number}: malformed image record ({e})") from e
        world_to_cam = quat_to_rotmat(q)
        cam_to_world = np.eye(4)
        cam_to_world[:3, :3] = world_to_cam.T
        cam_to_world[:3, 3] = -world_to_cam.T @ t
        images.append((name, camera_id, Pose.from_matrix(cam_to_world)))
        i += 2  # skip the POINTS2D line
    return images


def read_points3d_txt(path: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray]:
    points, colors = [], []
    for number, line in _records(Path(path)):
        if not line:
            continue
        fields = line.split()
        try:
            points.append([float(v) for v in fields[1:4]])
            colors.append([int(v) / 255.0 for v in fields[4:7]])
        except (ValueError, IndexError) as e:
            raise CameraError(f"{path} line {number}: malformed point record ({e})") from e
    return np.asarray(points, dtype=np.float64).reshape(-1, 3), np.asarray(colors, dtype=np.float64).reshape(-1, 3)


def load_colmap_text(model_dir: Union[str, Path], require_points: bool = False) -> ColmapReconstruction:
    """
    Loads a COLMAP text model directory.

    Args:
        model_dir: Directory holding cameras.txt and images.txt (points3D.txt optional).
        require_points: Raise when points3D.txt is missing.
    """
    model_dir = Path(model_dir)
    intrinsics = read_cameras_txt(model_dir / "cameras.txt")
    cameras = []
    for name, camera_id, pose in read_images_txt(model_dir / "images.txt"):
        if camera_id not in intrinsics:
            raise CameraError(f"image {name} references unknown camera {camera_id}")
        width, height, k, distortion = intrinsics[camera_id]
        cameras.append(CameraModel(intrinsics=k, width=width, height=height, distortion=distortion,
                                   pose0=pose, name=name))
    points_path = model_dir / "points3D.txt"
    points: Optional[np.ndarray] = None
    colors: Optional[np.ndarray] = None
    if points_path.exists():
        points, colors = read_points3d_txt(points_path)
    elif require_points:
        raise CameraError(f"{points_path} not found")
    else:
        points, colors = np.zeros((0, 3)), np.zeros((0, 3))
    logger.info(f"Loaded COLMAP model from {model_dir}: {len(cameras)} images, {len(points)} points.")
    return ColmapReconstruction(cameras=cameras, points=points, colors=colors)
