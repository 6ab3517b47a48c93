"""
Camera files: JSON or TOML holding either a single camera object or ``{"cameras": [...]}``.

Keys: intrinsics {fx, fy, cx, cy}, width, height, distortion {kind, coeffs},
pose0 / pose1 {rotation (w, x, y, z), translation}, shutter, lens {aperture_radius,
focus_distance}, name. Poses are camera-to-world in the OpenCV convention.
"""
import json
import logging
from pathlib import Path
from typing import List, Sequence, Union

from src.particle_tracer.exceptions import CameraError
from src.particle_tracer.models.camera import CameraModel
from src.particle_tracer.utils.config_files import parse_model, read_config_file

logger = logging.getLogger(__name__)


def load_cameras(path: Union[str, Path]) -> List[CameraModel]:
    data = read_config_file(path)
    entries = data["cameras"] if "cameras" in data else [data]
    if not isinstance(entries, list) or not entries:
        raise CameraError(f"{path}: 'cameras' must be a non-empty list")
    cameras = [parse_model(CameraModel, entry, f"{path} camera {i}", CameraError) for i, entry in enumerate(entries)]
    logger.info(f"Loaded {len(cameras)} camera(s) from {path}.")
    return cameras


def load_camera(path: Union[str, Path]) -> CameraModel:
    """The first camera of a camera file."""
    return load_cameras(path)[0]


def save_cameras(cameras: Sequence[CameraModel], path: Union[str, Path]):
    payload = {"cameras": [cam.model_dump(mode='json') for cam in cameras]}
    Path(path).write_text(json.dumps(payload, indent=2), encoding='utf-8')
    logger.debug(f"Wrote {len(cameras)} camera(s) to {path}.")
