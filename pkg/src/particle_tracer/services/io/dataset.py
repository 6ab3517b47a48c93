"""
Training datasets on disk. Two layouts are recognised:

* ``dataset.json``: {"views": [{"camera": {...}, "image": "images/0.png"}, ...],
  "test_views": [...], "points": [[x, y, z], ...], "point_colors": [[r, g, b], ...]}
* a COLMAP text model under ``sparse/0`` (or ``sparse``) with images in ``images/``.
"""
import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.particle_tracer.exceptions import ImageFormatError
from src.particle_tracer.models.camera import CameraModel
from src.particle_tracer.models.dataset import Dataset, TrainingView
from src.particle_tracer.services.cameras.colmap import load_colmap_text
from src.particle_tracer.services.io.images import read_image, write_image
from src.particle_tracer.utils.config_files import load_model

logger = logging.getLogger(__name__)

DATASET_FILE = "dataset.json"


class ViewSpec(BaseModel):
    model_config = ConfigDict(extra='forbid')

    camera: CameraModel
    image: str


class DatasetSpec(BaseModel):
    model_config = ConfigDict(extra='forbid')

    views: List[ViewSpec] = Field(..., min_length=1)
    test_views: List[ViewSpec] = Field(default_factory=list)
    points: Optional[List[Tuple[float, float, float]]] = None
    point_colors: Optional[List[Tuple[float, float, float]]] = None


def _load_view(root: Path, camera: CameraModel, image_path: Path) -> TrainingView:
    image = read_image(image_path)
    if image.shape[:2] != (camera.height, camera.width):
        raise ImageFormatError(f"{image_path}: image is {image.shape[1]}x{image.shape[0]}, "
                               f"camera expects {camera.width}x{camera.height}")
    return TrainingView(camera=camera, image=image, name=str(image_path.relative_to(root)))


def _load_json_dataset(root: Path) -> Dataset:
    spec = load_model(DatasetSpec, root / DATASET_FILE)
    views = [_load_view(root, v.camera, root / v.image) for v in spec.views]
    test_views = [_load_view(root, v.camera, root / v.image) for v in spec.test_views]
    points = np.asarray(spec.points, dtype=np.float64) if spec.points else None
    colors = np.asarray(spec.point_colors, dtype=np.float64) if spec.point_colors else None
    return Dataset(views=views, points=points, point_colors=colors, test_views=test_views)


def _load_colmap_dataset(root: Path, model_dir: Path) -> Dataset:
    reconstruction = load_colmap_text(model_dir)
    views = [_load_view(root, cam, root / "images" / cam.name) for cam in reconstruction.cameras]
    points = reconstruction.points if len(reconstruction.points) else None
    colors = reconstruction.colors if len(reconstruction.colors) else None
    return Dataset(views=views, points=points, point_colors=colors)


def load_dataset(root: Union[str, Path]) -> Dataset:
    """
    Raises:
        FileNotFoundError: Neither layout is present under ``root``.
    """
    root = Path(root)
    if (root / DATASET_FILE).exists():
        dataset = _load_json_dataset(root)
    else:
        for candidate in (root / "sparse" / "0", root / "sparse"):
            if (candidate / "cameras.txt").exists():
                dataset = _load_colmap_dataset(root, candidate)
                break
        else:
            raise FileNotFoundError(f"{root} holds neither {DATASET_FILE} nor a COLMAP text model")
    logger.info(f"Loaded dataset {root}: {len(dataset.views)} training views, {len(dataset.test_views)} test views.")
    return dataset


def save_dataset(root: Union[str, Path], views: Sequence[TrainingView], test_views: Sequence[TrainingView] = (),
                 points: Optional[np.ndarray] = None, point_colors: Optional[np.ndarray] = None):
    """Writes views as PNGs plus a ``dataset.json`` that load_dataset reads back."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)

    def write_views(items: Sequence[TrainingView], prefix: str) -> list:
        entries = []
        for i, view in enumerate(items):
            relative = f"images/{prefix}{i:04d}.png"
            write_image(view.image, root / relative)
            entries.append({"camera": view.camera.model_dump(mode='json'), "image": relative})
        return entries

    payload = {"views": write_views(views, "train_"), "test_views": write_views(test_views, "test_")}
    if points is not None:
        payload["points"] = np.asarray(points, dtype=np.float64).tolist()
    if point_colors is not None:
        payload["point_colors"] = np.asarray(point_colors, dtype=np.float64).tolist()
    (root / DATASET_FILE).write_text(json.dumps(payload, indent=1), encoding='utf-8')
    logger.info(f"Wrote dataset with {len(views)} training views to {root}.")
