from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from src.particle_tracer.models.camera import CameraModel


@dataclass
class TrainingView:
    """A calibrated camera and its ground-truth image, linear RGB in [0, 1] with shape (H, W, 3)."""
    camera: CameraModel
    image: np.ndarray
    name: str = ""

    @property
    def pixel_count(self) -> int:
        return self.camera.width * self.camera.height


@dataclass
class Dataset:
    views: List[TrainingView]
    points: Optional[np.ndarray] = None  # (M, 3) initialisation points
    point_colors: Optional[np.ndarray] = None  # (M, 3) in [0, 1]
    test_views: List[TrainingView] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.views)
