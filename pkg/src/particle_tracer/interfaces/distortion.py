from abc import ABC, abstractmethod
from typing import Tuple

import numpy as np


class IDistortionModel(ABC):
    """
    Abstract Base Class for lens projection models.
    Maps camera-space directions to distorted normalized image coordinates ((u - cx) / fx, (v - cy) / fy)
    and back.
    """

    @abstractmethod
    def project(self, directions: np.ndarray) -> np.ndarray:
        """
        Projects camera-space directions (N, 3) to distorted normalized coordinates (N, 2).
        """
        pass

    @abstractmethod
    def unproject(self, coords: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Inverts project.

        Args:
            coords: Distorted normalized coordinates (N, 2).

        Returns:
            Unit camera-space directions (N, 3) and a validity mask (N,).
        """
        pass
