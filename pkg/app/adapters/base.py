from abc import ABC, abstractmethod

import numpy as np

from app.lmi_synthesis import Ellipsoid
from app.pwa_model import Box


class NoiseModel(ABC):
    """Draws one disturbance from a mode's noise box for a simulation step."""

    NAME: str = ""

    @abstractmethod
    def draw(self, noise_box: Box, nominal: np.ndarray, target: Ellipsoid,
             rng: np.random.Generator) -> np.ndarray:
        """Return w with nominal + w the next state."""
