import numpy as np

from app.adapters.base import NoiseModel
from app.lmi_synthesis import Ellipsoid
from app.pwa_model import Box, noise_vertices


class UniformNoise(NoiseModel):
    NAME = "uniform"

    def draw(self, noise_box: Box, nominal: np.ndarray, target: Ellipsoid,
             rng: np.random.Generator) -> np.ndarray:
        return noise_box.sample(rng)


class WorstVertexNoise(NoiseModel):
    """Vertex of the noise box that pushes the successor deepest toward the target boundary."""

    NAME = "worst_vertex"

    def draw(self, noise_box: Box, nominal: np.ndarray, target: Ellipsoid,
             rng: np.random.Generator) -> np.ndarray:
        vertices = noise_vertices(noise_box)
        membership = target.values(nominal[None, :] + vertices)
        return vertices[int(np.argmax(membership))].copy()
