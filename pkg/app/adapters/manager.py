from typing import Dict, Type

from app.adapters.base import NoiseModel
from app.adapters.noise import UniformNoise, WorstVertexNoise
from app.errors import ContractError


_models: Dict[str, NoiseModel] = {}
_model_registry: Dict[str, Type[NoiseModel]] = {}


def register_noise_model(name: str, model_class: Type[NoiseModel]):
    """Register noise model class."""
    _model_registry[name] = model_class


def get_noise_model(name: str) -> NoiseModel:
    """Get or create noise model instance."""
    if name not in _model_registry:
        raise ContractError(f"unknown noise model '{name}'", {"available": sorted(_model_registry)})
    if name not in _models:
        _models[name] = _model_registry[name]()
    return _models[name]


def available_noise_models():
    return sorted(_model_registry)


register_noise_model(UniformNoise.NAME, UniformNoise)
register_noise_model(WorstVertexNoise.NAME, WorstVertexNoise)
