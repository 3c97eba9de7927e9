# Polynormer: polynomial-expressive graph transformer with linear global attention
from .config import ModelConfig, RunConfig, TrainConfig
from .errors import (CheckpointError, ConfigError, DomainError, FormatError, NumericalError,
                     PolynormerError, ShapeError)
from .graphstore import Dataset, Graph
from .model import PolynormerModel, forward, init_model

__all__ = [
    'ModelConfig',
    'RunConfig',
    'TrainConfig',
    'PolynormerError',
    'ShapeError',
    'DomainError',
    'FormatError',
    'CheckpointError',
    'ConfigError',
    'NumericalError',
    'Dataset',
    'Graph',
    'PolynormerModel',
    'forward',
    'init_model',
]
