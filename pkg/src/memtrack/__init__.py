"""Memory-based single-object tracking on a small numpy autodiff engine."""

from .boxes import BBox, iou
from .features import BackboneConfig, FeatureNet
from .head import DecodeConfig, HeadNet
from .memory import MemoryBank, SamplerConfig, select_memory_indices
from .model import ModelConfig, TrackerNet, load_model
from .tensor import InvalidArgumentError, NonFiniteError, Tensor, no_grad, precision
from .tracker import TrackerConfig, TrackerSession, track_sequence
from .train import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "iou",
    "BackboneConfig",
    "FeatureNet",
    "DecodeConfig",
    "HeadNet",
    "MemoryBank",
    "SamplerConfig",
    "select_memory_indices",
    "ModelConfig",
    "TrackerNet",
    "load_model",
    "InvalidArgumentError",
    "NonFiniteError",
    "Tensor",
    "no_grad",
    "precision",
    "TrackerConfig",
    "TrackerSession",
    "track_sequence",
    "TrainConfig",
    "train",
]
