"""Token-pooling image retrieval: hybrid transformer encoder, multi-layer
global/local pooling, descriptor post-processing, exact cosine retrieval
with medium/hard evaluation, and layer-similarity analysis."""

from .config import ModelConfig
from .model import Model, forward_image, init_model
from .pipeline import Descriptor, extract_descriptor, learn_whitening, apply_whitening
from .retrieval import GroundTruth, compute_ap, evaluate, search

__all__ = [
    "ModelConfig",
    "Model",
    "forward_image",
    "init_model",
    "Descriptor",
    "extract_descriptor",
    "learn_whitening",
    "apply_whitening",
    "GroundTruth",
    "compute_ap",
    "evaluate",
    "search",
]

__version__ = "0.1.0"
