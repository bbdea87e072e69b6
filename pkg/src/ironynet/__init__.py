"""Knowledge-enhanced multimodal irony detection.

Core pieces: a small tape-based autodiff engine (:mod:`ironynet.tensor`),
toy text/image encoders, concept-knowledge expansion, two-level cross-modal
similarity features, a triplet-contrastive classifier, a deterministic
training harness with an ablation sweep, and a FastAPI service plus CLI.
"""

from .model import AblationFlags, ModelConfig, ModelState, Sample, forward, predict
from .training import Dataset, Metrics, evaluate, load_dataset, train

__version__ = "0.1.0"

__all__ = [
    "AblationFlags",
    "Dataset",
    "Metrics",
    "ModelConfig",
    "ModelState",
    "Sample",
    "evaluate",
    "forward",
    "load_dataset",
    "predict",
    "train",
    "__version__",
]
