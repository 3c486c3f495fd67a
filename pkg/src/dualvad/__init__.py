"""Frame-prediction video anomaly detection with a dual appearance/motion encoder,
per-level motion-to-appearance fusion and a prototype memory."""
from .backbone import VARIANTS, DualStreamPredictor, ModelVariant, NetworkConfig
from .training import TrainConfig, load_checkpoint, train
from .scoring import evaluate, regularity_score, roc_auc

__version__ = "0.1.0"

__all__ = [
    "VARIANTS", "DualStreamPredictor", "ModelVariant", "NetworkConfig",
    "TrainConfig", "load_checkpoint", "train", "evaluate", "regularity_score", "roc_auc",
]
