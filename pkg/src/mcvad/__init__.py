"""Object-level video anomaly detection with a masked-context frame transformer and a flow autoencoder."""

from .context_vit import ContextViT, MaskPattern, ViTConfig, sample_mask
from .evaluation import auroc, evaluate, score_cubes
from .motion_cae import CAEConfig, MotionCAE
from .objectives import ScoreWeights, anomaly_score, flow_loss, pred_loss
from .training import TrainConfig, lr_schedule, train_appearance, train_motion

__version__ = "0.1.0"

__all__ = [
    "CAEConfig", "ContextViT", "MaskPattern", "MotionCAE", "ScoreWeights", "TrainConfig", "ViTConfig",
    "anomaly_score", "auroc", "evaluate", "flow_loss", "lr_schedule", "pred_loss", "sample_mask",
    "score_cubes", "train_appearance", "train_motion",
]
