from .cell import CellState, GConvLSTMParams, gconvlstm_step
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .model import GConvLSTMClassifier, ModelConfig, bce_grad, bce_loss, forward
from .optim import AdamState, adam_step
from .train import TrainResult, predict, predict_proba, train

__all__ = [
    "AdamState",
    "CellState",
    "Checkpoint",
    "CheckpointError",
    "GConvLSTMClassifier",
    "GConvLSTMParams",
    "ModelConfig",
    "TrainResult",
    "adam_step",
    "bce_grad",
    "bce_loss",
    "forward",
    "gconvlstm_step",
    "load_checkpoint",
    "predict",
    "predict_proba",
    "save_checkpoint",
    "train",
]
