"""Native bidirectional LSTM latency forecaster."""

from .adam import AdamState, NonFiniteGradient, adam_step
from .checkpoint import (
    Checkpoint,
    CheckpointError,
    CheckpointMismatch,
    CorruptCheckpoint,
    VersionMismatch,
    load_checkpoint,
    predict,
    predict_matrix,
    save_checkpoint,
)
from .model import (
    PARAM_NAMES,
    ForwardCache,
    ModelConfig,
    NonFiniteActivation,
    ShapeError,
    Weights,
    backward,
    forward,
    init_weights,
    lstm_cell_step,
    mse_loss,
    predict_normalized,
)
from .train import EpochRecord, TrainingDiverged, evaluate, train, write_history

__all__ = [
    "AdamState", "Checkpoint", "CheckpointError", "CheckpointMismatch", "CorruptCheckpoint",
    "EpochRecord", "ForwardCache", "ModelConfig", "NonFiniteActivation", "NonFiniteGradient",
    "PARAM_NAMES", "ShapeError", "TrainingDiverged", "VersionMismatch", "Weights", "adam_step",
    "backward", "evaluate", "forward", "init_weights", "load_checkpoint", "lstm_cell_step",
    "mse_loss", "predict", "predict_matrix", "predict_normalized", "save_checkpoint", "train",
    "write_history",
]
