"""Phase-classification network: model, training, checkpoints and inference."""

from .checkpoint import ModelFormatError, ShapeMismatchError, load_model, save_model
from .inference import PcnetDesigner, infer, infer_batch
from .model import (
    ForwardTrace,
    NetArchitecture,
    PcnetModel,
    StageSpec,
    align_phase,
    backward,
    encode_input,
    forward,
    init_model,
    loss_stage,
    model_input,
    stage_losses,
    total_loss,
)
from .training import (
    AdamState,
    EpochRecord,
    TrainConfig,
    TrainingDivergedError,
    adam_init,
    adam_step,
    evaluate_loss,
    train,
    write_history_csv,
)

__all__ = [
    "AdamState",
    "EpochRecord",
    "ForwardTrace",
    "ModelFormatError",
    "NetArchitecture",
    "PcnetDesigner",
    "PcnetModel",
    "ShapeMismatchError",
    "StageSpec",
    "TrainConfig",
    "TrainingDivergedError",
    "adam_init",
    "adam_step",
    "align_phase",
    "backward",
    "encode_input",
    "evaluate_loss",
    "forward",
    "infer",
    "infer_batch",
    "init_model",
    "load_model",
    "loss_stage",
    "model_input",
    "save_model",
    "stage_losses",
    "total_loss",
    "train",
    "write_history_csv",
]
