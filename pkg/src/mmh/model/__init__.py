"""Default multimodal encoder-decoder: extractor, mapper, tiny transformer backbone."""
from .checkpoint import (
    Checkpoint,
    CheckpointError,
    IncompatibleSpec,
    load_checkpoint,
    restore_model,
    restore_optimizer,
    save_checkpoint,
)
from .decoding import generate, generate_beam, generate_greedy
from .network import (
    DegenerateBatch,
    ForwardOutput,
    InvalidSpec,
    ModelSpec,
    MultimodalSeq2Seq,
    SequenceTooLong,
    ShapeMismatch,
    extract_features,
    forward,
    init_model,
    map_features,
)
from .training import (
    FREEZE_POLICIES,
    NonFiniteLoss,
    NoTrainableParameters,
    OptimizerConfig,
    UnknownPolicy,
    evaluate_loss,
    make_optimizer,
    set_freeze_policy,
    train_step,
    trainable_parameters,
)

__all__ = [
    "Checkpoint", "CheckpointError", "DegenerateBatch", "FREEZE_POLICIES", "ForwardOutput",
    "IncompatibleSpec", "InvalidSpec", "ModelSpec", "MultimodalSeq2Seq", "NoTrainableParameters",
    "NonFiniteLoss", "OptimizerConfig", "SequenceTooLong", "ShapeMismatch", "UnknownPolicy",
    "evaluate_loss", "extract_features", "forward", "generate", "generate_beam", "generate_greedy",
    "init_model", "load_checkpoint", "make_optimizer", "map_features", "restore_model",
    "restore_optimizer", "save_checkpoint", "set_freeze_policy", "train_step", "trainable_parameters",
]
