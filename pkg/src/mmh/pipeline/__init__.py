"""Run configuration and the setup / train / generate lifecycle."""
from .config import (
    ConfigError,
    ConfigTypeError,
    MissingSection,
    RunConfig,
    UnknownKey,
    apply_overrides,
    config_from_dict,
    load_config,
)
from .lifecycle import (
    ALL_MODALITIES,
    TASKS,
    ArtifactsError,
    DatasetChanged,
    GenerateResult,
    SetupArtifacts,
    SignalProbeFailed,
    TrainResult,
    UnknownModality,
    UnknownTask,
    ValidationFailed,
    batch_for_step,
    default_checkpoint,
    generate,
    load_artifacts,
    read_log,
    setup,
    train,
)

__all__ = [
    "ALL_MODALITIES", "TASKS", "ArtifactsError", "ConfigError", "ConfigTypeError", "DatasetChanged",
    "GenerateResult", "MissingSection", "RunConfig", "SetupArtifacts", "SignalProbeFailed",
    "TrainResult", "UnknownKey", "UnknownModality", "UnknownTask", "ValidationFailed",
    "apply_overrides", "batch_for_step", "config_from_dict", "default_checkpoint", "generate",
    "load_artifacts", "load_config", "read_log", "setup", "train",
]
