"""Four-section run configuration: model, data, processor, training."""
from __future__ import annotations

import copy
import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from ..errors import InputError


class ConfigError(InputError):
    pass


class MissingSection(ConfigError):
    def __init__(self, name):
        super().__init__(f"config is missing the {name!r} section")
        self.name = name


class UnknownKey(ConfigError):
    def __init__(self, path):
        super().__init__(f"unknown config key {path!r}")
        self.path = path


class ConfigTypeError(ConfigError, TypeError):
    def __init__(self, key, expected, value):
        super().__init__(f"config key {key!r} expects {expected}, got {value!r}")
        self.key = key


@dataclass
class ModelSection:
    type: str = "default_multimodal_encoder_decoder"
    backbone_type: str = "tiny-transformer"
    pretrained_backbone: Optional[str] = None
    pretrained_checkpoint: Optional[str] = None
    extractor_type: str = "identity"
    mapper_type: str = "linear"
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    dropout: float = 0.1
    max_positions: int = 512
    input_dim: Optional[int] = None


@dataclass
class FilterSection:
    max_signal_frames: Optional[int] = None
    max_output_tokens: Optional[int] = None
    required_nonempty_fields: list[str] = field(default_factory=list)


@dataclass
class DataSection:
    train_metadata_file: Optional[str] = None
    validation_metadata_file: Optional[str] = None
    test_metadata_file: Optional[str] = None
    filters: FilterSection = field(default_factory=FilterSection)


@dataclass
class ProcessorSection:
    text_tokenizer_path: Optional[str] = None
    min_count: int = 1
    new_vocabulary: Optional[str] = None
    skip_frames_stride: int = 1
    fps_default: float = 25.0
    normalize_pose: bool = False
    image_height: int = 24
    image_width: int = 96
    image_scale: int = 2
    glyph_table: Optional[str] = None
    signal_extensions: dict[str, str] = field(default_factory=dict)


@dataclass
class TrainingSection:
    max_steps: int = 1000
    batch_size: int = 16
    lr: float = 3e-4
    betas: list[float] = field(default_factory=lambda: [0.9, 0.98])
    eps: float = 1e-9
    clip_norm: float = 1.0
    seed: int = 42
    eval_every: int = 100
    checkpoint_every: int = 100
    max_len: int = 64
    beam: int = 1
    freeze_policy: str = "none"
    output_dir: str = "output"
    num_threads: int = 1


SECTIONS = {
    "model": ModelSection,
    "data": DataSection,
    "processor": ProcessorSection,
    "training": TrainingSection,
}
SECTION_ALIASES = {"dataset": "data"}
KEY_ALIASES = {
    "model": {
        "multimodal_mapper_type": "mapper_type",
        "feature_extractor_type": "extractor_type",
    },
}
# keys holding file paths, resolved against the config file's directory
PATH_KEYS = {
    "model": ("pretrained_checkpoint",),
    "data": ("train_metadata_file", "validation_metadata_file", "test_metadata_file"),
    "processor": ("text_tokenizer_path", "glyph_table"),
    "training": ("output_dir",),
}


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    processor: ProcessorSection = field(default_factory=ProcessorSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    source_path: Optional[str] = None
    explicit_keys: frozenset = frozenset()

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False, allow_unicode=True),
                              encoding="utf-8")


def _type_name(tp) -> str:
    return getattr(tp, "__name__", None) or str(tp).replace("typing.", "")


def _coerce(value, tp, key: str):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], key)
    if dataclasses.is_dataclass(tp):
        if value is None:
            return tp()
        if not isinstance(value, dict):
            raise ConfigTypeError(key, "a mapping", value)
        return _build(tp, value, key)
    if origin is list:
        (item,) = typing.get_args(tp)
        if isinstance(value, str) and item is str:
            value = [v.strip() for v in value.split(",") if v.strip()]
        if isinstance(value, tuple):
            value = list(value)
        if not isinstance(value, list):
            raise ConfigTypeError(key, f"a list of {_type_name(item)}", value)
        return [_coerce(v, item, f"{key}[{i}]") for i, v in enumerate(value)]
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigTypeError(key, "a mapping", value)
        k_tp, v_tp = typing.get_args(tp)
        return {_coerce(k, k_tp, key): _coerce(v, v_tp, f"{key}.{k}") for k, v in value.items()}
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigTypeError(key, "a boolean", value)
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigTypeError(key, "an integer", value)
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigTypeError(key, "a number", value)
        return float(value)
    if tp is str:
        if not isinstance(value, (str, int, float)) or isinstance(value, bool):
            raise ConfigTypeError(key, "a string", value)
        return str(value)
    raise ConfigTypeError(key, _type_name(tp), value)


def _build(cls, raw: dict, prefix: str):
    hints = typing.get_type_hints(cls)
    aliases = KEY_ALIASES.get(prefix, {})
    kwargs = {}
    for key, value in raw.items():
        name = aliases.get(key, key)
        if name not in hints:
            raise UnknownKey(f"{prefix}.{key}")
        kwargs[name] = _coerce(value, hints[name], f"{prefix}.{key}")
    return cls(**kwargs)


def _resolve_paths(config: RunConfig, base: Path) -> None:
    for section, keys in PATH_KEYS.items():
        obj = getattr(config, section)
        for key in keys:
            value = getattr(obj, key)
            if value and not Path(value).is_absolute():
                candidate = base / value
                # tokenizer names like "google/byt5-base" are left alone
                if key == "text_tokenizer_path" and not candidate.exists():
                    continue
                setattr(obj, key, str(candidate))


def config_from_dict(raw: dict, base_dir=None, source_path=None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping with model/data/processor/training sections")
    sections = {}
    explicit = set()
    for key, value in raw.items():
        name = SECTION_ALIASES.get(key, key)
        if name not in SECTIONS:
            raise UnknownKey(key)
        if name in sections:
            raise ConfigError(f"section {name!r} given twice")
        sections[name] = value if value is not None else {}
    for name in SECTIONS:
        if name not in sections:
            raise MissingSection(name)
    built = {}
    for name, cls in SECTIONS.items():
        if not isinstance(sections[name], dict):
            raise ConfigTypeError(name, "a mapping", sections[name])
        built[name] = _build(cls, sections[name], name)
        for key in sections[name]:
            explicit.add(f"{name}.{KEY_ALIASES.get(name, {}).get(key, key)}")
    config = RunConfig(**built, source_path=source_path, explicit_keys=frozenset(explicit))
    if base_dir is not None:
        _resolve_paths(config, Path(base_dir))
    check_values(config)
    return config


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return config_from_dict(raw, base_dir=path.resolve().parent, source_path=str(path.resolve()))


def check_values(config: RunConfig) -> None:
    t = config.training
    for key in ("max_steps", "batch_size", "eval_every", "checkpoint_every", "beam", "num_threads"):
        if getattr(t, key) < 1:
            raise ConfigError(f"training.{key} must be >= 1, got {getattr(t, key)}")
    if t.max_len < 0:
        raise ConfigError("training.max_len must be >= 0")
    if len(t.betas) != 2:
        raise ConfigError("training.betas must have two entries")
    if config.processor.skip_frames_stride < 1:
        raise ConfigError("processor.skip_frames_stride must be >= 1")
    if config.processor.min_count < 1:
        raise ConfigError("processor.min_count must be >= 1")


def apply_overrides(config: RunConfig, overrides: dict[str, Any] | None) -> RunConfig:
    """Return a copy with ``section.key`` (or bare training ``key``) values replaced.

    String values are parsed as YAML scalars first, so ``"5"`` becomes ``5``.
    """
    if not overrides:
        return config
    config = copy.deepcopy(config)
    explicit = set(config.explicit_keys)
    for dotted, value in overrides.items():
        section, _, key = dotted.rpartition(".")
        section = SECTION_ALIASES.get(section or "training", section or "training")
        if section not in SECTIONS:
            raise UnknownKey(dotted)
        key = KEY_ALIASES.get(section, {}).get(key, key)
        obj = getattr(config, section)
        hints = typing.get_type_hints(type(obj))
        if key not in hints or dataclasses.is_dataclass(hints[key]):
            raise UnknownKey(dotted)
        if isinstance(value, str) and hints[key] not in (str, Optional[str]):
            try:
                value = yaml.safe_load(value)
            except yaml.YAMLError:
                pass
        setattr(obj, key, _coerce(value, hints[key], dotted))
        explicit.add(f"{section}.{key}")
    config.explicit_keys = frozenset(explicit)
    check_values(config)
    return config
