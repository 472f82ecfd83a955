"""setup -> train -> generate.

Artifacts directory layout (``<training.output_dir>/setup`` by default)::

    config.yaml     resolved config snapshot, absolute data paths
    vocab.txt       one token per line, id = line number
    manifest.json   modality, input_dim, vocabulary hash, dataset fingerprints
    init.ckpt       deterministically initialized model (step 0)

Training writes ``checkpoints/step-NNNNNNN.ckpt``, ``checkpoints/index.json``
(last/best pointers) and ``train_log.jsonl`` under the output directory;
generation writes ``predictions_<split>.txt`` next to them.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .. import __version__
from ..errors import InputError, MMHError
from ..metadata import Violation, parse_metadata_tsv, validate_records
from ..metaproc import (
    DEFAULT_REGISTRY,
    MixedTable,
    Text,
    detect_signals,
    parse_mixed_tsv,
    process_mixed,
    validate_mixed,
)
from ..metrics import METRICS, EvalResult, UnknownMetric, compute_metric, perplexity, write_predictions
from ..model import (
    IncompatibleSpec,
    ModelSpec,
    NonFiniteLoss,
    OptimizerConfig,
    evaluate_loss,
    generate as decode,
    init_model,
    load_checkpoint,
    make_optimizer,
    restore_model,
    restore_optimizer,
    save_checkpoint,
    set_freeze_policy,
    train_step,
)
from ..processors import (
    MODALITIES,
    ModelInput,
    ProcessorConfig,
    Vocabulary,
    build_vocabulary,
    collate,
    extend_vocabulary,
    normalize,
    process_sample,
)
from .config import RunConfig, apply_overrides, config_from_dict, ConfigError

import yaml

logger = logging.getLogger(__name__)

MIXED_MODALITY = "mixed2text"
ALL_MODALITIES = tuple(MODALITIES) + (MIXED_MODALITY,)
TASKS = {"seq2seq": tuple(MODALITIES), "mixed-seq2seq": (MIXED_MODALITY,)}
SPLIT_KEYS = {
    "train": "train_metadata_file",
    "validation": "validation_metadata_file",
    "test": "test_metadata_file",
}


class UnknownModality(InputError):
    def __init__(self, modality):
        super().__init__(f"unknown modality {modality!r}; registered modalities: {', '.join(ALL_MODALITIES)}")
        self.modality = modality


class UnknownTask(InputError):
    pass


class ValidationFailed(InputError):
    def __init__(self, report: dict[str, list[Violation]]):
        lines = [f"{split} {v}" for split, items in report.items() for v in items]
        super().__init__("metadata validation failed:\n  " + "\n  ".join(lines))
        self.report = report


class SignalProbeFailed(InputError):
    pass


class DatasetChanged(InputError):
    pass


class ArtifactsError(MMHError):
    pass


@dataclass
class SetupArtifacts:
    directory: Path
    modality: str
    config: RunConfig
    vocab: Vocabulary
    manifest: dict

    @property
    def spec(self) -> ModelSpec:
        return ModelSpec.from_dict(self.manifest["spec"])

    @property
    def init_checkpoint(self) -> Path:
        return self.directory / "init.ckpt"

    @property
    def vocab_hash(self) -> str:
        return self.manifest["vocab_hash"]


@dataclass
class TrainResult:
    final_checkpoint: Path
    best_checkpoint: Path
    log_path: Path
    last_loss: float
    steps_run: int


@dataclass
class GenerateResult:
    result: EvalResult
    predictions_path: Path
    predictions: list[str] = field(default_factory=list)


# -- helpers -----------------------------------------------------------------

def file_fingerprint(path) -> dict:
    data = Path(path).read_bytes()
    rows = max(data.count(b"\n") - 1, 0) if data.endswith(b"\n") else data.count(b"\n")
    return {"path": str(Path(path).resolve()), "rows": rows, "sha256": hashlib.sha256(data).hexdigest()}


def processor_config(config: RunConfig, table_path=None) -> ProcessorConfig:
    p = config.processor
    return ProcessorConfig(
        skip_frames_stride=p.skip_frames_stride,
        fps_default=p.fps_default,
        normalize_pose=p.normalize_pose,
        image_height=p.image_height,
        image_width=p.image_width,
        image_scale=p.image_scale,
        glyph_table=p.glyph_table,
        base_dir=str(Path(table_path).parent) if table_path else None,
    )


def signal_registry(config: RunConfig) -> dict:
    registry = dict(DEFAULT_REGISTRY)
    for ext, kind in config.processor.signal_extensions.items():
        registry[ext.lower() if ext.startswith(".") else "." + ext.lower()] = kind
    return registry


def load_split(config: RunConfig, modality: str, split: str):
    path = getattr(config.data, SPLIT_KEYS[split])
    if not path:
        return None
    if not Path(path).is_file():
        raise ConfigError(f"data.{SPLIT_KEYS[split]}: file {path} does not exist")
    if modality == MIXED_MODALITY:
        return parse_mixed_tsv(path, split)
    return parse_metadata_tsv(path, split)


def validate_split(table, modality: str, config: RunConfig) -> list[Violation]:
    if isinstance(table, MixedTable):
        return validate_mixed(table, signal_registry(config))
    return validate_records(table, modality)


def corpus_text(table, modality: str, registry: dict):
    if isinstance(table, MixedTable):
        for rec in table.records:
            for seg in detect_signals(rec.encoder_input, registry):
                if isinstance(seg, Text):
                    yield seg.content
            yield rec.decoder_input
            yield rec.label
        return
    for rec in table.records:
        if modality == "text2text":
            yield rec.signal
        yield rec.encoder_prompt
        yield rec.decoder_prompt
        yield rec.output


def process_table(table, modality: str, vocab: Vocabulary, config: RunConfig) -> list[ModelInput]:
    pcfg = processor_config(config, table.source_path)
    if isinstance(table, MixedTable):
        registry = signal_registry(config)
        return [process_mixed(rec, vocab, pcfg, registry, index=i) for i, rec in enumerate(table.records)]
    return [process_sample(rec, modality, vocab, pcfg, index=i) for i, rec in enumerate(table.records)]


def apply_filters(table, inputs: list[ModelInput], config: RunConfig) -> list[ModelInput]:
    f = config.data.filters
    kept = []
    for x in inputs:
        record = table.records[x.source_index]
        if f.max_signal_frames is not None:
            feats = x.encoder_features
            if feats is not None and feats.shape[0] > f.max_signal_frames:
                continue
        if f.max_output_tokens is not None and max(len(x.label_tokens) - 1, 0) > f.max_output_tokens:
            continue
        if any(not getattr(record, name, "") for name in f.required_nonempty_fields):
            continue
        kept.append(x)
    return kept


def _seed_for(config: RunConfig) -> int:
    env = os.environ.get("MMH_SEED")
    if env is not None and "training.seed" not in config.explicit_keys:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"MMH_SEED must be an integer, got {env!r}") from None
    return config.training.seed


# -- setup -------------------------------------------------------------------

def setup(modality: str, config: RunConfig, output_dir=None) -> SetupArtifacts:
    if modality not in ALL_MODALITIES:
        raise UnknownModality(modality)
    if not config.data.train_metadata_file:
        raise ConfigError("data.train_metadata_file is required")
    seed = _seed_for(config)
    config.training.seed = seed

    tables = {split: load_split(config, modality, split) for split in SPLIT_KEYS}
    report = {}
    for split, table in tables.items():
        if table is not None:
            violations = validate_split(table, modality, config)
            if violations:
                report[split] = violations
    if report:
        raise ValidationFailed(report)
    train_table = tables["train"]

    p = config.processor
    if p.text_tokenizer_path:
        if not Path(p.text_tokenizer_path).is_file():
            raise ConfigError(
                f"processor.text_tokenizer_path {p.text_tokenizer_path!r} is not a vocabulary file; "
                "pretrained tokenizers are not bundled, omit it to build one from the train split"
            )
        vocab = Vocabulary.load(p.text_tokenizer_path)
    else:
        vocab = build_vocabulary(corpus_text(train_table, modality, signal_registry(config)), p.min_count)
    if p.new_vocabulary:
        vocab = extend_vocabulary(vocab, p.new_vocabulary)

    input_dim = None
    if modality != "text2text":
        try:
            probe = process_table(
                type(train_table)(train_table.split_name, train_table.records[:1], train_table.source_path),
                modality, vocab, config,
            )[0]
        except InputError as exc:
            raise SignalProbeFailed(f"could not load the first training signal: {exc}") from exc
        input_dim = probe.feature_dim
        if modality == MIXED_MODALITY and input_dim is None:
            raise SignalProbeFailed("the first mixed training record contains no signal reference")
    m = config.model
    if m.input_dim is not None and m.input_dim != input_dim:
        raise ConfigError(f"model.input_dim={m.input_dim} but the data has feature width {input_dim}")
    spec = ModelSpec(
        vocab_size=len(vocab), input_dim=input_dim, extractor_type=m.extractor_type,
        mapper_type=m.mapper_type, backbone_type=m.backbone_type, d_model=m.d_model,
        n_layers=m.n_layers, n_heads=m.n_heads, d_ff=m.d_ff, dropout=m.dropout,
        max_positions=m.max_positions,
    ).validate()

    torch.set_num_threads(config.training.num_threads)
    model = init_model(spec, seed)
    if m.pretrained_checkpoint:
        _load_pretrained(model, m.pretrained_checkpoint)

    directory = Path(output_dir) if output_dir else Path(config.training.output_dir) / "setup"
    directory.mkdir(parents=True, exist_ok=True)
    config.model.input_dim = input_dim
    config.dump(directory / "config.yaml")
    vocab.save(directory / "vocab.txt")
    manifest = {
        "version": __version__,
        "modality": modality,
        "input_dim": input_dim,
        "vocab_size": len(vocab),
        "vocab_frozen_size": vocab.frozen_size,
        "vocab_hash": vocab.fingerprint(),
        "seed": seed,
        "spec": spec.to_dict(),
        "datasets": {
            split: file_fingerprint(t.source_path) for split, t in tables.items() if t is not None
        },
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    save_checkpoint(directory / "init.ckpt", model, None, 0, manifest["vocab_hash"])
    return SetupArtifacts(directory, modality, config, vocab, manifest)


def _load_pretrained(model, path) -> None:
    ckpt = load_checkpoint(path)
    state = model.state_dict()
    for name, tensor in state.items():
        arr = ckpt.tensors.get(f"param/{name}")
        if arr is None or tuple(arr.shape) != tuple(tensor.shape):
            raise IncompatibleSpec(f"pretrained checkpoint {path} has no matching tensor for {name!r}")
        with torch.no_grad():
            tensor.copy_(torch.from_numpy(arr.copy()))


def load_artifacts(directory) -> SetupArtifacts:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise ArtifactsError(f"{directory} is not a setup directory (no manifest.json); run setup first")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    raw = yaml.safe_load((directory / "config.yaml").read_text(encoding="utf-8"))
    config = config_from_dict(raw)
    config.training.seed = manifest["seed"]
    config.explicit_keys = frozenset(config.explicit_keys | {"training.seed"})
    vocab = Vocabulary.load(directory / "vocab.txt", manifest["vocab_frozen_size"])
    if vocab.fingerprint() != manifest["vocab_hash"]:
        raise ArtifactsError(f"{directory}/vocab.txt does not match the manifest hash")
    return SetupArtifacts(directory, manifest["modality"], config, vocab, manifest)


def _check_fingerprints(artifacts: SetupArtifacts, splits) -> None:
    for split in splits:
        expected = artifacts.manifest["datasets"].get(split)
        if expected is None:
            continue
        path = Path(expected["path"])
        if not path.is_file():
            raise DatasetChanged(f"{split} metadata {path} no longer exists")
        if file_fingerprint(path)["sha256"] != expected["sha256"]:
            raise DatasetChanged(f"{split} metadata {path} changed since setup; rerun setup")


def _restrict_overrides(overrides: dict | None) -> dict:
    overrides = dict(overrides or {})
    for key in overrides:
        if (key.rpartition(".")[0] or "training") != "training":
            raise ConfigError(f"only training.* keys can be overridden after setup, got {key!r}")
    return overrides


# -- train -------------------------------------------------------------------

class _Log:
    def __init__(self, path: Path, append: bool):
        self.path = path
        path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(path, "a" if append else "w", encoding="utf-8")

    def write(self, **record):
        self._fh.write(json.dumps(record, sort_keys=False) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()


def _checkpoint_dir(output_dir: Path) -> Path:
    return output_dir / "checkpoints"


def _read_index(ckpt_dir: Path) -> dict:
    path = ckpt_dir / "index.json"
    if path.is_file():
        return json.loads(path.read_text(encoding="utf-8"))
    return {}


def _write_index(ckpt_dir: Path, index: dict) -> None:
    (ckpt_dir / "index.json").write_text(json.dumps(index, indent=2) + "\n", encoding="utf-8")


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng(seed + epoch).permutation(n)


def batch_for_step(step: int, n: int, batch_size: int, seed: int) -> np.ndarray:
    """Sample indices of 1-based ``step``; a pure function of its arguments."""
    per_epoch = math.ceil(n / batch_size)
    epoch, k = divmod(step - 1, per_epoch)
    return epoch_order(n, seed, epoch)[k * batch_size:(k + 1) * batch_size]


def _check_task(task: str | None, modality: str) -> None:
    if task is None:
        return
    if task not in TASKS:
        raise UnknownTask(f"unknown task {task!r}; available: {', '.join(TASKS)}")
    if modality not in TASKS[task]:
        raise UnknownTask(f"task {task!r} does not accept modality {modality!r}")


def train(artifacts_dir, overrides: dict[str, Any] | None = None, output_dir=None,
          resume_from=None, task: str | None = None) -> TrainResult:
    artifacts = load_artifacts(artifacts_dir)
    _check_task(task, artifacts.modality)
    config = apply_overrides(artifacts.config, _restrict_overrides(overrides))
    t = config.training
    output_dir = Path(output_dir or t.output_dir)
    ckpt_dir = _checkpoint_dir(output_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    torch.set_num_threads(t.num_threads)

    _check_fingerprints(artifacts, ("train", "validation"))
    modality, vocab = artifacts.modality, artifacts.vocab
    train_table = load_split(config, modality, "train")
    train_inputs = apply_filters(train_table, process_table(train_table, modality, vocab, config), config)
    if not train_inputs:
        raise ValidationFailed({"train": [Violation(-1, "data filters removed every sample")]})
    val_table = load_split(config, modality, "validation")
    val_batches = []
    if val_table is not None:
        val_inputs = apply_filters(val_table, process_table(val_table, modality, vocab, config), config)
        val_inputs = [x for x in val_inputs if x.label_tokens]
        val_batches = [collate(val_inputs[i:i + t.batch_size], vocab)
                       for i in range(0, len(val_inputs), t.batch_size)]

    opt_config = OptimizerConfig(lr=t.lr, betas=tuple(t.betas), eps=t.eps, clip_norm=t.clip_norm)
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from, spec=artifacts.spec, vocab_hash=artifacts.vocab_hash)
        model = restore_model(ckpt)
        set_freeze_policy(model, t.freeze_policy)
        optimizer = restore_optimizer(model, ckpt, opt_config)
        start = ckpt.step
        index = _read_index(ckpt_dir)
    else:
        ckpt = load_checkpoint(artifacts.init_checkpoint, spec=artifacts.spec, vocab_hash=artifacts.vocab_hash)
        model = restore_model(ckpt)
        set_freeze_policy(model, t.freeze_policy)
        optimizer = make_optimizer(model, opt_config)
        start = 0
        index = {}
        for stale in ckpt_dir.glob("step-*.ckpt"):
            stale.unlink()

    log = _Log(output_dir / "train_log.jsonl", append=resume_from is not None)
    best_val = index.get("best_val_loss", math.inf)
    last_loss = math.nan

    def checkpoint(step):
        path = ckpt_dir / f"step-{step:07d}.ckpt"
        if not path.exists():
            save_checkpoint(path, model, optimizer, step, artifacts.vocab_hash,
                            extra={"seed": t.seed, "modality": modality})
        index["last"] = path.name
        index.setdefault("best", path.name)
        _write_index(ckpt_dir, index)
        return path

    try:
        for step in range(start + 1, t.max_steps + 1):
            ids = batch_for_step(step, len(train_inputs), t.batch_size, t.seed)
            batch = collate([train_inputs[i] for i in ids], vocab)
            try:
                last_loss = train_step(model, batch, optimizer, t.clip_norm)
            except NonFiniteLoss:
                log.write(step=step, error="non-finite loss")
                raise
            log.write(step=step, loss=last_loss, lr=t.lr)
            final = step == t.max_steps
            if val_batches and (step % t.eval_every == 0 or final):
                val_loss, _ = evaluate_loss(model, val_batches)
                log.write(step=step, val_loss=val_loss, ppl=perplexity(val_loss))
                if val_loss < best_val:
                    best_val = val_loss
                    path = checkpoint(step)
                    index["best"] = path.name
                    index["best_val_loss"] = best_val
                    _write_index(ckpt_dir, index)
            if step % t.checkpoint_every == 0 or final:
                checkpoint(step)
    finally:
        log.close()

    if not index:
        checkpoint(start)
    if not val_batches:
        index["best"] = index["last"]
        _write_index(ckpt_dir, index)
    return TrainResult(
        final_checkpoint=ckpt_dir / index["last"],
        best_checkpoint=ckpt_dir / index["best"],
        log_path=output_dir / "train_log.jsonl",
        last_loss=last_loss,
        steps_run=max(t.max_steps - start, 0),
    )


def read_log(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line]


# -- generate ----------------------------------------------------------------

def default_checkpoint(output_dir) -> Path:
    ckpt_dir = _checkpoint_dir(Path(output_dir))
    index = _read_index(ckpt_dir)
    name = index.get("best") or index.get("last")
    if not name:
        raise ArtifactsError(f"no trained checkpoint found under {ckpt_dir}; run train first")
    return ckpt_dir / name


def generate(artifacts_dir, checkpoint=None, metric_name: str = "bleu", split: str = "test",
             output_dir=None, predictions_path=None, overrides: dict[str, Any] | None = None,
             task: str | None = None) -> GenerateResult:
    if metric_name not in METRICS:
        raise UnknownMetric(f"unknown metric {metric_name!r}; available: {', '.join(METRICS)}")
    if split not in SPLIT_KEYS:
        raise ConfigError(f"unknown split {split!r}")
    artifacts = load_artifacts(artifacts_dir)
    _check_task(task, artifacts.modality)
    config = apply_overrides(artifacts.config, _restrict_overrides(overrides))
    t = config.training
    torch.set_num_threads(t.num_threads)
    output_dir = Path(output_dir or t.output_dir)
    checkpoint = Path(checkpoint) if checkpoint else default_checkpoint(output_dir)
    ckpt = load_checkpoint(checkpoint, spec=artifacts.spec, vocab_hash=artifacts.vocab_hash)
    model = restore_model(ckpt)
    model.eval()

    modality, vocab = artifacts.modality, artifacts.vocab
    table = load_split(config, modality, split)
    if table is None:
        raise ConfigError(f"data.{SPLIT_KEYS[split]} is not set")
    inputs = process_table(table, modality, vocab, config)
    references = [r.label if isinstance(table, MixedTable) else r.output for r in table.records]

    predictions = [vocab.detokenize(decode(model, x, t.max_len, t.beam, vocab.eos_id)) for x in inputs]
    out_path = Path(predictions_path) if predictions_path else output_dir / f"predictions_{split}.txt"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(references, predictions, out_path)

    exact = sum(p == normalize(r) for p, r in zip(predictions, references)) / len(references)
    if metric_name == "perplexity":
        scored = [x for x in inputs if x.label_tokens]
        batches = [collate(scored[i:i + t.batch_size], vocab) for i in range(0, len(scored), t.batch_size)]
        nll, n_tokens = evaluate_loss(model, batches)
        result = EvalResult("perplexity", perplexity(nll), len(scored), {"mean_nll": nll, "tokens": n_tokens})
    else:
        result = compute_metric(metric_name, predictions, references)
    result.details["exact_match"] = exact
    result.details["checkpoint"] = str(checkpoint)
    return GenerateResult(result, out_path, predictions)
