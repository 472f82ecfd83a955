"""Feature extractor -> multimodal mapper -> encoder-decoder backbone."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import InputError, MMHError
from ..processors.sample import IGNORE_INDEX, Batch

EXTRACTOR_TYPES = ("identity", "linear")
MAPPER_TYPES = ("linear", "mlp")
BACKBONE_TYPES = ("tiny-transformer",)


class InvalidSpec(InputError):
    pass


class ShapeMismatch(MMHError):
    pass


class SequenceTooLong(MMHError):
    pass


class DegenerateBatch(MMHError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    vocab_size: int
    input_dim: int | None = None  # None: tokens-only model with no signal path
    extractor_type: str = "identity"
    mapper_type: str = "linear"
    backbone_type: str = "tiny-transformer"
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    dropout: float = 0.1
    max_positions: int = 512

    def validate(self) -> "ModelSpec":
        ints = ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_positions")
        for name in ints:
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise InvalidSpec(f"{name} must be a positive integer, got {value!r}")
        if self.input_dim is not None and (not isinstance(self.input_dim, int) or self.input_dim < 1):
            raise InvalidSpec(f"input_dim must be a positive integer or None, got {self.input_dim!r}")
        if self.vocab_size < 3:
            raise InvalidSpec("vocab_size must cover the three special tokens")
        if self.d_model % self.n_heads:
            raise InvalidSpec(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidSpec(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.extractor_type not in EXTRACTOR_TYPES:
            raise InvalidSpec(f"extractor_type must be one of {EXTRACTOR_TYPES}")
        if self.mapper_type not in MAPPER_TYPES:
            raise InvalidSpec(f"mapper_type must be one of {MAPPER_TYPES}")
        if self.backbone_type not in BACKBONE_TYPES:
            raise InvalidSpec(
                f"backbone_type {self.backbone_type!r} is not available; pretrained backbones "
                f"are not bundled, use one of {BACKBONE_TYPES}"
            )
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass
class ForwardOutput:
    logits: torch.Tensor
    loss: torch.Tensor
    n_tokens: int


def sinusoid_table(n_positions: int, d_model: int) -> torch.Tensor:
    pos = torch.arange(n_positions, dtype=torch.float64)[:, None]
    i = torch.arange(0, d_model, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i / d_model)
    table = torch.zeros(n_positions, d_model, dtype=torch.float64)
    table[:, 0::2] = torch.sin(angle)
    table[:, 1::2] = torch.cos(angle[:, : d_model // 2])
    return table


class SeededDropout(nn.Module):
    """Dropout drawing from a generator owned by the model, so the random
    stream can be checkpointed without touching global RNG state."""

    def __init__(self, p: float, generator: torch.Generator):
        super().__init__()
        self.p = p
        self.generator = generator

    def forward(self, x):
        if not self.training or self.p == 0.0:
            return x
        keep = torch.empty_like(x).bernoulli_(1.0 - self.p, generator=self.generator)
        return x * keep / (1.0 - self.p)


class Attention(nn.Module):
    def __init__(self, d_model, n_heads, dropout):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)
        self.dropout = dropout

    def _heads(self, x):
        B, L, _ = x.shape
        return x.view(B, L, self.n_heads, self.d_head).transpose(1, 2)

    def forward(self, x, memory, allowed):
        # allowed: bool, broadcastable to [B, heads, Lq, Lk]
        q, k, v = self._heads(self.q_proj(x)), self._heads(self.k_proj(memory)), self._heads(self.v_proj(memory))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        scores = scores.masked_fill(~allowed, float("-inf"))
        weights = self.dropout(torch.softmax(scores, dim=-1))
        out = (weights @ v).transpose(1, 2).reshape(x.shape[0], x.shape[1], -1)
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, d_model, d_ff, dropout):
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_ff)
        self.fc2 = nn.Linear(d_ff, d_model)
        self.dropout = dropout

    def forward(self, x):
        return self.fc2(self.dropout(F.gelu(self.fc1(x))))


class EncoderLayer(nn.Module):
    def __init__(self, spec: ModelSpec, dropout: SeededDropout):
        super().__init__()
        self.self_norm = nn.LayerNorm(spec.d_model)
        self.self_attn = Attention(spec.d_model, spec.n_heads, dropout)
        self.ff_norm = nn.LayerNorm(spec.d_model)
        self.ff = FeedForward(spec.d_model, spec.d_ff, dropout)
        self.dropout = dropout

    def forward(self, x, allowed):
        h = self.self_norm(x)
        x = x + self.dropout(self.self_attn(h, h, allowed))
        return x + self.dropout(self.ff(self.ff_norm(x)))


class DecoderLayer(nn.Module):
    def __init__(self, spec: ModelSpec, dropout: SeededDropout):
        super().__init__()
        self.self_norm = nn.LayerNorm(spec.d_model)
        self.self_attn = Attention(spec.d_model, spec.n_heads, dropout)
        self.cross_norm = nn.LayerNorm(spec.d_model)
        self.cross_attn = Attention(spec.d_model, spec.n_heads, dropout)
        self.ff_norm = nn.LayerNorm(spec.d_model)
        self.ff = FeedForward(spec.d_model, spec.d_ff, dropout)
        self.dropout = dropout

    def forward(self, y, memory, causal, memory_allowed):
        h = self.self_norm(y)
        y = y + self.dropout(self.self_attn(h, h, causal))
        y = y + self.dropout(self.cross_attn(self.cross_norm(y), memory, memory_allowed))
        return y + self.dropout(self.ff(self.ff_norm(y)))


class MLPMapper(nn.Module):
    def __init__(self, d_in, d_model):
        super().__init__()
        self.fc1 = nn.Linear(d_in, d_model)
        self.fc2 = nn.Linear(d_model, d_model)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class MultimodalSeq2Seq(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec.validate()
        d = spec.d_model
        self.rng = torch.Generator()
        drop = SeededDropout(spec.dropout, self.rng)
        self.dropout = drop

        # one matrix for token lookup and for the output projection
        self.shared_embedding = nn.Parameter(torch.empty(spec.vocab_size, d))
        self.feature_extractor = None
        self.mapper = None
        if spec.input_dim is not None:
            if spec.extractor_type == "linear":
                self.feature_extractor = nn.Linear(spec.input_dim, d)
                d_f = d
            else:
                self.feature_extractor = nn.Identity()
                d_f = spec.input_dim
            self.mapper = nn.Linear(d_f, d) if spec.mapper_type == "linear" else MLPMapper(d_f, d)
        self.encoder = nn.ModuleList(EncoderLayer(spec, drop) for _ in range(spec.n_layers))
        self.decoder = nn.ModuleList(DecoderLayer(spec, drop) for _ in range(spec.n_layers))
        self.encoder_norm = nn.LayerNorm(d)
        self.decoder_norm = nn.LayerNorm(d)
        self.register_buffer("positions", sinusoid_table(spec.max_positions, d).float(), persistent=False)

    @property
    def dtype(self):
        return self.shared_embedding.dtype

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name == "shared_embedding":
                    bound = math.sqrt(6.0 / sum(p.shape)) * self.spec.d_model ** -0.5
                    p.uniform_(-bound, bound, generator=gen)
                elif name.endswith("norm.weight"):
                    p.fill_(1.0)
                elif p.dim() == 2:
                    bound = math.sqrt(6.0 / sum(p.shape))
                    p.uniform_(-bound, bound, generator=gen)
                else:
                    p.zero_()
        self.rng.manual_seed(seed + 1)

    # -- stages --------------------------------------------------------

    def extract_features(self, x):
        if self.feature_extractor is None:
            raise ShapeMismatch("this model has no signal path (input_dim is None)")
        if x.shape[-1] != self.spec.input_dim:
            raise ShapeMismatch(f"expected feature width {self.spec.input_dim}, got {x.shape[-1]}")
        return self.feature_extractor(x.to(self.dtype))

    def map_features(self, f):
        if self.mapper is None:
            raise ShapeMismatch("this model has no signal path (input_dim is None)")
        expected = self.mapper.in_features if isinstance(self.mapper, nn.Linear) else self.mapper.fc1.in_features
        if f.shape[-1] != expected:
            raise ShapeMismatch(f"mapper expects width {expected}, got {f.shape[-1]}")
        return self.mapper(f.to(self.dtype))

    def embed_tokens(self, ids):
        return F.embedding(ids, self.shared_embedding) * math.sqrt(self.spec.d_model)

    def _positions(self, length):
        if length > self.spec.max_positions:
            raise SequenceTooLong(f"sequence of length {length} exceeds max_positions={self.spec.max_positions}")
        return self.positions[:length].to(self.dtype)

    def encode(self, batch: Batch):
        x = self.embed_tokens(batch.encoder_tokens)
        if batch.encoder_features is not None:
            mapped = self.map_features(self.extract_features(batch.encoder_features))
            index = batch.feature_index.unsqueeze(-1).expand(-1, -1, mapped.shape[-1])
            x = torch.where(batch.is_feature.unsqueeze(-1), mapped.gather(1, index), x)
        x = self.dropout(x + self._positions(x.shape[1]))
        allowed = batch.encoder_mask[:, None, None, :]
        for layer in self.encoder:
            x = layer(x, allowed)
        return self.encoder_norm(x), allowed

    def decode(self, decoder_input, memory, memory_allowed):
        L = decoder_input.shape[1]
        y = self.dropout(self.embed_tokens(decoder_input) + self._positions(L))
        causal = torch.ones(L, L, dtype=torch.bool, device=y.device).tril()
        for layer in self.decoder:
            y = layer(y, memory, causal, memory_allowed)
        return self.decoder_norm(y) @ self.shared_embedding.t()

    def forward(self, batch: Batch) -> ForwardOutput:
        n = batch.num_targets
        if n == 0:
            raise DegenerateBatch("every label position is ignored; loss is undefined")
        memory, allowed = self.encode(batch)
        logits = self.decode(batch.decoder_input, memory, allowed)
        loss = F.cross_entropy(
            logits.reshape(-1, logits.shape[-1]), batch.labels.reshape(-1),
            ignore_index=IGNORE_INDEX, reduction="sum",
        ) / n
        return ForwardOutput(logits, loss, n)


def init_model(spec: ModelSpec, seed: int, dtype=torch.float32) -> MultimodalSeq2Seq:
    model = MultimodalSeq2Seq(spec)
    model.reset_parameters(seed)
    return model.to(dtype)


def extract_features(model: MultimodalSeq2Seq, x):
    return model.extract_features(x)


def map_features(model: MultimodalSeq2Seq, f):
    return model.map_features(f)


def forward(model: MultimodalSeq2Seq, batch: Batch, train_mode: bool = False) -> ForwardOutput:
    model.train(train_mode)
    return model(batch)
