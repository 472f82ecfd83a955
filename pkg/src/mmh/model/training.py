"""Freezing policies and the optimizer step."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from ..errors import InputError, MMHError
from ..processors.sample import Batch
from .network import MultimodalSeq2Seq

FREEZE_POLICIES = (
    "none",
    "freeze_backbone_except_embedding",
    "freeze_all_except_mapper",
    "freeze_all",
)
_ALIASES = {"freeze_all_except(mapper)": "freeze_all_except_mapper"}


class UnknownPolicy(InputError):
    pass


class NoTrainableParameters(InputError):
    pass


class NonFiniteLoss(MMHError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 3e-4
    betas: tuple[float, float] = (0.9, 0.98)
    eps: float = 1e-9
    clip_norm: float = 1.0


def _is_signal_path(name: str) -> bool:
    return name.startswith(("feature_extractor.", "mapper."))


def set_freeze_policy(model: MultimodalSeq2Seq, policy: str) -> MultimodalSeq2Seq:
    """Set ``requires_grad`` on every parameter according to ``policy``.

    ``freeze_backbone_except_embedding`` leaves the shared embedding plus the
    extractor and mapper trainable; everything else in the backbone is frozen.
    """
    policy = _ALIASES.get(policy, policy)
    if policy not in FREEZE_POLICIES:
        raise UnknownPolicy(f"unknown freeze policy {policy!r}; expected one of {FREEZE_POLICIES}")
    for name, p in model.named_parameters():
        if policy == "none":
            trainable = True
        elif policy == "freeze_backbone_except_embedding":
            trainable = name == "shared_embedding" or _is_signal_path(name)
        elif policy == "freeze_all_except_mapper":
            trainable = name.startswith("mapper.")
        else:
            trainable = False
        p.requires_grad_(trainable)
    return model


def trainable_parameters(model: MultimodalSeq2Seq) -> list[tuple[str, torch.nn.Parameter]]:
    return [(n, p) for n, p in model.named_parameters() if p.requires_grad]


def make_optimizer(model: MultimodalSeq2Seq, config: OptimizerConfig) -> torch.optim.Adam:
    params = [p for _, p in trainable_parameters(model)]
    if not params:
        raise NoTrainableParameters("the freeze policy left no trainable parameters")
    return torch.optim.Adam(params, lr=config.lr, betas=tuple(config.betas), eps=config.eps,
                            foreach=False)


def train_step(model: MultimodalSeq2Seq, batch: Batch, optimizer: torch.optim.Optimizer,
               clip_norm: float | None = 1.0) -> float:
    """One teacher-forced update. Returns the pre-update loss."""
    model.train(True)
    optimizer.zero_grad(set_to_none=True)
    out = model(batch)
    loss = out.loss
    if not torch.isfinite(loss):
        raise NonFiniteLoss(f"loss became {loss.item()}")
    loss.backward()
    params = [p for group in optimizer.param_groups for p in group["params"]]
    if clip_norm:
        torch.nn.utils.clip_grad_norm_(params, clip_norm)
    optimizer.step()
    return loss.item()


@torch.no_grad()
def evaluate_loss(model: MultimodalSeq2Seq, batches) -> tuple[float, int]:
    """Token-weighted mean loss over ``batches`` and the token count."""
    model.train(False)
    total = 0.0
    count = 0
    for batch in batches:
        out = model(batch)
        total += out.loss.item() * out.n_tokens
        count += out.n_tokens
    if count == 0:
        return math.nan, 0
    return total / count, count
