"""Greedy and beam-search decoding for a single processed sample."""
from __future__ import annotations

from dataclasses import replace

import torch

from ..processors.sample import ModelInput, collate
from .network import MultimodalSeq2Seq


def _encode(model: MultimodalSeq2Seq, model_input: ModelInput):
    batch = collate([replace(model_input, label_tokens=())])
    return model.encode(batch)


def _next_logprobs(model, prefixes, memory, allowed):
    n = len(prefixes)
    ids = torch.tensor(prefixes, dtype=torch.long)
    logits = model.decode(ids, memory.expand(n, -1, -1), allowed.expand(n, -1, -1, -1))
    return torch.log_softmax(logits[:, -1], dim=-1)


@torch.no_grad()
def generate_greedy(model: MultimodalSeq2Seq, model_input: ModelInput, max_len: int,
                    eos_id: int = 1) -> list[int]:
    """Pick the most likely token at every step, starting from the decoder prompt."""
    model.train(False)
    if max_len <= 0:
        return []
    memory, allowed = _encode(model, model_input)
    prompt = list(model_input.decoder_prompt_tokens)
    out: list[int] = []
    for _ in range(max_len):
        logp = _next_logprobs(model, [prompt + out], memory, allowed)[0]
        token = int(torch.topk(logp, 1).indices[0])
        if token == eos_id:
            break
        out.append(token)
    return out


@torch.no_grad()
def generate_beam(model: MultimodalSeq2Seq, model_input: ModelInput, beam: int, max_len: int,
                  eos_id: int = 1) -> list[int]:
    """Beam search over summed log-probabilities.

    Each live hypothesis proposes its ``beam`` best continuations and the
    ``beam`` best candidates overall survive. Finished hypotheses are ranked
    by mean log-probability per generated token (eos included). With
    ``beam == 1`` this is exactly :func:`generate_greedy`.
    """
    if beam < 1:
        raise ValueError(f"beam must be >= 1, got {beam}")
    model.train(False)
    if max_len <= 0:
        return []
    memory, allowed = _encode(model, model_input)
    prompt = list(model_input.decoder_prompt_tokens)
    live: list[tuple[float, list[int]]] = [(0.0, [])]
    finished: list[tuple[float, list[int]]] = []
    for _ in range(max_len):
        logp = _next_logprobs(model, [prompt + toks for _, toks in live], memory, allowed)
        top = torch.topk(logp, min(beam, logp.shape[-1]), dim=-1)
        candidates = []
        for (score, toks), values, indices in zip(live, top.values.tolist(), top.indices.tolist()):
            for lp, tok in zip(values, indices):
                candidates.append((score + lp, toks + [tok]))
        candidates.sort(key=lambda c: -c[0])
        live = []
        for score, toks in candidates:
            if toks[-1] == eos_id:
                finished.append((score, toks[:-1]))
            else:
                live.append((score, toks))
            if len(live) == beam:
                break
        if len(finished) >= beam or not live:
            break
    pool = finished or live
    best = max(pool, key=lambda c: c[0] / (len(c[1]) + 1))
    return best[1]


def generate(model: MultimodalSeq2Seq, model_input: ModelInput, max_len: int, beam: int = 1,
             eos_id: int = 1) -> list[int]:
    if beam == 1:
        return generate_greedy(model, model_input, max_len, eos_id)
    return generate_beam(model, model_input, beam, max_len, eos_id)
