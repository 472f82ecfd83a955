"""Fixture builders and independent reference oracles shared by the tests."""
from __future__ import annotations

import math
import random
import re
import unicodedata
from fractions import Fraction
from pathlib import Path

import numpy as np
import yaml

from mmh.metadata import COLUMNS
from mmh.signal_io import PoseSequence, save_pose

WORDS = (
    "red blue green cat dog bird runs sits jumps big small old new one two three "
    "house tree river moon sun star"
).split()


# -- fixtures ----------------------------------------------------------------

def write_rows(path, rows, columns=COLUMNS):
    lines = ["\t".join(columns)]
    for row in rows:
        lines.append("\t".join(str(c) for c in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return Path(path)


def distinct_sentences(n, seed, lo=3, hi=5, words=WORDS):
    rng = random.Random(seed)
    out, seen = [], set()
    while len(out) < n:
        s = " ".join(rng.choice(words) for _ in range(rng.randint(lo, hi)))
        if s not in seen:
            seen.add(s)
            out.append(s)
    return out


def write_config(path, data: dict, model=None, processor=None, training=None):
    cfg = {
        "model": {"d_model": 64, "n_heads": 4, "d_ff": 128, "dropout": 0.0, **(model or {})},
        "data": data,
        "processor": processor or {},
        "training": {
            "max_steps": 300, "batch_size": 8, "lr": 3.0e-3, "eval_every": 100,
            "checkpoint_every": 100, "seed": 7, "output_dir": "run", **(training or {}),
        },
    }
    Path(path).write_text(yaml.safe_dump(cfg, sort_keys=False), encoding="utf-8")
    return Path(path)


def copy_task(directory, n=16, seed=0, **config_kw):
    """text2text copy task: every split is the same n sentences."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = [(s, "", "", "", "", s) for s in distinct_sentences(n, seed)]
    for split in ("train", "validation", "test"):
        write_rows(directory / f"{split}.tsv", rows)
    data = {f"{s}_metadata_file": f"{s}.tsv" for s in ("train", "validation", "test")}
    return write_config(directory / "config.yaml", data, **config_kw)


def synthetic_pose(rng: np.random.Generator, T=20, K=4, C=3):
    return rng.normal(size=(T, K, C)).astype(np.float32)


def pose_task(directory, n=16, K=4, C=3, seed=0, prompt="<slt> asl en", **config_kw):
    """pose2text fixture: n noise clips, each with a distinct 3-word target.

    Odd rows carry a non-zero millisecond clip inside a longer recording.
    """
    directory = Path(directory)
    (directory / "poses").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    targets = distinct_sentences(n, seed + 1, 3, 3)
    rows = []
    for i, target in enumerate(targets):
        T = int(rng.integers(18, 23))
        name = f"poses/clip{i:02d}.mmhpose"
        if i % 2:
            # 10 padding frames on each side; the clip selects the middle
            full = np.concatenate([synthetic_pose(rng, 10, K, C), synthetic_pose(rng, T, K, C),
                                   synthetic_pose(rng, 10, K, C)])
            save_pose(PoseSequence(full, 25.0), directory / name)
            rows.append((name, 400, 400 + T * 40, prompt, "", target))
        else:
            save_pose(PoseSequence(synthetic_pose(rng, T, K, C), 25.0), directory / name)
            rows.append((name, "", "", prompt, "", target))
    for split in ("train", "validation", "test"):
        write_rows(directory / f"{split}.tsv", rows)
    data = {f"{s}_metadata_file": f"{s}.tsv" for s in ("train", "validation", "test")}
    return write_config(directory / "config.yaml", data,
                        processor={"new_vocabulary": "<slt>,asl,en"}, **config_kw)


def mixed_task(directory, n=16, K=4, C=3, seed=0, **config_kw):
    """mixed2text fixture: text with one inline pose reference per sample."""
    directory = Path(directory)
    (directory / "poses").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    targets = distinct_sentences(n, seed + 1, 3, 3)
    rows = []
    for i, target in enumerate(targets):
        name = f"poses/m{i:02d}.mmhpose"
        save_pose(PoseSequence(synthetic_pose(rng, int(rng.integers(18, 23)), K, C), 25.0), directory / name)
        ref = f"<signal:{name}#40-600>" if i % 2 else f"<signal:{name}>"
        rows.append((f"translate {ref} into words", "", target))
    cols = ("encoder_input", "decoder_input", "label")
    for split in ("train", "validation", "test"):
        write_rows(directory / f"{split}.tsv", rows, cols)
    data = {f"{s}_metadata_file": f"{s}.tsv" for s in ("train", "validation", "test")}
    return write_config(directory / "config.yaml", data, **config_kw)


def exact_match(labels, predictions):
    return sum(a == b for a, b in zip(labels, predictions)) / len(labels)


# -- clip oracle -------------------------------------------------------------

def clip_oracle(num_frames, fps, start_ms, end_ms):
    """Frames whose time span [i/fps, (i+1)/fps) overlaps the requested interval."""
    rate = Fraction(fps)
    keep = []
    for i in range(num_frames):
        frame_start = Fraction(i) / rate * 1000
        frame_end = Fraction(i + 1) / rate * 1000
        if frame_end <= start_ms:
            continue
        if end_ms and frame_start >= end_ms:
            continue
        keep.append(i)
    return keep


# -- metric oracles ----------------------------------------------------------

def oracle_tokens(text):
    # punctuation split via unicodedata, written independently of the package
    out = []
    for chunk in text.split():
        cur = ""
        for ch in chunk:
            if unicodedata.category(ch)[0] == "P":
                if cur:
                    out.append(cur)
                cur = ""
                out.append(ch)
            else:
                cur += ch
        if cur:
            out.append(cur)
    return out


def count_grams(seq, n):
    counts = {}
    for i in range(len(seq) - n + 1):
        g = tuple(seq[i:i + n])
        counts[g] = counts.get(g, 0) + 1
    return counts


def bleu_oracle(hyps, refs):
    match = [0, 0, 0, 0]
    total = [0, 0, 0, 0]
    hl = rl = 0
    for h, r in zip(hyps, refs):
        ht, rt = oracle_tokens(h), oracle_tokens(r)
        hl += len(ht)
        rl += len(rt)
        for n in range(1, 5):
            hc, rc = count_grams(ht, n), count_grams(rt, n)
            for g, c in hc.items():
                total[n - 1] += c
                match[n - 1] += min(c, rc.get(g, 0))
    if hl == 0:
        return 0.0
    logs = []
    k = 1
    for n in range(4):
        if total[n] == 0:
            break
        if match[n] == 0:
            k *= 2
            logs.append(math.log(1.0 / (k * total[n])))
        else:
            logs.append(math.log(match[n] / total[n]))
    bp = math.exp(1 - rl / hl) if hl < rl else 1.0
    return 100 * bp * math.exp(sum(logs) / len(logs))


def chrf_oracle(hyps, refs, order=6, beta=2.0):
    fs = []
    for n in range(1, order + 1):
        m = ht = rt = 0
        for h, r in zip(hyps, refs):
            h = re.sub(r"\s+", "", h)
            r = re.sub(r"\s+", "", r)
            hc, rc = count_grams(h, n), count_grams(r, n)
            ht += sum(hc.values())
            rt += sum(rc.values())
            m += sum(min(c, rc.get(g, 0)) for g, c in hc.items())
        if ht == 0 or rt == 0:
            continue
        p, rcl = m / ht, m / rt
        fs.append(0.0 if m == 0 else (1 + beta ** 2) * p * rcl / (beta ** 2 * p + rcl))
    return 100 * sum(fs) / len(fs) if fs else 0.0


def random_corpus(rng: random.Random, max_pairs=5):
    vocab = ["a", "b", "c", "the", "cat", "sat", "on", "mat", ",", ".", "dog!", "x y"]
    n = rng.randint(1, max_pairs)

    def sentence():
        return " ".join(rng.choice(vocab) for _ in range(rng.randint(0, 8)))

    hyps = [sentence() for _ in range(n)]
    refs = [sentence() for _ in range(n)]
    return hyps, refs


# -- signal reference grammar oracle -----------------------------------------

_REF = re.compile(r"\\([<\\])|<signal:([^#>]+)(?:#(\d+)-(\d+))?>|(<signal:)|(.)", re.S)


def reference_oracle(text):
    """Segments as ("text", s) / ("signal", path, start, end) tuples, or "error"."""
    segments = []
    buf = ""
    for m in _REF.finditer(text):
        esc, path, start, end, bad, ch = m.groups()
        if esc is not None:
            buf += esc
        elif path is not None:
            if start is not None:
                s, e = int(start), int(end)
                if e != 0 and e <= s:
                    return "error"
            else:
                s = e = 0
            if buf:
                segments.append(("text", buf))
                buf = ""
            segments.append(("signal", path, s, e))
        elif bad is not None:
            return "error"
        else:
            buf += ch
    if buf:
        segments.append(("text", buf))
    return segments


# -- finite differences ------------------------------------------------------

REL_FLOOR = 1e-6


def gradient_check(model, batch, eps=1e-4):
    """Max relative error between autograd and central differences, per tensor.

    Relative error is |a - n| / max(|a|, |n|, REL_FLOOR): entries whose true
    gradient is ~0 are compared in absolute terms against the floor.
    """
    import torch

    model.train(False)
    params = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    model.zero_grad(set_to_none=True)
    model(batch).loss.backward()
    analytic = {n: p.grad.detach().clone() for n, p in params}
    worst = {}
    with torch.no_grad():
        for name, p in params:
            flat = p.view(-1)
            num = torch.empty_like(flat)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = model(batch).loss.item()
                flat[i] = orig - eps
                down = model(batch).loss.item()
                flat[i] = orig
                num[i] = (up - down) / (2 * eps)
            a = analytic[name].view(-1)
            denom = torch.maximum(torch.maximum(a.abs(), num.abs()), torch.tensor(REL_FLOOR, dtype=a.dtype))
            worst[name] = float(((a - num).abs() / denom).max())
    return worst
