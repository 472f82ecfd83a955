"""Word-level vocabulary with extensible control tokens."""
from __future__ import annotations

import hashlib
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from ..errors import InputError

PAD, EOS, UNK = "<pad>", "</s>", "<unk>"
SPECIAL_TOKENS = (PAD, EOS, UNK)


class EmptyCorpus(InputError):
    pass


class VocabularyError(InputError):
    pass


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def pretokenize(text: str) -> list[str]:
    """Split on whitespace, then break every punctuation character out
    into its own token. Shared by the vocabulary and the word renderer."""
    tokens = []
    for chunk in text.split():
        word = []
        for ch in chunk:
            if _is_punct(ch):
                if word:
                    tokens.append("".join(word))
                    word = []
                tokens.append(ch)
            else:
                word.append(ch)
        if word:
            tokens.append("".join(word))
    return tokens


def normalize(text: str) -> str:
    return " ".join(pretokenize(text))


@dataclass(frozen=True, eq=False)
class Vocabulary:
    id_to_token: tuple[str, ...]
    frozen_size: int

    def __post_init__(self):
        tokens = tuple(self.id_to_token)
        if tokens[:3] != SPECIAL_TOKENS:
            raise VocabularyError(f"ids 0..2 must be {SPECIAL_TOKENS}, got {tokens[:3]}")
        mapping = {}
        for i, tok in enumerate(tokens):
            if not tok or any(c.isspace() for c in tok):
                raise VocabularyError(f"invalid token {tok!r} at id {i}")
            if tok in mapping:
                raise VocabularyError(f"duplicate token {tok!r} at ids {mapping[tok]} and {i}")
            mapping[tok] = i
        if not 3 <= self.frozen_size <= len(tokens):
            raise VocabularyError(f"frozen_size {self.frozen_size} outside [3, {len(tokens)}]")
        object.__setattr__(self, "id_to_token", tokens)
        object.__setattr__(self, "token_to_id", mapping)
        # added tokens are matched whole, before pre-tokenization splits them
        added = sorted(tokens[self.frozen_size:] + SPECIAL_TOKENS, key=len, reverse=True)
        object.__setattr__(
            self, "_atomic", re.compile("|".join(re.escape(t) for t in added)) if added else None
        )

    pad_id = 0
    eos_id = 1
    unk_id = 2

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def __eq__(self, other):
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return self.id_to_token == other.id_to_token and self.frozen_size == other.frozen_size

    def __hash__(self):
        return hash((self.id_to_token, self.frozen_size))

    @property
    def added_tokens(self) -> tuple[str, ...]:
        return self.id_to_token[self.frozen_size:]

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset((self.pad_id, self.eos_id, self.unk_id))

    def split(self, text: str) -> list[str]:
        """Token strings for ``text``; added and special tokens stay whole."""
        pieces = []
        pos = 0
        for m in self._atomic.finditer(text):
            pieces.extend(pretokenize(text[pos:m.start()]))
            pieces.append(m.group())
            pos = m.end()
        pieces.extend(pretokenize(text[pos:]))
        return pieces

    def tokenize(self, text: str) -> list[int]:
        lookup = self.token_to_id.get
        return [lookup(tok, self.unk_id) for tok in self.split(text)]

    def detokenize(self, ids: Iterable[int]) -> str:
        specials = self.special_ids
        out = []
        for i in ids:
            i = int(i)
            if i in specials:
                continue
            if not 0 <= i < len(self.id_to_token):
                raise VocabularyError(f"id {i} outside vocabulary of size {len(self)}")
            out.append(self.id_to_token[i])
        return " ".join(out)

    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self.id_to_token).encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.id_to_token) + "\n", encoding="utf-8", newline="\n")

    @classmethod
    def load(cls, path, frozen_size: int | None = None) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(tuple(lines), len(lines) if frozen_size is None else frozen_size)


def build_vocabulary(corpus: Iterable[str], min_count: int = 1) -> Vocabulary:
    """Count pre-tokenized words; keep those seen at least ``min_count`` times.

    Kept words are ordered by descending count, ties broken by code point
    order, so the result is independent of corpus order.
    """
    counts = Counter()
    seen = False
    for line in corpus:
        seen = True
        counts.update(pretokenize(line))
    if not seen:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    kept = sorted(
        (tok for tok, n in counts.items() if n >= min_count and tok not in SPECIAL_TOKENS),
        key=lambda tok: (-counts[tok], tok),
    )
    tokens = SPECIAL_TOKENS + tuple(kept)
    return Vocabulary(tokens, len(tokens))


def extend_vocabulary(vocab: Vocabulary, new_tokens: str | Sequence[str]) -> Vocabulary:
    """Append control tokens given as ``"<a>,<b>"`` (or a list); existing ones are skipped."""
    if isinstance(new_tokens, str):
        new_tokens = new_tokens.split(",")
    tokens = list(vocab.id_to_token)
    present = set(tokens)
    for tok in (t.strip() for t in new_tokens):
        if not tok or tok in present:
            continue
        tokens.append(tok)
        present.add(tok)
    if len(tokens) == len(vocab):
        return vocab
    return Vocabulary(tuple(tokens), vocab.frozen_size)


def tokenize(vocab: Vocabulary, text: str) -> list[int]:
    return vocab.tokenize(text)


def detokenize(vocab: Vocabulary, ids: Iterable[int]) -> str:
    return vocab.detokenize(ids)
