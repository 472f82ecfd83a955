"""Render pre-tokenized words as fixed-size grayscale bitmaps."""
from __future__ import annotations

import json
import unicodedata
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from ..signal_io import ImageSequence
from .tokenization import pretokenize

GLYPH_SIZE = 8
FALLBACK_GLYPH = (0xFF, 0x81, 0x81, 0x81, 0x81, 0x81, 0x81, 0xFF)


class GlyphTable:
    """Map from code point to an 8x8 bitmap; bit 7 of each row is the leftmost pixel."""

    def __init__(self, rows_by_codepoint: dict[int, tuple[int, ...]]):
        self._bitmaps = {}
        for cp, rows in rows_by_codepoint.items():
            rows = tuple(int(r) for r in rows)
            if len(rows) != GLYPH_SIZE or any(not 0 <= r < 256 for r in rows):
                raise ValueError(f"glyph U+{int(cp):04X} must be 8 rows of 0..255")
            self._bitmaps[int(cp)] = _unpack(rows)
        self._fallback = _unpack(FALLBACK_GLYPH)

    def __contains__(self, ch: str) -> bool:
        return ord(ch) in self._bitmaps

    def __len__(self):
        return len(self._bitmaps)

    def bitmap(self, ch: str) -> np.ndarray | None:
        return self._bitmaps.get(ord(ch))

    @property
    def fallback(self) -> np.ndarray:
        return self._fallback

    @classmethod
    def from_json(cls, path) -> "GlyphTable":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls({int(k): v for k, v in raw.items()})


def _unpack(rows) -> np.ndarray:
    return np.unpackbits(np.asarray(rows, dtype=np.uint8)[:, None], axis=1).astype(bool)


@lru_cache(maxsize=1)
def default_glyph_table() -> GlyphTable:
    """Bundled table: printable ASCII, Latin-1 and the Hebrew letters."""
    data = resources.files("mmh").joinpath("data/glyphs8x8.json").read_text(encoding="utf-8")
    return GlyphTable({int(k): v for k, v in json.loads(data).items()})


def _is_rtl(token: str) -> bool:
    for ch in token:
        bidi = unicodedata.bidirectional(ch)
        if bidi in ("R", "AL"):
            return True
        if bidi == "L":
            return False
    return False


def render_word_images(text: str, font: GlyphTable | None = None, height: int = 24,
                       width: int = 96, scale: int = 2) -> ImageSequence:
    """One ``[height, width]`` image per pre-tokenized word.

    Glyphs are scaled by ``scale`` and drawn left-aligned, vertically
    centred; anything past the right edge is cut off. Right-to-left words
    are drawn in visual order. Code points without a glyph get a hollow
    block and are counted in ``missing_glyphs``.
    """
    font = font or default_glyph_table()
    tokens = pretokenize(text)
    cell = GLYPH_SIZE * scale
    images = np.zeros((len(tokens), height, width), dtype=np.uint8)
    top = max((height - cell) // 2, 0)
    missing = 0
    for n, token in enumerate(tokens):
        chars = token[::-1] if _is_rtl(token) else token
        x = 0
        for ch in chars:
            if x >= width:
                break
            if unicodedata.combining(ch):
                continue
            bitmap = font.bitmap(ch)
            if bitmap is None:
                missing += 1
                bitmap = font.fallback
            glyph = np.kron(bitmap, np.ones((scale, scale), dtype=bool))
            h = min(cell, height - top)
            w = min(cell, width - x)
            images[n, top:top + h, x:x + w][glyph[:h, :w]] = 255
            x += cell
    return ImageSequence(images, tuple(tokens), missing)
