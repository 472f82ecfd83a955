"""Rasterize the embedded 8x8 monochrome glyph table.

Regenerates ``src/mmh/data/glyphs8x8.json`` from the DejaVu fonts::

    python3 scripts/make_glyph_table.py /usr/share/fonts/truetype/dejavu
"""
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

# (first, last, font file); Hebrew is absent from the monospace face
RANGES = [
    (0x21, 0x7E, "DejaVuSansMono.ttf"),
    (0xA1, 0xFF, "DejaVuSansMono.ttf"),
    (0x05D0, 0x05EA, "DejaVuSans.ttf"),
]
OUT = Path(__file__).resolve().parents[1] / "src" / "mmh" / "data" / "glyphs8x8.json"


def rasterize(font, ch, threshold=80):
    cell = Image.new("L", (8, 8), 0)
    width = font.getlength(ch)
    ImageDraw.Draw(cell).text(((8 - width) / 2, 6), ch, fill=255, font=font, anchor="ls")
    bits = np.asarray(cell) >= threshold
    if not bits.any():
        return None
    return [int("".join("1" if b else "0" for b in row), 2) for row in bits]


def main(font_dir):
    table = {}
    for lo, hi, name in RANGES:
        font = ImageFont.truetype(str(Path(font_dir) / name), 10)
        for cp in range(lo, hi + 1):
            rows = rasterize(font, chr(cp))
            if rows is not None:
                table[str(cp)] = rows
    OUT.write_text(json.dumps(table, separators=(",", ":")) + "\n")
    print(f"{len(table)} glyphs -> {OUT}")


if __name__ == "__main__":
    main(sys.argv[1])
