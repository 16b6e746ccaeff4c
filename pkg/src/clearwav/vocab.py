"""Character vocabulary for fine-tuning: 30 symbols.

Index 0 is the CTC blank (fixed); 1-26 are A-Z; then space, apostrophe,
and an unknown symbol for anything outside the transcript charset.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field

__all__ = ["CharVocab"]

UNK_GLYPH = "*"


@dataclass(frozen=True)
class CharVocab:
    symbols: tuple[str, ...] = field(
        default=("<blank>",) + tuple(string.ascii_uppercase) + (" ", "'", "<unk>"))

    def __post_init__(self):
        if len(self.symbols) != 30:
            raise ValueError(f"vocabulary must have exactly 30 symbols, got {len(self.symbols)}")
        if self.symbols[0] != "<blank>":
            raise ValueError("blank must sit at index 0")

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def blank(self) -> int:
        return 0

    @property
    def unk(self) -> int:
        return self.size - 1

    def encode(self, text: str) -> list[int]:
        ids = []
        for ch in text.upper():
            try:
                ids.append(self.symbols.index(ch))
            except ValueError:
                ids.append(self.unk)
        return ids

    def decode(self, ids) -> str:
        out = []
        for i in ids:
            sym = self.symbols[int(i)]
            out.append(UNK_GLYPH if sym == "<unk>" else sym)
        return "".join(out)
