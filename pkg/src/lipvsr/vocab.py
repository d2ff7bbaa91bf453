"""Flat token vocabulary with the special symbols used by CTC and the decoders."""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

BLANK = "<blank>"
UNK = "<unk>"
SOS_EOS = "<sos/eos>"
SPECIALS = (BLANK, UNK, SOS_EOS)


@dataclass(frozen=True)
class Vocabulary:
    """Ordered token list.

    Layout is ``[<blank>, <unk>, content..., <sos/eos>]`` so that the blank is
    always id 0 and start/end share the last id.
    """

    tokens: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        if self.tokens[:2] != (BLANK, UNK) or self.tokens[-1] != SOS_EOS:
            raise ValueError(
                f"vocabulary must start with {BLANK!r}, {UNK!r} and end with {SOS_EOS!r}"
            )
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @classmethod
    def from_content(cls, content: Iterable[str]) -> "Vocabulary":
        content = tuple(content)
        clash = set(content) & set(SPECIALS)
        if clash:
            raise ValueError(f"content tokens collide with specials: {sorted(clash)}")
        return cls((BLANK, UNK) + content + (SOS_EOS,))

    @classmethod
    def synthetic(cls, size: int) -> "Vocabulary":
        """``size`` content tokens named a, b, c, ... then w26, w27, ..."""
        names = [
            string.ascii_lowercase[i] if i < 26 else f"w{i}" for i in range(size)
        ]
        return cls.from_content(names)

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(line.strip() for line in lines if line.strip()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @property
    def blank_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def sos_eos_id(self) -> int:
        return len(self.tokens) - 1

    @property
    def content_ids(self) -> list[int]:
        return list(range(2, len(self.tokens) - 1))

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, text: str | Sequence[str]) -> list[int]:
        """Map a space-separated transcript (or token list) to ids; unknowns map to ``<unk>``."""
        items = text.split() if isinstance(text, str) else text
        return [self._index.get(t, self.unk_id) for t in items]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]
