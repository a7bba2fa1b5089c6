"""Text normalization: tokenizer modes and stopword lists.

Tokenization is a pure function of (mode, lowercase, stopword set, text):
the same inputs always produce the same token list, which both the index
and the sequence encoder rely on.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

_WORD_RE = re.compile(r"\w+", re.UNICODE)


@dataclass(frozen=True)
class Tokenizer:
    """Word- or character-level tokenizer with stopword filtering.

    mode "unicode-word" splits on non-word characters; mode "char" emits
    each non-whitespace character (the natural choice for unsegmented
    scripts). Stopwords are removed after lowercasing.
    """

    mode: str = "unicode-word"
    lowercase: bool = True
    stopwords: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.mode not in ("unicode-word", "char"):
            raise ValueError(f"unknown tokenizer mode {self.mode!r}")
        object.__setattr__(self, "stopwords", frozenset(self.stopwords))

    def tokenize(self, text: str) -> list[str]:
        if self.lowercase:
            text = text.lower()
        if self.mode == "unicode-word":
            tokens = _WORD_RE.findall(text)
        else:
            tokens = [c for c in text if not c.isspace()]
        if self.stopwords:
            tokens = [t for t in tokens if t not in self.stopwords]
        return tokens

    def config(self) -> dict:
        return {
            "mode": self.mode,
            "lowercase": self.lowercase,
            "stopwords": sorted(self.stopwords),
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "Tokenizer":
        return cls(
            mode=cfg["mode"],
            lowercase=cfg["lowercase"],
            stopwords=frozenset(cfg["stopwords"]),
        )


def load_stopwords(path: str | Path) -> frozenset[str]:
    """Read a stopword file: UTF-8, one token per line, blanks ignored."""
    words = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            tok = line.strip()
            if tok:
                words.add(tok)
    return frozenset(words)


def save_stopwords(words, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tok in sorted(words):
            fh.write(tok + "\n")
