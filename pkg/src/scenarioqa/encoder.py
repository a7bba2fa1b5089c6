"""Shared sequence encoder: token + position embeddings mixed by one
multi-head self-attention layer with a residual connection.

Two sequence layouts feed the same parameters:

    option:  [CLS] scenario [SEP] question [SEP] option [SEP]
    passage: [CLS] paragraph [SEP] scenario [SEP] question [SEP] option [SEP]

Every position carries a segment tag (paragraph / scenario / question /
option / special) used later by the fusion layers. When a sequence is over
length, the paragraph is cut from its tail first, then the scenario from
its front; the leading [CLS] position is the whole-sequence summary.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad

SEG_SPECIAL = 0
SEG_PARAGRAPH = 1
SEG_SCENARIO = 2
SEG_QUESTION = 3
SEG_OPTION = 4

SPECIAL_TOKENS = ("[CLS]", "[SEP]", "[PAD]", "[UNK]")


class Vocabulary:
    """Token-to-id map with four reserved leading ids (CLS, SEP, PAD, UNK)."""

    CLS, SEP, PAD, UNK = 0, 1, 2, 3

    def __init__(self, tokens: list[str]):
        self.tokens = list(SPECIAL_TOKENS) + [t for t in tokens if t not in SPECIAL_TOKENS]
        self.id_of = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, tokens) -> np.ndarray:
        unk = self.UNK
        return np.array([self.id_of.get(t, unk) for t in tokens], dtype=np.int64)

    @classmethod
    def build(cls, token_streams) -> "Vocabulary":
        """Count tokens across streams; order by frequency desc, token asc."""
        counts: dict[str, int] = {}
        for stream in token_streams:
            for tok in stream:
                counts[tok] = counts.get(tok, 0) + 1
        ordered = sorted(counts, key=lambda t: (-counts[t], t))
        return cls(ordered)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        if tokens[:4] != list(SPECIAL_TOKENS):
            raise ValueError(f"{path}: first four ids must be {SPECIAL_TOKENS}")
        return cls(tokens[4:])


@dataclass
class SequencePlan:
    """Token ids and segment tags for one encoder input (post-truncation)."""

    ids: np.ndarray  # (T,) int64
    segments: np.ndarray  # (T,) int8
    tokens: list[str]  # surface tokens aligned with ids ([CLS]/[SEP] included)

    @property
    def length(self) -> int:
        return len(self.ids)

    def segment_positions(self, seg: int) -> np.ndarray:
        return np.flatnonzero(self.segments == seg)


@dataclass
class OptionWords:
    """Unique non-special words of one enriched option with their positions."""

    words: list[str]
    positions: list[list[int]]  # occurrence positions per word, each non-empty

    @property
    def n_words(self) -> int:
        return len(self.words)

    def occurrence_index(self) -> np.ndarray:
        """(n_words, max_occ) position matrix, short rows padded by their
        first position (harmless under max pooling)."""
        max_occ = max(len(p) for p in self.positions)
        idx = np.empty((len(self.positions), max_occ), dtype=np.int64)
        for j, pos in enumerate(self.positions):
            idx[j, : len(pos)] = pos
            idx[j, len(pos):] = pos[0]
        return idx


def _fit_segments(segments: list[tuple[int, list[str], str]], budget: int) -> dict[int, list[str]]:
    """Truncate segment token lists to fit ``budget`` total tokens.

    ``segments`` lists (segment id, tokens, cut_side) in priority order:
    the first entry is cut first, entirely if needed, before the next is
    touched. cut_side "tail" drops from the end, "front" from the start.
    """
    total = sum(len(toks) for _, toks, _ in segments)
    out = {seg: list(toks) for seg, toks, _ in segments}
    overflow = total - budget
    for seg, _, side in segments:
        if overflow <= 0:
            break
        toks = out[seg]
        cut = min(overflow, len(toks))
        out[seg] = toks[cut:] if side == "front" else toks[: len(toks) - cut]
        overflow -= cut
    if overflow > 0:
        raise ValueError("sequence cannot fit even after truncating all segments")
    return out


def _assemble(parts: list[tuple[int, list[str]]], vocab: Vocabulary) -> SequencePlan:
    tokens: list[str] = ["[CLS]"]
    segments: list[int] = [SEG_SPECIAL]
    for seg, toks in parts:
        tokens.extend(toks)
        segments.extend([seg] * len(toks))
        tokens.append("[SEP]")
        segments.append(SEG_SPECIAL)
    return SequencePlan(
        ids=vocab.encode(tokens),
        segments=np.array(segments, dtype=np.int8),
        tokens=tokens,
    )


def build_option_sequence(
    scenario_tokens: list[str],
    question_tokens: list[str],
    option_tokens: list[str],
    vocab: Vocabulary,
    max_seq_len: int,
) -> SequencePlan:
    """[CLS] S [SEP] Q [SEP] O [SEP]; scenario truncated from the front."""
    if not option_tokens:
        raise ValueError("option has no tokens after filtering")
    budget = max_seq_len - 4
    fitted = _fit_segments(
        [
            (SEG_SCENARIO, scenario_tokens, "front"),
            (SEG_QUESTION, question_tokens, "front"),
            (SEG_OPTION, option_tokens, "tail"),
        ],
        budget,
    )
    return _assemble(
        [
            (SEG_SCENARIO, fitted[SEG_SCENARIO]),
            (SEG_QUESTION, fitted[SEG_QUESTION]),
            (SEG_OPTION, fitted[SEG_OPTION]),
        ],
        vocab,
    )


def build_passage_sequence(
    paragraph_tokens: list[str],
    scenario_tokens: list[str],
    question_tokens: list[str],
    option_tokens: list[str],
    vocab: Vocabulary,
    max_seq_len: int,
) -> SequencePlan:
    """[CLS] p [SEP] S [SEP] Q [SEP] O [SEP]; paragraph tail cut first."""
    if not option_tokens:
        raise ValueError("option has no tokens after filtering")
    budget = max_seq_len - 5
    fitted = _fit_segments(
        [
            (SEG_PARAGRAPH, paragraph_tokens, "tail"),
            (SEG_SCENARIO, scenario_tokens, "front"),
            (SEG_QUESTION, question_tokens, "front"),
            (SEG_OPTION, option_tokens, "tail"),
        ],
        budget,
    )
    return _assemble(
        [
            (SEG_PARAGRAPH, fitted[SEG_PARAGRAPH]),
            (SEG_SCENARIO, fitted[SEG_SCENARIO]),
            (SEG_QUESTION, fitted[SEG_QUESTION]),
            (SEG_OPTION, fitted[SEG_OPTION]),
        ],
        vocab,
    )


def unique_words(plan: SequencePlan) -> OptionWords:
    """Unique non-special surface words in first-occurrence order."""
    words: list[str] = []
    positions: dict[str, list[int]] = {}
    for pos, (tok, seg) in enumerate(zip(plan.tokens, plan.segments)):
        if seg == SEG_SPECIAL:
            continue
        if tok not in positions:
            positions[tok] = []
            words.append(tok)
        positions[tok].append(pos)
    return OptionWords(words=words, positions=[positions[w] for w in words])


def pad_batch(plans: list[SequencePlan], pad_id: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack variable-length plans into (B, T) ids plus a validity mask."""
    t_max = max(p.length for p in plans)
    ids = np.full((len(plans), t_max), pad_id, dtype=np.int64)
    mask = np.zeros((len(plans), t_max), dtype=bool)
    for i, p in enumerate(plans):
        ids[i, : p.length] = p.ids
        mask[i, : p.length] = True
    return ids, mask


def init_encoder_params(vocab_size: int, d: int, max_seq_len: int, rng: np.random.Generator) -> dict[str, ad.Tensor]:
    scale = 0.1
    return {
        "enc.embed": ad.Tensor(rng.normal(0.0, scale, size=(vocab_size, d)), requires_grad=True),
        "enc.pos": ad.Tensor(rng.normal(0.0, scale, size=(max_seq_len, d)), requires_grad=True),
        "enc.wq": ad.Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d)), requires_grad=True),
        "enc.wk": ad.Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d)), requires_grad=True),
        "enc.wv": ad.Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d)), requires_grad=True),
        "enc.wo": ad.Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d)), requires_grad=True),
    }


def encode(
    params: dict[str, ad.Tensor],
    ids: np.ndarray,
    mask: np.ndarray | None,
    n_heads: int,
) -> ad.Tensor:
    """Contextual vectors (B, T, d) for a padded id batch.

    Attention keys at padded positions are masked out; outputs at padded
    positions are garbage and must not be consumed downstream.
    """
    if ids.ndim != 2:
        raise ValueError("ids must be (batch, time)")
    b, t = ids.shape
    embed = params["enc.embed"]
    d = embed.shape[1]
    if d % n_heads != 0:
        raise ValueError("model width must be divisible by the head count")
    dh = d // n_heads

    x = embed[ids] + params["enc.pos"][:t]
    q = (x @ params["enc.wq"]).reshape((b, t, n_heads, dh)).transpose(0, 2, 1, 3)
    k = (x @ params["enc.wk"]).reshape((b, t, n_heads, dh)).transpose(0, 2, 1, 3)
    v = (x @ params["enc.wv"]).reshape((b, t, n_heads, dh)).transpose(0, 2, 1, 3)
    logits = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
    key_mask = None if mask is None else mask[:, None, None, :]
    att = ad.softmax(logits, axis=-1, mask=key_mask)
    mixed = (att @ v).transpose(0, 2, 1, 3).reshape((b, t, d))
    return x + mixed @ params["enc.wo"]


def pool_unique_words(encoded_seq: ad.Tensor, words: OptionWords) -> ad.Tensor:
    """Entrywise max over each unique word's occurrence vectors: (n, d).

    ``encoded_seq`` is a single sequence (T, d). Visiting order of the
    occurrences cannot affect the result (max is commutative).
    """
    if words.n_words == 0:
        raise ValueError("option has no unique words")
    occ = words.occurrence_index()
    return encoded_seq[occ].max(axis=1)
