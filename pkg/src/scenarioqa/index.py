"""Inverted index with per-term BM25 scoring and weighted top-k retrieval.

The index assigns each paragraph an internal integer id equal to its rank
in ascending-paragraph-id order, so postings sorted by internal id are
sorted by paragraph id and every tie-break ("paragraph id ascending") is a
plain integer comparison.

Scoring never materializes a dense term-by-paragraph matrix: the BoW
representation keeps one sparse row per query word (candidate positions +
BM25 values), and weighted scores are accumulated term-at-a-time over
those rows in O(matched postings).
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Paragraph
from .text import Tokenizer

BM25_K1 = 1.2
BM25_B = 0.75

_MAGIC = b"SQIX"
_VERSION = 1


class IndexFormatError(ValueError):
    """An index file is corrupt or has an unsupported version."""


@dataclass(frozen=True)
class CorpusStats:
    n_paragraphs: int
    avgdl: float
    doc_lengths: np.ndarray  # token count per internal id
    doc_freq: dict[str, int]

    def df(self, term: str) -> int:
        return self.doc_freq.get(term, 0)


class InvertedIndex:
    """Immutable postings over a tokenized corpus, plus collection stats."""

    def __init__(
        self,
        paragraph_ids: list[str],
        doc_lengths: np.ndarray,
        postings: dict[str, tuple[np.ndarray, np.ndarray]],
        tokenizer: Tokenizer,
    ):
        self.paragraph_ids = paragraph_ids
        self.pid_of = {pid: i for i, pid in enumerate(paragraph_ids)}
        self.postings = postings
        self.tokenizer = tokenizer
        n = len(paragraph_ids)
        avgdl = float(doc_lengths.mean()) if n else 0.0
        self.stats = CorpusStats(
            n_paragraphs=n,
            avgdl=avgdl,
            doc_lengths=doc_lengths,
            doc_freq={t: len(ids) for t, (ids, _) in postings.items()},
        )

    @property
    def n_terms(self) -> int:
        return len(self.postings)

    def idf(self, term: str) -> float:
        df = self.stats.df(term)
        n = self.stats.n_paragraphs
        return float(np.log(1.0 + (n - df + 0.5) / (df + 0.5)))

    def term_scores(self, term: str) -> tuple[np.ndarray, np.ndarray]:
        """BM25 scores of ``term`` against every paragraph containing it.

        Returns (internal ids ascending, scores). Empty arrays for an
        unseen term.
        """
        post = self.postings.get(term)
        if post is None:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
        ids, tf = post
        dl = self.stats.doc_lengths[ids]
        denom = tf + BM25_K1 * (1.0 - BM25_B + BM25_B * dl / self.stats.avgdl)
        scores = self.idf(term) * tf * (BM25_K1 + 1.0) / denom
        return ids, scores


def build_index(corpus: list[Paragraph], tokenizer: Tokenizer) -> InvertedIndex:
    """Build postings and stats; deterministic for a fixed corpus."""
    if not corpus:
        raise ValueError("cannot index an empty corpus")
    ordered = sorted(corpus, key=lambda p: p.id)
    paragraph_ids = [p.id for p in ordered]
    if len(set(paragraph_ids)) != len(paragraph_ids):
        raise ValueError("duplicate paragraph ids in corpus")
    doc_lengths = np.array([len(p.tokens) for p in ordered], dtype=np.int64)

    by_term: dict[str, list[tuple[int, int]]] = {}
    for internal, para in enumerate(ordered):
        counts: dict[str, int] = {}
        for tok in para.tokens:
            counts[tok] = counts.get(tok, 0) + 1
        for term, tf in counts.items():
            by_term.setdefault(term, []).append((internal, tf))

    postings: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for term in sorted(by_term):
        pairs = by_term[term]  # already ascending: paragraphs visited in id order
        ids = np.array([p for p, _ in pairs], dtype=np.int64)
        tf = np.array([t for _, t in pairs], dtype=np.int64)
        postings[term] = (ids, tf)
    return InvertedIndex(paragraph_ids, doc_lengths, postings, tokenizer)


def bm25_term_score(index: InvertedIndex, term: str, paragraph_id: str) -> float:
    """Okapi BM25 of one (term, paragraph) pair; 0 when the term is absent."""
    if paragraph_id not in index.pid_of:
        raise KeyError(f"unknown paragraph id {paragraph_id!r}")
    internal = index.pid_of[paragraph_id]
    ids, scores = index.term_scores(term)
    pos = np.searchsorted(ids, internal)
    if pos < len(ids) and ids[pos] == internal:
        return float(scores[pos])
    return 0.0


def candidate_paragraphs(index: InvertedIndex, words) -> np.ndarray:
    """Internal ids of paragraphs containing any of ``words``, ascending."""
    arrays = [index.postings[w][0] for w in dict.fromkeys(words) if w in index.postings]
    if not arrays:
        return np.empty(0, dtype=np.int64)
    return np.unique(np.concatenate(arrays))


@dataclass
class BowMatrix:
    """Sparse per-word BM25 scores over one option's candidate paragraphs.

    Row j holds the positive entries of word j: ``cols[j]`` are positions
    into ``candidates`` (and thus into ``paragraph_ids``), ``vals[j]`` the
    matching BM25 scores. Column l is the candidate paragraph's bag-of-words
    score vector.
    """

    words: list[str]
    candidates: np.ndarray  # internal ids, ascending
    paragraph_ids: list[str]  # external ids aligned with candidates
    cols: list[np.ndarray]
    vals: list[np.ndarray]

    @property
    def n_words(self) -> int:
        return len(self.words)

    @property
    def n_paragraphs(self) -> int:
        return len(self.candidates)

    def score_columns(self, weights: np.ndarray) -> np.ndarray:
        """Weighted per-paragraph scores: term-at-a-time accumulation."""
        if len(weights) != len(self.words):
            raise ValueError(f"{len(weights)} weights for {len(self.words)} words")
        z = np.zeros(len(self.candidates), dtype=np.float64)
        for j in range(len(self.words)):
            c = self.cols[j]
            if len(c):
                z[c] += weights[j] * self.vals[j]
        return z

    def grad_weights(self, grad_z: np.ndarray) -> np.ndarray:
        """d(z . grad_z)/d(weights): one sparse dot per word row."""
        g = np.zeros(len(self.words), dtype=np.float64)
        for j in range(len(self.words)):
            c = self.cols[j]
            if len(c):
                g[j] = float(self.vals[j] @ grad_z[c])
        return g

    def dense(self) -> np.ndarray:
        """Materialize the full matrix (tests and tiny inputs only)."""
        m = np.zeros((len(self.words), len(self.candidates)))
        for j in range(len(self.words)):
            m[j, self.cols[j]] = self.vals[j]
        return m


def build_bow_matrix(index: InvertedIndex, words, candidates: np.ndarray | None = None) -> BowMatrix:
    """Assemble the sparse BM25 matrix for an option's unique words."""
    words = list(words)
    if candidates is None:
        candidates = candidate_paragraphs(index, words)
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    for w in words:
        ids, scores = index.term_scores(w)
        if len(ids) and len(candidates):
            pos = np.searchsorted(candidates, ids)
            keep = (pos < len(candidates)) & (candidates[np.minimum(pos, len(candidates) - 1)] == ids)
            cols.append(pos[keep].astype(np.int64))
            vals.append(scores[keep])
        else:
            cols.append(np.empty(0, dtype=np.int64))
            vals.append(np.empty(0, dtype=np.float64))
    paragraph_ids = [index.paragraph_ids[i] for i in candidates]
    return BowMatrix(words=words, candidates=candidates, paragraph_ids=paragraph_ids, cols=cols, vals=vals)


def rank_descending(scores: np.ndarray) -> np.ndarray:
    """Order by score descending, ties by position (= paragraph id) ascending."""
    return np.lexsort((np.arange(len(scores)), -scores))


def weighted_topk(bow: BowMatrix, weights: np.ndarray, k: int) -> list[tuple[str, float]]:
    """Top-k (paragraph id, weighted score) pairs over the candidate set.

    Scores are exact weighted sums accumulated over the sparse rows;
    ordering is score descending with paragraph-id-ascending tie-break.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if bow.n_paragraphs == 0:
        return []
    z = bow.score_columns(np.asarray(weights, dtype=np.float64))
    order = rank_descending(z)[: min(k, len(z))]
    return [(bow.paragraph_ids[i], float(z[i])) for i in order]


# -- persistence ---------------------------------------------------------


def save_index(index: InvertedIndex, path: str | Path) -> None:
    """Write a versioned binary index file (magic, header, postings arrays)."""
    terms = list(index.postings.keys())
    counts = [len(index.postings[t][0]) for t in terms]
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    total = int(offsets[-1])
    doc_idx = np.empty(total, dtype=np.int64)
    tf = np.empty(total, dtype=np.int64)
    for t, lo, hi in zip(terms, offsets[:-1], offsets[1:]):
        ids, tfs = index.postings[t]
        doc_idx[lo:hi] = ids
        tf[lo:hi] = tfs
    header = {
        "paragraph_ids": index.paragraph_ids,
        "doc_lengths": index.stats.doc_lengths.tolist(),
        "terms": terms,
        "tokenizer": index.tokenizer.config(),
    }
    blob = json.dumps(header, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(_VERSION.to_bytes(4, "little"))
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        np.save(fh, offsets)
        np.save(fh, doc_idx)
        np.save(fh, tf)


def load_index(path: str | Path) -> InvertedIndex:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise IndexFormatError(f"{path}: not an index file (bad magic {magic!r})")
        version = int.from_bytes(fh.read(4), "little")
        if version != _VERSION:
            raise IndexFormatError(f"{path}: unsupported index version {version}")
        try:
            size = int.from_bytes(fh.read(8), "little")
            header = json.loads(fh.read(size).decode("utf-8"))
            offsets = np.load(fh)
            doc_idx = np.load(fh)
            tf = np.load(fh)
        except Exception as exc:
            raise IndexFormatError(f"{path}: truncated or corrupt index ({exc})") from exc
    postings = {}
    for t, lo, hi in zip(header["terms"], offsets[:-1], offsets[1:]):
        postings[t] = (doc_idx[lo:hi], tf[lo:hi])
    return InvertedIndex(
        paragraph_ids=list(header["paragraph_ids"]),
        doc_lengths=np.array(header["doc_lengths"], dtype=np.int64),
        postings=postings,
        tokenizer=Tokenizer.from_config(header["tokenizer"]),
    )
