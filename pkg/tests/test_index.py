"""Index, BM25, candidate set, BoW matrix, and weighted top-k tests.

The BM25 oracle here is a standalone closed-form transcription of the
Okapi formula, kept independent of the index implementation.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenarioqa.data import Paragraph
from scenarioqa.index import (
    BowMatrix,
    IndexFormatError,
    build_bow_matrix,
    build_index,
    bm25_term_score,
    candidate_paragraphs,
    load_index,
    rank_descending,
    save_index,
    weighted_topk,
)
from scenarioqa.text import Tokenizer


def bm25_oracle(tf: float, df: int, n_docs: int, dl: int, avgdl: float, k1=1.2, b=0.75) -> float:
    """Straight-line Okapi BM25 used as the reference value."""
    if tf == 0:
        return 0.0
    idf = math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))
    return idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl))


def make_corpus(texts: dict[str, str], tokenizer=None) -> list[Paragraph]:
    tokenizer = tokenizer or Tokenizer()
    return [Paragraph(id=pid, text=txt, tokens=tuple(tokenizer.tokenize(txt))) for pid, txt in texts.items()]


@pytest.fixture
def toy_index():
    corpus = make_corpus({"p1": "x y", "p2": "y y", "p3": "z"})
    return build_index(corpus, Tokenizer())


class TestBuildIndex:
    def test_hand_counted_stats(self):
        idx = build_index(make_corpus({"a": "a b", "b": "b c", "c": "c c"}), Tokenizer())
        assert idx.stats.n_paragraphs == 3
        assert idx.stats.df("b") == 2
        assert idx.stats.df("c") == 2
        assert idx.stats.avgdl == 2.0

    def test_single_paragraph_avgdl(self):
        idx = build_index(make_corpus({"p": "u v w"}), Tokenizer())
        assert idx.stats.avgdl == 3.0

    def test_postings_invariants(self, toy_index):
        for term, (ids, tf) in toy_index.postings.items():
            assert np.all(np.diff(ids) > 0), term
            assert np.all(tf >= 1), term
        # tf sums per paragraph equal its length
        sums = np.zeros(toy_index.stats.n_paragraphs, dtype=np.int64)
        for ids, tf in toy_index.postings.values():
            sums[ids] += tf
        assert np.array_equal(sums, toy_index.stats.doc_lengths)

    def test_deterministic_rebuild(self, tmp_path):
        corpus = make_corpus({"p2": "b a", "p1": "a c c", "p3": "d"})
        f1, f2 = tmp_path / "i1.bin", tmp_path / "i2.bin"
        save_index(build_index(corpus, Tokenizer()), f1)
        save_index(build_index(corpus, Tokenizer()), f2)
        assert f1.read_bytes() == f2.read_bytes()

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            build_index([], Tokenizer())


class TestBm25TermScore:
    def test_absent_term_is_zero(self, toy_index):
        assert bm25_term_score(toy_index, "y", "p3") == 0.0
        assert bm25_term_score(toy_index, "never-seen", "p1") == 0.0

    def test_hand_evaluated_value(self, toy_index):
        # tf=2, df=2, N=3, dl=2, avgdl=5/3
        expected = bm25_oracle(tf=2, df=2, n_docs=3, dl=2, avgdl=5.0 / 3.0)
        assert abs(bm25_term_score(toy_index, "y", "p2") - expected) < 1e-9

    def test_every_pair_matches_oracle(self, toy_index):
        stats = toy_index.stats
        for term in ["x", "y", "z"]:
            for pid in ["p1", "p2", "p3"]:
                internal = toy_index.pid_of[pid]
                ids, tfs = toy_index.postings.get(term, (np.empty(0, int), np.empty(0, int)))
                tf = 0
                for i, t in zip(ids, tfs):
                    if i == internal:
                        tf = int(t)
                expected = bm25_oracle(tf, stats.df(term), stats.n_paragraphs, int(stats.doc_lengths[internal]), stats.avgdl)
                assert abs(bm25_term_score(toy_index, term, pid) - expected) < 1e-9

    def test_tf_saturation(self):
        # doubling tf raises the score but less than 2x
        scores = []
        for tf in (1, 2, 4, 8):
            corpus = make_corpus({"p": " ".join(["w"] * tf + ["pad"] * 3), "q": "other text here"})
            idx = build_index(corpus, Tokenizer())
            stats = idx.stats
            got = bm25_term_score(idx, "w", "p")
            expected = bm25_oracle(tf, 1, 2, int(stats.doc_lengths[idx.pid_of["p"]]), stats.avgdl)
            assert abs(got - expected) < 1e-12
            scores.append(got)
        for lo, hi in zip(scores, scores[1:]):
            assert lo < hi < 2 * lo

    def test_unknown_paragraph_raises(self, toy_index):
        with pytest.raises(KeyError):
            bm25_term_score(toy_index, "y", "nope")


class TestCandidateParagraphs:
    def test_union_by_hand(self):
        idx = build_index(make_corpus({"p1": "a b", "p2": "b c", "p3": "c c"}), Tokenizer())
        cands = candidate_paragraphs(idx, ["b", "c"])
        assert [idx.paragraph_ids[i] for i in cands] == ["p1", "p2", "p3"]

    def test_no_match_is_empty(self, toy_index):
        assert len(candidate_paragraphs(toy_index, ["missing", "words"])) == 0

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_matches_naive_scan(self, seed):
        rng = np.random.default_rng(seed)
        vocab = [f"w{i}" for i in range(12)]
        texts = {
            f"p{i:02d}": " ".join(rng.choice(vocab, size=rng.integers(1, 6)))
            for i in range(rng.integers(2, 10))
        }
        corpus = make_corpus(texts)
        idx = build_index(corpus, Tokenizer())
        words = list(rng.choice(vocab, size=rng.integers(1, 5)))
        got = {idx.paragraph_ids[i] for i in candidate_paragraphs(idx, words)}
        expected = {p.id for p in corpus if set(words) & set(p.tokens)}
        assert got == expected


class TestBowMatrix:
    def test_single_cell_matches_oracle(self):
        idx = build_index(make_corpus({"p1": "w w pad", "p2": "pad pad"}), Tokenizer())
        bow = build_bow_matrix(idx, ["w"])
        assert bow.n_words == 1 and bow.n_paragraphs == 1
        expected = bm25_oracle(2, 1, 2, 3, 2.5)
        assert abs(bow.dense()[0, 0] - expected) < 1e-12

    def test_unseen_word_row_is_zero(self, toy_index):
        bow = build_bow_matrix(toy_index, ["y", "ghost"])
        dense = bow.dense()
        assert np.all(dense[1] == 0.0)
        assert len(bow.vals[1]) == 0

    def test_one_hot_column_recovers_term_score(self, toy_index):
        words = ["x", "y", "z"]
        bow = build_bow_matrix(toy_index, words)
        for j, w in enumerate(words):
            one_hot = np.zeros(len(words))
            one_hot[j] = 1.0
            z = bow.score_columns(one_hot)
            for pos, pid in enumerate(bow.paragraph_ids):
                assert abs(z[pos] - bm25_term_score(toy_index, w, pid)) < 1e-12

    def test_all_entries_positive(self, toy_index):
        bow = build_bow_matrix(toy_index, ["x", "y", "z"])
        for vals in bow.vals:
            assert np.all(vals > 0)


def random_bow(rng, n_words, n_paras, density=0.3) -> BowMatrix:
    cols, vals = [], []
    for _ in range(n_words):
        mask = rng.random(n_paras) < density
        c = np.flatnonzero(mask).astype(np.int64)
        cols.append(c)
        vals.append(rng.uniform(0.1, 5.0, size=len(c)))
    return BowMatrix(
        words=[f"w{j}" for j in range(n_words)],
        candidates=np.arange(n_paras, dtype=np.int64),
        paragraph_ids=[f"p{i:05d}" for i in range(n_paras)],
        cols=cols,
        vals=vals,
    )


class TestWeightedTopk:
    def test_uniform_weights_match_flat_bm25(self):
        # weighted sum with uniform weights ranks like plain multi-term BM25
        rng = np.random.default_rng(0)
        vocab = [f"w{i}" for i in range(8)]
        texts = {f"p{i:02d}": " ".join(rng.choice(vocab, size=6)) for i in range(12)}
        corpus = make_corpus(texts)
        idx = build_index(corpus, Tokenizer())
        words = vocab[:4]
        bow = build_bow_matrix(idx, words)
        got = weighted_topk(bow, np.full(4, 0.25), k=12)
        # naive full scan: sum of term scores over every candidate paragraph
        naive = []
        for p in sorted(corpus, key=lambda p: p.id):
            if p.id not in set(bow.paragraph_ids):
                continue
            s = sum(bm25_term_score(idx, w, p.id) for w in words) / 4.0
            naive.append((p.id, s))
        kept = sorted(naive, key=lambda t: (-t[1], t[0]))
        for (gp, gs), (ep, es) in zip(got, kept):
            assert gp == ep
            assert abs(gs - es) < 1e-9

    def test_one_hot_ranks_by_single_term(self, toy_index):
        bow = build_bow_matrix(toy_index, ["x", "y"])
        got = weighted_topk(bow, np.array([0.0, 1.0]), k=3)
        scores = {pid: bm25_term_score(toy_index, "y", pid) for pid in bow.paragraph_ids}
        expected = sorted(scores.items(), key=lambda t: (-t[1], t[0]))
        assert [p for p, _ in got] == [p for p, _ in expected]

    def test_brute_force_sort_oracle(self, rng):
        for trial in range(50):
            bow = random_bow(rng, n_words=rng.integers(1, 20), n_paras=rng.integers(1, 60))
            w = rng.random(bow.n_words)
            k = int(rng.integers(1, bow.n_paragraphs + 3))
            got = weighted_topk(bow, w, k)
            dense = bow.dense().T @ w
            order = sorted(range(len(dense)), key=lambda i: (-dense[i], bow.paragraph_ids[i]))
            expected = [(bow.paragraph_ids[i], dense[i]) for i in order[:k]]
            assert [p for p, _ in got] == [p for p, _ in expected]
            np.testing.assert_allclose([s for _, s in got], [s for _, s in expected], atol=1e-12)

    def test_k_below_one_rejected(self, rng):
        bow = random_bow(rng, 3, 5)
        with pytest.raises(ValueError):
            weighted_topk(bow, np.ones(3) / 3, 0)

    def test_result_length_capped(self, rng):
        bow = random_bow(rng, 3, 4, density=1.0)
        assert len(weighted_topk(bow, np.ones(3) / 3, 99)) == 4

    def test_monotone_prefix_property(self, rng):
        bow = random_bow(rng, 6, 30)
        w = rng.random(6)
        full = weighted_topk(bow, w, 30)
        for k in (1, 3, 10, 25):
            assert weighted_topk(bow, w, k) == full[:k]

    def test_linearity_of_scores(self, rng):
        bow = random_bow(rng, 8, 40)
        w1, w2 = rng.random(8), rng.random(8)
        a, b = 0.3, 1.7
        z1 = bow.score_columns(w1)
        z2 = bow.score_columns(w2)
        z = bow.score_columns(a * w1 + b * w2)
        np.testing.assert_allclose(z, a * z1 + b * z2, atol=1e-9)

    def test_determinism_including_ties(self):
        bow = BowMatrix(
            words=["w"],
            candidates=np.arange(4, dtype=np.int64),
            paragraph_ids=["pa", "pb", "pc", "pd"],
            cols=[np.array([0, 1, 2, 3])],
            vals=[np.array([2.0, 2.0, 3.0, 2.0])],
        )
        got = weighted_topk(bow, np.array([1.0]), 4)
        assert [p for p, _ in got] == ["pc", "pa", "pb", "pd"]

    def test_grad_weights_is_adjoint(self, rng):
        bow = random_bow(rng, 7, 25)
        w = rng.random(7)
        g = rng.normal(size=25)
        # <Bw, g> == <w, B^T g>
        lhs = float(bow.score_columns(w) @ g)
        rhs = float(w @ bow.grad_weights(g))
        assert abs(lhs - rhs) < 1e-10


def test_rank_descending_tie_break():
    z = np.array([1.0, 3.0, 3.0, 0.5])
    assert list(rank_descending(z)) == [1, 2, 0, 3]


class TestPersistence:
    def test_round_trip(self, tmp_path, toy_index):
        path = tmp_path / "index.bin"
        save_index(toy_index, path)
        loaded = load_index(path)
        assert loaded.paragraph_ids == toy_index.paragraph_ids
        assert loaded.stats.avgdl == toy_index.stats.avgdl
        assert loaded.tokenizer == toy_index.tokenizer
        for term in toy_index.postings:
            np.testing.assert_array_equal(loaded.postings[term][0], toy_index.postings[term][0])
            np.testing.assert_array_equal(loaded.postings[term][1], toy_index.postings[term][1])
        assert bm25_term_score(loaded, "y", "p2") == bm25_term_score(toy_index, "y", "p2")

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(IndexFormatError, match="bad magic"):
            load_index(path)

    def test_bad_version_rejected(self, tmp_path, toy_index):
        path = tmp_path / "index.bin"
        save_index(toy_index, path)
        raw = bytearray(path.read_bytes())
        raw[4] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(IndexFormatError, match="version"):
            load_index(path)

    def test_truncated_file_rejected(self, tmp_path, toy_index):
        path = tmp_path / "index.bin"
        save_index(toy_index, path)
        path.write_bytes(path.read_bytes()[:40])
        with pytest.raises(IndexFormatError):
            load_index(path)
