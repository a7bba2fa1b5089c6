"""Implicitly supervised sparse retrieval.

A two-layer word weighting network turns each unique word's pooled dense
vector into a salience logit; the softmax over an option's words gives the
word weights. Paragraph scores are the weighted sums over the sparse BM25
rows, the option score is a two-layer head over the descending top-trim of
those scores, and the retrieval loss is a cross-entropy over option scores
at the gold answer. Answer labels are the only supervision: gradient
reaches the weighting network solely through this score path.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .index import BowMatrix, rank_descending


def init_retriever_params(d: int, d_hidden: int, tau: int, h_score: int, rng: np.random.Generator) -> dict[str, ad.Tensor]:
    """Weighting net + sparse score head. Output layers start at zero so an
    untrained model produces exactly uniform word weights and constant
    option scores."""
    return {
        "ww.w1": ad.Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d_hidden)), requires_grad=True),
        "ww.b1": ad.Tensor(np.zeros(d_hidden), requires_grad=True),
        "ww.w2": ad.Tensor(np.zeros((d_hidden, 1)), requires_grad=True),
        "ww.b2": ad.Tensor(np.zeros(1), requires_grad=True),
        "spa.w1": ad.Tensor(rng.normal(0.0, 1.0 / np.sqrt(tau), size=(tau, h_score)), requires_grad=True),
        "spa.b1": ad.Tensor(np.zeros(h_score), requires_grad=True),
        "spa.w2": ad.Tensor(np.zeros((h_score, 1)), requires_grad=True),
        "spa.b2": ad.Tensor(np.zeros(1), requires_grad=True),
    }


def word_weights(params: dict[str, ad.Tensor], word_vectors: ad.Tensor, act=ad.tanh) -> ad.Tensor:
    """Softmax-normalized salience weights over an option's unique words.

    ``word_vectors`` is (n, d); the result is a probability vector of
    length n (a single word gets weight 1).
    """
    n = word_vectors.shape[0]
    if n == 0:
        raise ValueError("cannot weight an option with no words")
    hidden = act(word_vectors @ params["ww.w1"] + params["ww.b1"])
    logits = (hidden @ params["ww.w2"] + params["ww.b2"]).reshape(n)
    return ad.softmax(logits, axis=0)


def score_paragraphs(bow: BowMatrix, weights: ad.Tensor) -> ad.Tensor:
    """Weighted sparse scores over the candidate set, differentiable in the
    weights. Forward and backward both stream over the sparse word rows."""
    if weights.shape[0] != bow.n_words:
        raise ValueError(f"{weights.shape[0]} weights for {bow.n_words} words")
    z = bow.score_columns(weights.data)

    def backward(out):
        if weights.requires_grad:
            weights._accumulate(bow.grad_weights(out.grad))

    return ad.custom_op(z, (weights,), backward)


def trimmed_profile(z: ad.Tensor, tau: int) -> ad.Tensor:
    """The tau largest scores, sorted descending, zero-padded to length tau.

    Selection indices are recomputed every call and treated as constants;
    gradient flows only into the selected entries.
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    n = z.shape[0]
    if n == 0:
        return ad.Tensor(np.zeros(tau))
    order = rank_descending(z.data)[: min(tau, n)]
    profile = z[order]
    if len(order) < tau:
        profile = ad.concat([profile, ad.Tensor(np.zeros(tau - len(order)))], axis=0)
    return profile


def option_score_sparse(params: dict[str, ad.Tensor], z: ad.Tensor, tau: int, act=ad.tanh) -> ad.Tensor:
    """Scalar option score from the trimmed score profile (two dense layers)."""
    profile = trimmed_profile(z, tau).reshape((1, tau))
    hidden = act(profile @ params["spa.w1"] + params["spa.b1"])
    return (hidden @ params["spa.w2"] + params["spa.b2"]).reshape(())


def retriever_loss(option_scores: ad.Tensor, answer: int) -> ad.Tensor:
    """Cross-entropy over the m option scores at the gold index."""
    return ad.cross_entropy(option_scores, answer)


def ranked_word_weights(words: list[str], weights: np.ndarray) -> list[tuple[str, float]]:
    """(word, weight) pairs sorted by weight descending, word ascending."""
    order = sorted(range(len(words)), key=lambda j: (-weights[j], words[j]))
    return [(words[j], float(weights[j])) for j in order]
