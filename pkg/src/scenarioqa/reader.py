"""Dense re-scoring and multi-paragraph fusion.

Each retrieved paragraph is re-encoded together with the scenario,
question, and option; its [CLS] vector yields a dense score. The best k'
paragraphs are fused: within a paragraph, every pair of segment blocks
(paragraph/scenario/question/option) is combined by bidirectional
cross-attention, max-pooled, and projected; across paragraphs, an
attention pooler mixes the per-paragraph fusion vectors into one. The
reader emits two option scores: a head over the fused vector and the plain
sum of the dense paragraph scores.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .encoder import SEG_OPTION, SEG_PARAGRAPH, SEG_QUESTION, SEG_SCENARIO, SequencePlan

# fixed order of the six segment pairs in the intra-paragraph fusion vector
SEGMENT_PAIRS = (
    (SEG_PARAGRAPH, SEG_SCENARIO),
    (SEG_PARAGRAPH, SEG_QUESTION),
    (SEG_PARAGRAPH, SEG_OPTION),
    (SEG_SCENARIO, SEG_QUESTION),
    (SEG_SCENARIO, SEG_OPTION),
    (SEG_QUESTION, SEG_OPTION),
)


def init_reader_params(d: int, d_fuse: int, h_att: int, rng: np.random.Generator) -> dict[str, ad.Tensor]:
    """Score heads start at zero (constant untrained scores, uniform
    pooling); projections and null vectors start random."""
    d_full = 6 * d_fuse
    return {
        "den.w": ad.Tensor(np.zeros((d, 1)), requires_grad=True),
        "den.b": ad.Tensor(np.zeros(1), requires_grad=True),
        "fus.null_seg": ad.Tensor(rng.normal(0.0, 0.1, size=(1, d)), requires_grad=True),
        "fus.pair.w": ad.Tensor(rng.normal(0.0, 1.0 / np.sqrt(2 * d), size=(6, 2 * d, d_fuse)), requires_grad=True),
        "fus.pair.b": ad.Tensor(np.zeros((6, d_fuse)), requires_grad=True),
        "fus.att.w1": ad.Tensor(rng.normal(0.0, 1.0 / np.sqrt(d_full), size=(d_full, h_att)), requires_grad=True),
        "fus.att.b1": ad.Tensor(np.zeros(h_att), requires_grad=True),
        "fus.att.w2": ad.Tensor(np.zeros((h_att, 1)), requires_grad=True),
        "fus.att.b2": ad.Tensor(np.zeros(1), requires_grad=True),
        "fus.out.w": ad.Tensor(np.zeros((d_full, 1)), requires_grad=True),
        "fus.out.b": ad.Tensor(np.zeros(1), requires_grad=True),
        "fus.null_fused": ad.Tensor(rng.normal(0.0, 0.1, size=(d_full,)), requires_grad=True),
    }


def rescore(params: dict[str, ad.Tensor], cls_vectors: ad.Tensor) -> ad.Tensor:
    """Dense paragraph scores: one linear scalar per [CLS] vector (k,)."""
    k = cls_vectors.shape[0]
    return (cls_vectors @ params["den.w"] + params["den.b"]).reshape(k)


def select_fusion(z_den: np.ndarray, paragraph_ids: list[str], k_fuse: int) -> list[int]:
    """Positions of the k' top paragraphs by dense score, ties by id asc."""
    order = sorted(range(len(z_den)), key=lambda l: (-z_den[l], paragraph_ids[l]))
    return order[: min(k_fuse, len(order))]


def dual_attention(x: ad.Tensor, y: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
    """Scaled bidirectional cross-attention with residual connections.

    A = X Y^T / sqrt(d); each side adds what it attends to on the other:
    X_hat = X + rowsoftmax(A) Y, Y_hat = Y + rowsoftmax(A^T) X.
    """
    d = x.shape[-1]
    a = (x @ ad.transpose(y)) * (1.0 / np.sqrt(d))
    x_hat = x + ad.softmax(a, axis=-1) @ y
    y_hat = y + ad.softmax(ad.transpose(a), axis=-1) @ x
    return x_hat, y_hat


def fuse_intra(
    params: dict[str, ad.Tensor],
    encoded_seq: ad.Tensor,
    plan: SequencePlan,
    act=ad.relu,
) -> ad.Tensor:
    """Per-paragraph fusion vector (6 * d_fuse,).

    For each segment pair: dual attention, entrywise max-pool over the
    positions of each side, concatenate the two pooled vectors, then a
    per-pair projection with relu. An empty segment is replaced by the
    learned null vector so the output shape never varies.
    """
    seg_mats: dict[int, ad.Tensor] = {}
    for seg in (SEG_PARAGRAPH, SEG_SCENARIO, SEG_QUESTION, SEG_OPTION):
        pos = plan.segment_positions(seg)
        seg_mats[seg] = encoded_seq[pos] if len(pos) else params["fus.null_seg"]
    parts = []
    for i, (sa, sb) in enumerate(SEGMENT_PAIRS):
        x_hat, y_hat = dual_attention(seg_mats[sa], seg_mats[sb])
        pooled = ad.concat([x_hat.max(axis=0), y_hat.max(axis=0)], axis=0)
        proj = act(pooled.reshape((1, -1)) @ params["fus.pair.w"][i] + params["fus.pair.b"][i])
        parts.append(proj.reshape(-1))
    return ad.concat(parts, axis=0)


def fuse_inter(params: dict[str, ad.Tensor], fusion_matrix: ad.Tensor, act=ad.tanh) -> tuple[ad.Tensor, ad.Tensor]:
    """Attention-pool the k' per-paragraph vectors into one (plus weights).

    a_l = tanh(linear(tanh(linear(f_l)))); weights = softmax over l;
    the fused vector is the weight-convex combination of the rows.
    """
    k = fusion_matrix.shape[0]
    hidden = act(fusion_matrix @ params["fus.att.w1"] + params["fus.att.b1"])
    logits = act(hidden @ params["fus.att.w2"] + params["fus.att.b2"]).reshape(k)
    weights = ad.softmax(logits, axis=0)
    fused = (weights.reshape((1, k)) @ fusion_matrix).reshape(-1)
    return fused, weights


def option_scores_reader(
    params: dict[str, ad.Tensor],
    fused: ad.Tensor,
    z_den: ad.Tensor | None,
) -> tuple[ad.Tensor, ad.Tensor]:
    """(s_fus, s_den): fused-vector head and the sum of ALL k dense scores.

    The dense option score sums over the full retrieved set, not only the
    fused subset. With no retrieved paragraphs the sum is 0.
    """
    s_fus = (fused.reshape((1, -1)) @ params["fus.out.w"] + params["fus.out.b"]).reshape(())
    if z_den is None or z_den.shape[0] == 0:
        s_den = ad.Tensor(np.zeros(()))
    else:
        s_den = z_den.sum()
    return s_fus, s_den


def reader_loss(s_fus: ad.Tensor, s_den: ad.Tensor, answer: int) -> ad.Tensor:
    """Sum of the two option-level cross-entropies."""
    return ad.cross_entropy(s_fus, answer) + ad.cross_entropy(s_den, answer)
