"""End-to-end per-question forward pass joining retriever and reader.

A Runtime wraps the immutable pieces (index, vocabulary, hyperparameters)
and caches everything that does not depend on parameters: tokenized
sequences, unique-word layouts, and sparse BM25 matrices. The forward pass
produces the three option scores (sparse, dense, fused) as autodiff
tensors so a single backward call reaches every parameter, including the
word weighting network through the sparse score path.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from . import encoder as enc
from . import reader as rd
from . import retriever as rt
from .data import Paragraph, Question
from .index import BowMatrix, InvertedIndex, build_bow_matrix, candidate_paragraphs, rank_descending


@dataclass
class HyperParams:
    """Retrieval/fusion sizes, prediction weights, schedule, and model dims."""

    k: int = 10  # retrieved paragraphs per option
    k_fuse: int = 2  # paragraphs fused by the reader (k')
    tau: int = 200  # trimmed sparse-score profile length
    alpha: float = 1.0 / 3.0  # weight of the sparse score at prediction
    beta: float = 1.0 / 3.0  # weight of the dense score
    gamma: float = 1.0 / 3.0  # weight of the fused score
    epochs: int = 6
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 1
    refresh_interval: int = 1  # steps between retrieval refreshes
    d: int = 64  # encoder width
    n_heads: int = 4
    max_seq_len: int = 256
    d_hidden: int = 64  # word weighting net hidden width
    h_score: int = 64  # sparse score head hidden width
    d_fuse: int = 64  # per-pair fusion projection width
    h_att: int = 64  # inter-paragraph pooler hidden width
    uniform_weights: bool = False  # ablation: freeze word weights to uniform
    identity_activations: bool = False  # linear-probe variant for grad checks

    def validate(self) -> None:
        if self.k_fuse > self.k:
            raise ValueError("k_fuse must be <= k")
        if self.tau < 1:
            raise ValueError("tau must be >= 1")
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.d % self.n_heads != 0:
            raise ValueError("d must be divisible by n_heads")
        if self.refresh_interval < 1:
            raise ValueError("refresh_interval must be >= 1")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        known = {f.name for f in fields(cls)}
        hp = cls(**{k: v for k, v in d.items() if k in known})
        hp.validate()
        return hp

    def replace(self, **kw) -> "HyperParams":
        hp = replace(self, **kw)
        hp.validate()
        return hp


def init_params(vocab_size: int, hyper: HyperParams) -> dict[str, ad.Tensor]:
    """All trainable tensors, deterministically seeded from hyper.seed."""
    rng = np.random.default_rng(hyper.seed)
    params: dict[str, ad.Tensor] = {}
    params.update(enc.init_encoder_params(vocab_size, hyper.d, hyper.max_seq_len, rng))
    params.update(rt.init_retriever_params(hyper.d, hyper.d_hidden, hyper.tau, hyper.h_score, rng))
    params.update(rd.init_reader_params(hyper.d, hyper.d_fuse, hyper.h_att, rng))
    return params


@dataclass
class OptionFeatures:
    """Parameter-independent per-option data, cached across steps."""

    plan: enc.SequencePlan
    words: enc.OptionWords
    bow: BowMatrix


@dataclass
class QuestionFeatures:
    question: Question
    options: list[OptionFeatures]
    valid: bool


class Runtime:
    """Index + vocabulary + caches shared by training, prediction, and
    evaluation. Read-only once constructed; safe to share."""

    def __init__(
        self,
        index: InvertedIndex,
        corpus: list[Paragraph],
        vocab: enc.Vocabulary,
        hyper: HyperParams,
    ):
        hyper.validate()
        self.index = index
        self.vocab = vocab
        self.hyper = hyper
        self.paragraph_tokens: dict[int, tuple[str, ...]] = {
            index.pid_of[p.id]: p.tokens for p in corpus if p.id in index.pid_of
        }
        if len(self.paragraph_tokens) != index.stats.n_paragraphs:
            raise ValueError("corpus does not cover every indexed paragraph")
        self._features: dict[str, QuestionFeatures] = {}
        self._passage_plans: dict[tuple[str, int, int], enc.SequencePlan] = {}

    def features(self, question: Question) -> QuestionFeatures:
        cached = self._features.get(question.id)
        if cached is not None:
            return cached
        tok = self.index.tokenizer
        scenario = tok.tokenize(question.scenario)
        qtext = tok.tokenize(question.question)
        options: list[OptionFeatures] = []
        valid = True
        for opt_text in question.options:
            opt_tokens = tok.tokenize(opt_text)
            if not opt_tokens:
                valid = False
                break
            plan = enc.build_option_sequence(scenario, qtext, opt_tokens, self.vocab, self.hyper.max_seq_len)
            words = enc.unique_words(plan)
            cands = candidate_paragraphs(self.index, words.words)
            bow = build_bow_matrix(self.index, words.words, cands)
            options.append(OptionFeatures(plan=plan, words=words, bow=bow))
        feats = QuestionFeatures(question=question, options=options if valid else [], valid=valid)
        self._features[question.id] = feats
        return feats

    def passage_plan(self, question: Question, opt_index: int, internal_pid: int) -> enc.SequencePlan:
        key = (question.id, opt_index, internal_pid)
        cached = self._passage_plans.get(key)
        if cached is not None:
            return cached
        tok = self.index.tokenizer
        plan = enc.build_passage_sequence(
            list(self.paragraph_tokens[internal_pid]),
            tok.tokenize(question.scenario),
            tok.tokenize(question.question),
            tok.tokenize(question.options[opt_index]),
            self.vocab,
            self.hyper.max_seq_len,
        )
        self._passage_plans[key] = plan
        return plan


@dataclass
class OptionForward:
    """Diagnostics for one option's forward pass (plain arrays)."""

    words: list[str]
    word_weights: np.ndarray
    candidate_ids: list[str]
    z_spa: np.ndarray
    p_top: list[str]
    p_top_scores: np.ndarray
    z_den: np.ndarray
    p_fus: list[str]
    pool_weights: np.ndarray


@dataclass
class QuestionForward:
    s_spa: ad.Tensor  # (m,)
    s_den: ad.Tensor  # (m,)
    s_fus: ad.Tensor  # (m,)
    options: list[OptionForward] = field(default_factory=list)


def forward_question(
    params: dict[str, ad.Tensor],
    runtime: Runtime,
    question: Question,
    p_top_override: list[list[int]] | None = None,
    with_reader: bool = True,
) -> QuestionForward | None:
    """Score every option of one question; None if the question is skipped.

    ``p_top_override`` reuses previously retrieved paragraphs (internal
    ids) instead of refreshing retrieval; scores are still recomputed.
    """
    hyper = runtime.hyper
    feats = runtime.features(question)
    if not feats.valid:
        return None
    act_tanh = ad.identity if hyper.identity_activations else ad.tanh
    act_relu = ad.identity if hyper.identity_activations else ad.relu
    m = len(feats.options)

    # encode all m option sequences in one batch
    ids, mask = enc.pad_batch([f.plan for f in feats.options], runtime.vocab.PAD)
    encoded_options = enc.encode(params, ids, mask, hyper.n_heads)

    s_spa_parts: list[ad.Tensor] = []
    weights_per_option: list[ad.Tensor] = []
    z_per_option: list[ad.Tensor] = []
    p_top_positions: list[np.ndarray] = []
    for i, feat in enumerate(feats.options):
        h = enc.pool_unique_words(encoded_options[i], feat.words)
        if hyper.uniform_weights:
            w = ad.Tensor(np.full(feat.words.n_words, 1.0 / feat.words.n_words))
        else:
            w = rt.word_weights(params, h, act=act_tanh)
        z = rt.score_paragraphs(feat.bow, w)
        s_spa_parts.append(rt.option_score_sparse(params, z, hyper.tau, act=act_tanh))
        weights_per_option.append(w)
        z_per_option.append(z)
        if p_top_override is not None:
            top = np.asarray(p_top_override[i], dtype=np.int64)
        else:
            top = rank_descending(z.data)[: min(hyper.k, len(z.data))]
        p_top_positions.append(top)
    s_spa = ad.stack(s_spa_parts)

    option_diags: list[OptionForward] = []
    if not with_reader:
        for i, feat in enumerate(feats.options):
            top = p_top_positions[i]
            option_diags.append(
                OptionForward(
                    words=feat.words.words,
                    word_weights=weights_per_option[i].data.copy(),
                    candidate_ids=feat.bow.paragraph_ids,
                    z_spa=z_per_option[i].data.copy(),
                    p_top=[feat.bow.paragraph_ids[t] for t in top],
                    p_top_scores=z_per_option[i].data[top].copy(),
                    z_den=np.empty(0),
                    p_fus=[],
                    pool_weights=np.empty(0),
                )
            )
        zeros = ad.Tensor(np.zeros(m))
        return QuestionForward(s_spa=s_spa, s_den=zeros, s_fus=zeros, options=option_diags)

    # encode all (option, retrieved paragraph) passage sequences in one batch
    passage_plans: list[enc.SequencePlan] = []
    owners: list[tuple[int, int]] = []  # (option, rank within its P^top)
    for i, feat in enumerate(feats.options):
        for rank, pos in enumerate(p_top_positions[i]):
            internal = int(feat.bow.candidates[pos])
            passage_plans.append(runtime.passage_plan(question, i, internal))
            owners.append((i, rank))
    encoded_passages = None
    if passage_plans:
        pids, pmask = enc.pad_batch(passage_plans, runtime.vocab.PAD)
        encoded_passages = enc.encode(params, pids, pmask, hyper.n_heads)

    s_den_parts: list[ad.Tensor] = []
    s_fus_parts: list[ad.Tensor] = []
    row_of = {owner: row for row, owner in enumerate(owners)}
    for i, feat in enumerate(feats.options):
        top = p_top_positions[i]
        top_ids = [feat.bow.paragraph_ids[t] for t in top]
        if len(top) == 0:
            fused = params["fus.null_fused"]
            s_fus_i, s_den_i = rd.option_scores_reader(params, fused, None)
            z_den_data = np.empty(0)
            fus_ids: list[str] = []
            pool_w = np.empty(0)
        else:
            rows = [row_of[(i, r)] for r in range(len(top))]
            cls = encoded_passages[np.array(rows, dtype=np.int64), 0]
            z_den = rd.rescore(params, cls)
            fus_sel = rd.select_fusion(z_den.data, top_ids, hyper.k_fuse)
            fusion_rows = [
                rd.fuse_intra(params, encoded_passages[rows[l]], passage_plans[rows[l]], act=act_relu)
                for l in fus_sel
            ]
            fusion_matrix = ad.stack(fusion_rows)
            fused, pool = rd.fuse_inter(params, fusion_matrix, act=act_tanh)
            s_fus_i, s_den_i = rd.option_scores_reader(params, fused, z_den)
            z_den_data = z_den.data.copy()
            fus_ids = [top_ids[l] for l in fus_sel]
            pool_w = pool.data.copy()
        s_den_parts.append(s_den_i)
        s_fus_parts.append(s_fus_i)
        option_diags.append(
            OptionForward(
                words=feat.words.words,
                word_weights=weights_per_option[i].data.copy(),
                candidate_ids=feat.bow.paragraph_ids,
                z_spa=z_per_option[i].data.copy(),
                p_top=top_ids,
                p_top_scores=z_per_option[i].data[top].copy(),
                z_den=z_den_data,
                p_fus=fus_ids,
                pool_weights=pool_w,
            )
        )
    return QuestionForward(
        s_spa=s_spa,
        s_den=ad.stack(s_den_parts),
        s_fus=ad.stack(s_fus_parts),
        options=option_diags,
    )
