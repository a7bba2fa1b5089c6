"""Joint optimization of retriever and reader from answer labels only.

The loss for a question is the sum of the retrieval cross-entropy and the
two reader cross-entropies; batch losses are plain sums over questions.
Training is bitwise deterministic for a fixed (seed, data, hyper): batches
are drawn from a seeded generator, questions inside a batch are processed
in id order, and the optimizer walks parameters in a fixed order.

Relevance annotations never enter this module's gradient path; when
supplied they are only read by the per-epoch dev-metric logging.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import evaluation as ev
from .data import Question, split_questions
from .encoder import Vocabulary
from .model import HyperParams, Runtime, forward_question, init_params
from .reader import reader_loss
from .retriever import retriever_loss

log = logging.getLogger(__name__)

_MAGIC = b"SQCK"
_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries the offending question ids."""

    def __init__(self, question_ids):
        super().__init__(f"non-finite loss on question(s) {question_ids}")
        self.question_ids = list(question_ids)


class CheckpointFormatError(ValueError):
    """A checkpoint file is corrupt or has an unsupported version."""


class Adam:
    """Adam with linear learning-rate warm-up and bias correction."""

    def __init__(
        self,
        params: dict[str, ad.Tensor],
        lr: float,
        warmup_steps: int = 0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.warmup_steps = warmup_steps
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        lr = self.lr
        if self.warmup_steps > 0:
            lr *= min(1.0, self.t / self.warmup_steps)
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            p.data -= lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainState:
    """Everything needed to resume or reuse a trained model."""

    params: dict[str, ad.Tensor]
    vocab: Vocabulary
    hyper: HyperParams
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    adam_t: int = 0
    meta: dict = field(default_factory=dict)


def joint_loss(
    params: dict[str, ad.Tensor],
    runtime: Runtime,
    question: Question,
    p_top_override: list[list[int]] | None = None,
):
    """(total loss, part losses, forward) for one question; None if skipped."""
    fwd = forward_question(params, runtime, question, p_top_override=p_top_override)
    if fwd is None:
        return None
    l_retr = retriever_loss(fwd.s_spa, question.answer)
    l_read = reader_loss(fwd.s_fus, fwd.s_den, question.answer)
    total = l_retr + l_read
    parts = {"retr": l_retr.item(), "read": l_read.item()}
    return total, parts, fwd


def build_vocabulary(train_questions: list[Question], runtime_tokens, tokenizer) -> Vocabulary:
    """Vocabulary from the training split plus the corpus (OOV becomes UNK)."""

    def streams():
        for q in train_questions:
            yield tokenizer.tokenize(q.scenario)
            yield tokenizer.tokenize(q.question)
            for o in q.options:
                yield tokenizer.tokenize(o)
        for tokens in runtime_tokens:
            yield tokens

    return Vocabulary.build(streams())


@dataclass
class TrainResult:
    state: TrainState
    log_records: list[dict]
    runtime: Runtime
    skipped_question_ids: list[str] = field(default_factory=list)


def train(
    questions: list[Question],
    index,
    corpus,
    hyper: HyperParams,
    qrels: dict | None = None,
    log_path: str | Path | None = None,
) -> TrainResult:
    """Full training run; returns the best-dev state and per-epoch log."""
    hyper.validate()
    groups = split_questions(questions)
    train_qs = groups["train"]
    dev_qs = groups["dev"]
    if not train_qs:
        raise ValueError("no questions in the train split")

    vocab = build_vocabulary(train_qs, (p.tokens for p in corpus), index.tokenizer)
    runtime = Runtime(index, corpus, vocab, hyper)
    params = init_params(len(vocab), hyper)

    n_batches = (len(train_qs) + hyper.batch_size - 1) // hyper.batch_size
    total_steps = hyper.epochs * n_batches
    warmup = max(1, int(round(0.1 * total_steps)))
    opt = Adam(params, lr=hyper.learning_rate, warmup_steps=warmup)
    shuffle_rng = np.random.default_rng(hyper.seed)

    p_top_cache: dict[str, list[list[int]]] = {}
    skipped: set[str] = set()
    records: list[dict] = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    best_acc = -1.0
    best_epoch = -1
    best_params: dict[str, np.ndarray] | None = None
    try:
        for epoch in range(1, hyper.epochs + 1):
            order = shuffle_rng.permutation(len(train_qs))
            epoch_loss = 0.0
            n_seen = 0
            t0 = time.perf_counter()
            for b in range(n_batches):
                batch_idx = order[b * hyper.batch_size : (b + 1) * hyper.batch_size]
                batch = sorted((train_qs[i] for i in batch_idx), key=lambda q: q.id)
                refresh = (opt.t % hyper.refresh_interval) == 0
                losses = []
                for q in batch:
                    override = None
                    if not refresh and q.id in p_top_cache:
                        override = p_top_cache[q.id]
                    out = joint_loss(params, runtime, q, p_top_override=override)
                    if out is None:
                        if q.id not in skipped:
                            log.warning("skipping question %s (option empty after filtering)", q.id)
                            skipped.add(q.id)
                        continue
                    loss, _, fwd = out
                    if override is None:
                        p_top_cache[q.id] = [
                            [opt_fwd.candidate_ids.index(pid) for pid in opt_fwd.p_top]
                            for opt_fwd in fwd.options
                        ]
                    losses.append((q.id, loss))
                if not losses:
                    continue
                batch_loss = losses[0][1]
                for _, l in losses[1:]:
                    batch_loss = batch_loss + l
                if not np.isfinite(batch_loss.item()):
                    raise TrainingDivergedError([qid for qid, _ in losses])
                opt.zero_grad()
                batch_loss.backward()
                opt.step()
                epoch_loss += batch_loss.item()
                n_seen += len(losses)
            record = {
                "epoch": epoch,
                "train_loss": epoch_loss / max(1, n_seen),
                "seconds": round(time.perf_counter() - t0, 3),
            }
            if dev_qs:
                acc = ev.qa_accuracy(params, runtime, dev_qs).accuracy
                record["dev_accuracy"] = acc
                if qrels is not None:
                    run = ev.retrieval_run(params, runtime, dev_qs)
                    metrics = ev.retrieval_metrics(run, qrels, positions=(10,))
                    record["dev_MAP@10"] = metrics["MAP@10"]
                if acc > best_acc:
                    best_acc = acc
                    best_epoch = epoch
                    best_params = {k: p.data.copy() for k, p in params.items()}
            records.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
    finally:
        if log_fh:
            log_fh.close()

    if best_params is not None:
        for k, p in params.items():
            p.data = best_params[k]
    meta = {"best_epoch": best_epoch, "best_dev_accuracy": best_acc, "skipped": sorted(skipped)}

    final_hyper = hyper
    if dev_qs:
        alpha, beta, gamma = ev.tune_prediction_weights(params, runtime, dev_qs)
        final_hyper = hyper.replace(alpha=alpha, beta=beta, gamma=gamma)
        meta["tuned_weights"] = [alpha, beta, gamma]
        runtime.hyper = final_hyper

    state = TrainState(
        params=params,
        vocab=vocab,
        hyper=final_hyper,
        adam_m=opt.m,
        adam_v=opt.v,
        adam_t=opt.t,
        meta=meta,
    )
    return TrainResult(
        state=state,
        log_records=records,
        runtime=runtime,
        skipped_question_ids=sorted(skipped),
    )


# -- gradient verification ------------------------------------------------


@dataclass
class GradCheckReport:
    per_tensor: dict[str, float]
    max_relative_error: float
    checked_entries: int


def grad_check(
    params: dict[str, ad.Tensor],
    runtime: Runtime,
    question: Question,
    h: float = 1e-5,
    max_entries_per_tensor: int = 24,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Central finite differences vs analytic gradients for every tensor.

    Intended for tiny configurations (double precision throughout). Large
    tensors are subsampled deterministically.
    """
    rng = rng or np.random.default_rng(0)
    out = joint_loss(params, runtime, question)
    if out is None:
        raise ValueError("probe question was skipped; pick a valid one")
    loss, _, _ = out
    for p in params.values():
        p.grad = None
    loss.backward()

    def loss_value() -> float:
        with ad.no_grad():
            res = joint_loss(params, runtime, question)
        return res[0].item()

    per_tensor: dict[str, float] = {}
    checked = 0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        grad = (p.grad if p.grad is not None else np.zeros_like(p.data)).reshape(-1)
        if flat.size <= max_entries_per_tensor:
            entries = np.arange(flat.size)
        else:
            entries = rng.choice(flat.size, size=max_entries_per_tensor, replace=False)
        worst = 0.0
        for idx in entries:
            orig = flat[idx]
            flat[idx] = orig + h
            fp = loss_value()
            flat[idx] = orig - h
            fm = loss_value()
            flat[idx] = orig
            fd = (fp - fm) / (2 * h)
            denom = max(abs(fd), abs(grad[idx]), 1e-6)
            worst = max(worst, abs(fd - grad[idx]) / denom)
            checked += 1
        per_tensor[name] = worst
    return GradCheckReport(
        per_tensor=per_tensor,
        max_relative_error=max(per_tensor.values()),
        checked_entries=checked,
    )


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    """Versioned binary: magic, JSON header, then named float64 tensors."""
    names = sorted(state.params)
    header = {
        "hyper": state.hyper.to_dict(),
        "vocab": state.vocab.tokens,
        "tensors": {n: list(state.params[n].shape) for n in names},
        "adam_t": state.adam_t,
        "has_adam": bool(state.adam_m),
        "meta": state.meta,
    }
    blob = json.dumps(header, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(_VERSION.to_bytes(4, "little"))
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for n in names:
            np.save(fh, state.params[n].data)
        if state.adam_m:
            for n in names:
                np.save(fh, state.adam_m[n])
            for n in names:
                np.save(fh, state.adam_v[n])


def load_checkpoint(path: str | Path) -> TrainState:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic {magic!r})")
        version = int.from_bytes(fh.read(4), "little")
        if version != _VERSION:
            raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}")
        try:
            size = int.from_bytes(fh.read(8), "little")
            header = json.loads(fh.read(size).decode("utf-8"))
            names = sorted(header["tensors"])
            params = {}
            for n in names:
                arr = np.load(fh)
                if list(arr.shape) != header["tensors"][n]:
                    raise CheckpointFormatError(f"{path}: tensor {n} has unexpected shape")
                params[n] = ad.Tensor(arr, requires_grad=True)
            adam_m: dict[str, np.ndarray] = {}
            adam_v: dict[str, np.ndarray] = {}
            if header.get("has_adam"):
                for n in names:
                    adam_m[n] = np.load(fh)
                for n in names:
                    adam_v[n] = np.load(fh)
        except CheckpointFormatError:
            raise
        except Exception as exc:
            raise CheckpointFormatError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc
    tokens = header["vocab"]
    vocab = Vocabulary(tokens[4:])
    if vocab.tokens != tokens:
        raise CheckpointFormatError(f"{path}: vocabulary reserved ids are inconsistent")
    return TrainState(
        params=params,
        vocab=vocab,
        hyper=HyperParams.from_dict(header["hyper"]),
        adam_m=adam_m,
        adam_v=adam_v,
        adam_t=header.get("adam_t", 0),
        meta=header.get("meta", {}),
    )
