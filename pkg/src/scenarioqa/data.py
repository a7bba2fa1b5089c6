"""Question sets, paragraph corpora, and relevance annotations.

All three artifacts are JSONL, one record per line, UTF-8:

    questions.jsonl  {"id","scenario","question","options":[...], "answer","split"}
    corpus.jsonl     {"id","text"}
    qrels.jsonl      {"question_id","relevant_paragraph_ids":[...]}

Loaders validate eagerly and reject the whole file on the first malformed
record, reporting its line number. Loaded objects are immutable value
types, safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .text import Tokenizer

SPLITS = ("train", "dev", "test")


class DataValidationError(ValueError):
    """A dataset file failed validation (bad record, bad reference)."""


@dataclass(frozen=True)
class Question:
    id: str
    scenario: str
    question: str
    options: tuple[str, ...]
    answer: int
    split: str

    def validate(self, where: str = "") -> None:
        ctx = f"{where}: " if where else ""
        if len(self.options) < 2:
            raise DataValidationError(f"{ctx}question {self.id!r} needs >= 2 options")
        if not all(isinstance(o, str) and o for o in self.options):
            raise DataValidationError(f"{ctx}question {self.id!r} has an empty option")
        if not (0 <= self.answer < len(self.options)):
            raise DataValidationError(
                f"{ctx}question {self.id!r}: answer index out of range "
                f"({self.answer} with {len(self.options)} options)"
            )
        if self.split not in SPLITS:
            raise DataValidationError(f"{ctx}question {self.id!r} has unknown split {self.split!r}")

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "scenario": self.scenario,
            "question": self.question,
            "options": list(self.options),
            "answer": self.answer,
            "split": self.split,
        }


@dataclass(frozen=True)
class Paragraph:
    id: str
    text: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class RelevanceAnnotation:
    question_id: str
    relevant_paragraph_ids: frozenset[str]


@dataclass
class CorpusLoadResult:
    paragraphs: list[Paragraph]
    dropped: int = 0
    dropped_ids: list[str] = field(default_factory=list)


def _iter_jsonl(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataValidationError(f"{path}: line {lineno}: invalid JSON ({exc})") from exc


_QUESTION_FIELDS = ("id", "scenario", "question", "options", "answer", "split")


def load_questions(path: str | Path) -> list[Question]:
    """Load and validate a question file; any bad record rejects the file."""
    questions: list[Question] = []
    seen: set[str] = set()
    for lineno, rec in _iter_jsonl(path):
        where = f"{path}: line {lineno}"
        missing = [f for f in _QUESTION_FIELDS if f not in rec]
        if missing:
            raise DataValidationError(f"{where}: missing field(s) {missing}")
        q = Question(
            id=str(rec["id"]),
            scenario=str(rec["scenario"]),
            question=str(rec["question"]),
            options=tuple(str(o) for o in rec["options"]),
            answer=int(rec["answer"]),
            split=str(rec["split"]),
        )
        q.validate(where)
        if q.id in seen:
            raise DataValidationError(f"{where}: duplicate question id {q.id!r}")
        seen.add(q.id)
        questions.append(q)
    return questions


def save_questions(questions, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in questions:
            fh.write(json.dumps(q.to_record(), ensure_ascii=False) + "\n")


def load_corpus(path: str | Path, tokenizer: Tokenizer) -> CorpusLoadResult:
    """Load paragraphs, tokenize, and drop those empty after filtering.

    Ingest order is preserved. Paragraphs whose token list is empty after
    stopword filtering are dropped and counted rather than kept degenerate.
    """
    paragraphs: list[Paragraph] = []
    seen: set[str] = set()
    dropped: list[str] = []
    for lineno, rec in _iter_jsonl(path):
        where = f"{path}: line {lineno}"
        if "id" not in rec or "text" not in rec:
            raise DataValidationError(f"{where}: corpus record needs id and text")
        pid = str(rec["id"])
        if pid in seen:
            raise DataValidationError(f"{where}: duplicate paragraph id {pid!r}")
        seen.add(pid)
        tokens = tuple(tokenizer.tokenize(str(rec["text"])))
        if not tokens:
            dropped.append(pid)
            continue
        paragraphs.append(Paragraph(id=pid, text=str(rec["text"]), tokens=tokens))
    return CorpusLoadResult(paragraphs=paragraphs, dropped=len(dropped), dropped_ids=dropped)


def save_corpus(paragraphs, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in paragraphs:
            fh.write(json.dumps({"id": p.id, "text": p.text}, ensure_ascii=False) + "\n")


def load_qrels(
    path: str | Path,
    paragraph_ids: set[str] | None = None,
    question_ids: set[str] | None = None,
) -> dict[str, RelevanceAnnotation]:
    """Load binary relevance annotations keyed by question id.

    Every referenced paragraph id must resolve against the corpus when
    ``paragraph_ids`` is given; same for question ids.
    """
    annotations: dict[str, RelevanceAnnotation] = {}
    for lineno, rec in _iter_jsonl(path):
        where = f"{path}: line {lineno}"
        if "question_id" not in rec or "relevant_paragraph_ids" not in rec:
            raise DataValidationError(f"{where}: qrels record needs question_id and relevant_paragraph_ids")
        qid = str(rec["question_id"])
        if qid in annotations:
            raise DataValidationError(f"{where}: duplicate annotation for question {qid!r}")
        pids = frozenset(str(p) for p in rec["relevant_paragraph_ids"])
        if question_ids is not None and qid not in question_ids:
            raise DataValidationError(f"{where}: annotation for unknown question {qid!r}")
        if paragraph_ids is not None:
            unknown = pids - paragraph_ids
            if unknown:
                raise DataValidationError(
                    f"{where}: annotation for {qid!r} references unknown paragraph(s) {sorted(unknown)[:3]}"
                )
        annotations[qid] = RelevanceAnnotation(question_id=qid, relevant_paragraph_ids=pids)
    return annotations


def save_qrels(annotations, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ann in annotations:
            rec = {
                "question_id": ann.question_id,
                "relevant_paragraph_ids": sorted(ann.relevant_paragraph_ids),
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def split_questions(questions) -> dict[str, list[Question]]:
    out: dict[str, list[Question]] = {s: [] for s in SPLITS}
    for q in questions:
        out[q.split].append(q)
    return out
