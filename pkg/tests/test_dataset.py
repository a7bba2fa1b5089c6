import json

import pytest

from scenarioqa.data import (
    DataValidationError,
    load_corpus,
    load_qrels,
    load_questions,
    save_corpus,
    save_qrels,
    save_questions,
    split_questions,
)
from scenarioqa.data import RelevanceAnnotation
from scenarioqa.text import Tokenizer, load_stopwords, save_stopwords


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def make_question_record(**over):
    rec = {
        "id": "q1",
        "scenario": "a cold plain near the river",
        "question": "what grows there",
        "options": ["wheat", "rice", "cotton", "tea"],
        "answer": 2,
        "split": "train",
    }
    rec.update(over)
    return rec


class TestLoadQuestions:
    def test_basic_mapping(self, tmp_path):
        path = tmp_path / "q.jsonl"
        write_jsonl(path, [make_question_record()])
        qs = load_questions(path)
        assert len(qs) == 1
        q = qs[0]
        assert q.id == "q1" and len(q.options) == 4 and q.answer == 2

    def test_answer_out_of_range(self, tmp_path):
        path = tmp_path / "q.jsonl"
        write_jsonl(path, [make_question_record(answer=4)])
        with pytest.raises(DataValidationError, match="answer index out of range"):
            load_questions(path)

    def test_duplicate_id(self, tmp_path):
        path = tmp_path / "q.jsonl"
        write_jsonl(path, [make_question_record(), make_question_record(answer=1)])
        with pytest.raises(DataValidationError, match="duplicate question id"):
            load_questions(path)

    def test_missing_field_reports_line(self, tmp_path):
        path = tmp_path / "q.jsonl"
        rec = make_question_record()
        del rec["options"]
        write_jsonl(path, [make_question_record(id="q0"), rec])
        with pytest.raises(DataValidationError, match="line 2"):
            load_questions(path)

    def test_too_few_options(self, tmp_path):
        path = tmp_path / "q.jsonl"
        write_jsonl(path, [make_question_record(options=["only"], answer=0)])
        with pytest.raises(DataValidationError, match=">= 2 options"):
            load_questions(path)

    def test_empty_scenario_allowed(self, tmp_path):
        path = tmp_path / "q.jsonl"
        write_jsonl(path, [make_question_record(scenario="")])
        assert load_questions(path)[0].scenario == ""

    def test_bad_split_rejected(self, tmp_path):
        path = tmp_path / "q.jsonl"
        write_jsonl(path, [make_question_record(split="validation")])
        with pytest.raises(DataValidationError, match="unknown split"):
            load_questions(path)

    def test_round_trip(self, tmp_path):
        path = tmp_path / "q.jsonl"
        write_jsonl(
            path,
            [make_question_record(), make_question_record(id="q2", split="dev", answer=0)],
        )
        qs = load_questions(path)
        out = tmp_path / "q2.jsonl"
        save_questions(qs, out)
        assert load_questions(out) == qs


class TestLoadCorpus:
    def test_ingest_order_preserved(self, tmp_path):
        path = tmp_path / "c.jsonl"
        write_jsonl(path, [{"id": f"p{i}", "text": f"tok{i} shared"} for i in (3, 1, 2)])
        res = load_corpus(path, Tokenizer())
        assert [p.id for p in res.paragraphs] == ["p3", "p1", "p2"]
        assert res.dropped == 0

    def test_stopword_only_paragraph_dropped(self, tmp_path):
        path = tmp_path / "c.jsonl"
        write_jsonl(path, [{"id": "p1", "text": "the of"}, {"id": "p2", "text": "glacier melt"}])
        res = load_corpus(path, Tokenizer(stopwords=frozenset({"the", "of"})))
        assert [p.id for p in res.paragraphs] == ["p2"]
        assert res.dropped == 1 and res.dropped_ids == ["p1"]

    def test_duplicate_paragraph_id(self, tmp_path):
        path = tmp_path / "c.jsonl"
        write_jsonl(path, [{"id": "p1", "text": "a"}, {"id": "p1", "text": "b"}])
        with pytest.raises(DataValidationError, match="duplicate paragraph id"):
            load_corpus(path, Tokenizer())

    def test_corpus_round_trip(self, tmp_path):
        path = tmp_path / "c.jsonl"
        write_jsonl(path, [{"id": "p1", "text": "alpha beta"}])
        res = load_corpus(path, Tokenizer())
        out = tmp_path / "c2.jsonl"
        save_corpus(res.paragraphs, out)
        assert load_corpus(out, Tokenizer()).paragraphs == res.paragraphs


class TestLoadQrels:
    def test_resolves_ids(self, tmp_path):
        path = tmp_path / "r.jsonl"
        write_jsonl(path, [{"question_id": "q1", "relevant_paragraph_ids": ["p1", "p2"]}])
        anns = load_qrels(path, paragraph_ids={"p1", "p2", "p3"}, question_ids={"q1"})
        assert anns["q1"].relevant_paragraph_ids == {"p1", "p2"}

    def test_unknown_paragraph_rejected(self, tmp_path):
        path = tmp_path / "r.jsonl"
        write_jsonl(path, [{"question_id": "q1", "relevant_paragraph_ids": ["nope"]}])
        with pytest.raises(DataValidationError, match="unknown paragraph"):
            load_qrels(path, paragraph_ids={"p1"})

    def test_round_trip(self, tmp_path):
        anns = [RelevanceAnnotation("q1", frozenset({"p2", "p1"}))]
        path = tmp_path / "r.jsonl"
        save_qrels(anns, path)
        loaded = load_qrels(path)
        assert loaded["q1"].relevant_paragraph_ids == {"p1", "p2"}


class TestTokenizer:
    def test_unicode_word_mode(self):
        tok = Tokenizer()
        assert tok.tokenize("Alpha, beta-9 GAMMA!") == ["alpha", "beta", "9", "gamma"]

    def test_char_mode(self):
        tok = Tokenizer(mode="char", lowercase=False)
        assert tok.tokenize("ab c") == ["a", "b", "c"]

    def test_stopwords_filtered_after_lowercase(self):
        tok = Tokenizer(stopwords=frozenset({"the"}))
        assert tok.tokenize("The THE river") == ["river"]

    def test_pure_function(self):
        tok = Tokenizer(stopwords=frozenset({"x"}))
        assert tok.tokenize("a x b") == tok.tokenize("a x b")

    def test_config_round_trip(self):
        tok = Tokenizer(mode="char", lowercase=False, stopwords=frozenset({"a"}))
        assert Tokenizer.from_config(tok.config()) == tok

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            Tokenizer(mode="bytes")

    def test_stopword_file_round_trip(self, tmp_path):
        path = tmp_path / "stop.txt"
        save_stopwords({"b", "a"}, path)
        assert load_stopwords(path) == {"a", "b"}


def test_split_questions(tmp_path):
    path = tmp_path / "q.jsonl"
    write_jsonl(
        path,
        [
            make_question_record(id="q1", split="train"),
            make_question_record(id="q2", split="dev"),
            make_question_record(id="q3", split="train"),
        ],
    )
    groups = split_questions(load_questions(path))
    assert [q.id for q in groups["train"]] == ["q1", "q3"]
    assert [q.id for q in groups["dev"]] == ["q2"]
    assert groups["test"] == []
