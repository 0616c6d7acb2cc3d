from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iiatest.core import (
    Dataset,
    ItemUniverse,
    Question,
    QuestionSet,
    Response,
    ResponseTable,
    ScoreVector,
    ValidationError,
    build_question_sets,
    choice_probabilities,
    softmax,
)

finite = st.floats(-30, 30, allow_nan=False)


def test_universe_rejects_duplicates_and_tiny():
    with pytest.raises(ValidationError):
        ItemUniverse(("a", "a", "b"))
    with pytest.raises(ValidationError):
        ItemUniverse(("a", "b"))
    assert ItemUniverse(("a", "b", "c")).size == 3


@pytest.mark.parametrize(
    "target,options",
    [("t", ("a",)), ("t", ("t", "a")), ("t", ("a", "a"))],
)
def test_question_invariants(target, options):
    with pytest.raises(ValidationError):
        Question("q", target, options)


def test_question_set_requires_shared_target():
    with pytest.raises(ValidationError):
        QuestionSet("t", (Question("q1", "t", ("a", "b")), Question("q2", "u", ("a", "b"))))
    with pytest.raises(ValidationError):
        QuestionSet("t", (Question("q1", "t", ("a", "b")), Question("q1", "t", ("a", "c"))))


def test_partition_by_target():
    qs = [Question(f"a{i}", "apple", ("x", "y", "z")) for i in range(5)]
    qs += [Question(f"b{i}", "bread", ("x", "y")) for i in range(3)]
    pairs = build_question_sets(qs, [])
    assert [p[0].target for p in pairs] == ["apple", "bread"]
    assert [len(p[0].questions) for p in pairs] == [5, 3]


def test_response_outside_choice_set_names_record():
    q = Question("q1", "t", ("a", "b"))
    with pytest.raises(ValidationError, match="record 1"):
        ResponseTable.from_records([q], [("p1", "q1", "a"), ("p2", "q1", "c")])


def test_unknown_question_and_duplicate_answer():
    q = Question("q1", "t", ("a", "b"))
    with pytest.raises(ValidationError, match="unknown question"):
        ResponseTable.from_records([q], [("p1", "q9", "a")])
    with pytest.raises(ValidationError, match="twice"):
        ResponseTable.from_records([q], [("p1", "q1", "a"), ("p1", "q1", "b")])


def test_drop_one_layout_gives_five_question_sets():
    from iiatest.synthgen import SynthConfig, generate_dataset

    ds, _ = generate_dataset(SynthConfig(m=100, n=2, seed=1))
    assert ds.m == 100
    assert all(len(qs.questions) == 5 for qs in ds.question_sets)
    assert len(ds.questions) == 500


def test_choice_probabilities_examples():
    q4 = Question("q", "t", ("a", "b", "c", "d"))
    sv = ScoreVector.zeros("t", ("a", "b", "c", "d"))
    np.testing.assert_allclose(choice_probabilities(sv, q4), [0.25] * 4, atol=1e-15)
    q3 = Question("q", "t", ("a", "b", "c"))
    sv = ScoreVector.from_mapping("t", {"a": math.log(2), "b": 0.0, "c": 0.0})
    np.testing.assert_allclose(choice_probabilities(sv, q3), [0.5, 0.25, 0.25], atol=1e-12)


def test_missing_score_raises():
    q = Question("q", "t", ("a", "b", "z"))
    sv = ScoreVector.zeros("t", ("a", "b"))
    with pytest.raises(ValidationError):
        choice_probabilities(sv, q)


@given(st.lists(finite, min_size=2, max_size=8), st.floats(-500, 500))
def test_softmax_shift_invariance(scores, c):
    p = softmax(np.array(scores))
    q = softmax(np.array(scores) + c)
    assert np.all(p > 0)
    assert abs(p.sum() - 1) < 1e-12
    np.testing.assert_allclose(p, q, atol=1e-12)


@given(st.lists(finite, min_size=3, max_size=6))
def test_score_vector_is_centred_and_keeps_probabilities(vals):
    items = tuple(f"i{k}" for k in range(len(vals)))
    sv = ScoreVector("t", items, vals)
    assert abs(sv.values.sum()) < 1e-9 * max(1.0, np.abs(vals).max())
    q = Question("q", "t", items)
    np.testing.assert_allclose(choice_probabilities(sv, q), softmax(np.array(vals)), atol=1e-12)


def test_score_vector_rejects_non_finite():
    with pytest.raises(ValidationError):
        ScoreVector("t", ("a", "b"), [0.0, math.inf])


@st.composite
def tables(draw):
    n_items = draw(st.integers(3, 6))
    items = [f"i{k}" for k in range(n_items)]
    questions = []
    for j in range(draw(st.integers(1, 4))):
        opts = draw(st.lists(st.sampled_from(items), min_size=2, max_size=n_items, unique=True))
        questions.append(Question(f"q{j}", "t", tuple(opts)))
    records = []
    for p in range(draw(st.integers(0, 6))):
        for q in questions:
            if draw(st.booleans()):
                records.append(Response(f"p{p}", q.id, draw(st.sampled_from(q.choice_set))))
    return questions, records


@given(tables())
def test_counts_reproduce_records(data):
    questions, records = data
    t = ResponseTable.from_records(questions, records)
    for q in questions:
        for k in q.choice_set:
            assert t.count(q.id, k) == sum(1 for r in records if r.question_id == q.id and r.selected == k)
        assert t.n(q.id) == sum(t.counts[q.id])


@given(tables())
def test_round_trips(data):
    questions, records = data
    t = ResponseTable.from_records(questions, records)
    assert ResponseTable.from_dict(t.to_dict()) == t
    ds = Dataset.from_questions(questions, records, ItemUniverse.from_questions(questions))
    assert Dataset.from_dict(ds.to_dict()).to_dict() == ds.to_dict()
    for q in questions:
        assert Question.from_dict(q.to_dict()) == q


@given(st.lists(finite, min_size=3, max_size=6))
def test_score_vector_round_trip(vals):
    items = tuple(f"i{k}" for k in range(len(vals)))
    sv = ScoreVector("t", items, vals)
    assert ScoreVector.from_dict(sv.to_dict()) == sv


def test_aggregate_only_table():
    q = Question("q1", "t", ("a", "b", "c"))
    t = ResponseTable.from_counts([q], {"q1": {"a": 3, "c": 1}})
    assert t.aggregate_only
    assert t.counts["q1"] == (3, 0, 1)
    with pytest.raises(ValidationError):
        t.without_participants(["p"])


@settings(max_examples=25)
@given(tables(), st.data())
def test_without_participants_drops_only_them(data, d):
    questions, records = data
    t = ResponseTable.from_records(questions, records)
    drop = d.draw(st.sets(st.sampled_from(t.participants))) if t.participants else set()
    u = t.without_participants(drop)
    assert set(u.participants) == set(t.participants) - drop
    assert u.total == sum(1 for r in records if r.participant not in drop)
