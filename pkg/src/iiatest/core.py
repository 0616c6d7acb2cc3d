"""Domain model: items, similarity questions, question sets and responses.

All types are immutable after construction. Count vectors are always aligned
with the order of the owning question's choice-set.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import InitVar, dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np


class ValidationError(ValueError):
    """Raised when input data violates a structural invariant."""


@dataclass(frozen=True)
class ItemUniverse:
    items: tuple[str, ...]
    _lookup: frozenset = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        object.__setattr__(self, "_lookup", frozenset(self.items))
        if len(set(self.items)) != len(self.items):
            dupes = sorted(k for k, c in Counter(self.items).items() if c > 1)
            raise ValidationError(f"duplicate item identifiers: {dupes}")
        if len(self.items) < 3:
            raise ValidationError("an item universe needs at least 3 items")

    @property
    def size(self) -> int:
        return len(self.items)

    def __contains__(self, item) -> bool:
        return item in self._lookup

    @classmethod
    def from_questions(cls, questions: Iterable["Question"]) -> "ItemUniverse":
        """Universe of every target and option, in order of first appearance."""
        seen: dict[str, None] = {}
        for q in questions:
            seen.setdefault(q.target)
            for k in q.choice_set:
                seen.setdefault(k)
        return cls(tuple(seen))

    def to_dict(self) -> dict:
        return {"items": list(self.items)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ItemUniverse":
        return cls(tuple(d["items"]))


@dataclass(frozen=True)
class Question:
    id: str
    target: str
    choice_set: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "choice_set", tuple(self.choice_set))
        if len(self.choice_set) < 2:
            raise ValidationError(f"question {self.id!r}: choice-set needs at least 2 items")
        if self.target in self.choice_set:
            raise ValidationError(f"question {self.id!r}: target {self.target!r} is in its own choice-set")
        if len(set(self.choice_set)) != len(self.choice_set):
            raise ValidationError(f"question {self.id!r}: repeated items in choice-set")

    @property
    def size(self) -> int:
        return len(self.choice_set)

    def index(self, item: str) -> int:
        try:
            return self.choice_set.index(item)
        except ValueError:
            raise ValidationError(
                f"item {item!r} is not in the choice-set of question {self.id!r}"
            ) from None

    def check_universe(self, universe: ItemUniverse) -> None:
        missing = [k for k in (self.target, *self.choice_set) if k not in universe]
        if missing:
            raise ValidationError(f"question {self.id!r}: items {missing} not in universe")

    def to_dict(self) -> dict:
        return {"id": self.id, "target": self.target, "choice_set": list(self.choice_set)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Question":
        return cls(d["id"], d["target"], tuple(d["choice_set"]))


@dataclass(frozen=True)
class QuestionSet:
    """All questions sharing one target."""

    target: str
    questions: tuple[Question, ...]
    index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "questions", tuple(self.questions))
        if not self.questions:
            raise ValidationError(f"question set for target {self.target!r} is empty")
        for q in self.questions:
            if q.target != self.target:
                raise ValidationError(
                    f"question {q.id!r} has target {q.target!r}, expected {self.target!r}"
                )
        ids = [q.id for q in self.questions]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate question ids in set {self.target!r}")

    @property
    def items(self) -> tuple[str, ...]:
        """Items appearing in any choice-set, in order of first appearance."""
        seen: dict[str, None] = {}
        for q in self.questions:
            for k in q.choice_set:
                seen.setdefault(k)
        return tuple(seen)

    @property
    def question_ids(self) -> tuple[str, ...]:
        return tuple(q.id for q in self.questions)

    def restricted(self, keep: Iterable[str]) -> "QuestionSet":
        """Drop items not in `keep` from every choice-set.

        Questions left with fewer than two options are removed; they carry
        no information about relative scores.
        """
        keep = set(keep)
        out = []
        for q in self.questions:
            cs = tuple(k for k in q.choice_set if k in keep)
            if len(cs) >= 2:
                out.append(Question(q.id, q.target, cs))
        if not out:
            raise ValidationError(f"set {self.target!r}: no question keeps two options")
        return QuestionSet(self.target, tuple(out), self.index)

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "index": self.index,
            "questions": [q.to_dict() for q in self.questions],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "QuestionSet":
        return cls(d["target"], tuple(Question.from_dict(q) for q in d["questions"]), d["index"])


class Response(NamedTuple):
    participant: str
    question_id: str
    selected: str


@dataclass(frozen=True, eq=False)
class ResponseTable:
    """Choice counts per question, optionally with the raw per-participant records.

    ``counts`` maps question id to a tuple aligned with that question's
    choice-set. Use :meth:`from_records` or :meth:`from_counts` to build one.
    """

    questions: tuple[Question, ...]
    counts: Mapping[str, tuple[int, ...]]
    records: tuple[Response, ...] | None = None
    _by_id: Mapping[str, Question] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "questions", tuple(self.questions))
        by_id = {q.id: q for q in self.questions}
        if len(by_id) != len(self.questions):
            raise ValidationError("duplicate question ids in response table")
        object.__setattr__(self, "_by_id", MappingProxyType(by_id))
        counts = {}
        for qid, q in by_id.items():
            c = tuple(int(x) for x in self.counts.get(qid, (0,) * q.size))
            if len(c) != q.size:
                raise ValidationError(f"question {qid!r}: {len(c)} counts for {q.size} options")
            if any(x < 0 for x in c):
                raise ValidationError(f"question {qid!r}: negative count")
            counts[qid] = c
        unknown = set(self.counts) - set(by_id)
        if unknown:
            raise ValidationError(f"counts for unknown questions: {sorted(unknown)}")
        object.__setattr__(self, "counts", MappingProxyType(counts))
        if self.records is not None:
            object.__setattr__(self, "records", tuple(Response(*r) for r in self.records))
            if _aggregate(self.questions, self.records, by_id) != counts:
                raise ValidationError("counts do not match the aggregation of records")

    @classmethod
    def from_records(
        cls, questions: Sequence[Question], records: Iterable[Sequence[str]]
    ) -> "ResponseTable":
        questions = tuple(questions)
        by_id = {q.id: q for q in questions}
        records = tuple(Response(*r) for r in records)
        seen = set()
        for i, r in enumerate(records):
            q = by_id.get(r.question_id)
            if q is None:
                raise ValidationError(f"record {i} {tuple(r)}: unknown question id {r.question_id!r}")
            if r.selected not in q.choice_set:
                raise ValidationError(
                    f"record {i} {tuple(r)}: selected item not in choice-set {q.choice_set}"
                )
            key = (r.participant, r.question_id)
            if key in seen:
                raise ValidationError(f"record {i} {tuple(r)}: participant answered question twice")
            seen.add(key)
        return cls(questions, _aggregate(questions, records, by_id), records)

    @classmethod
    def from_counts(
        cls, questions: Sequence[Question], counts: Mapping[str, Sequence[int] | Mapping[str, int]]
    ) -> "ResponseTable":
        """Aggregate-only table. Counts may be sequences or item->count maps."""
        questions = tuple(questions)
        by_id = {q.id: q for q in questions}
        out = {}
        for qid, c in counts.items():
            if qid not in by_id:
                raise ValidationError(f"counts for unknown question id {qid!r}")
            if isinstance(c, Mapping):
                q = by_id[qid]
                for k in c:
                    q.index(k)
                out[qid] = tuple(int(c.get(k, 0)) for k in q.choice_set)
            else:
                out[qid] = tuple(int(x) for x in c)
        return cls(questions, out, None)

    @property
    def aggregate_only(self) -> bool:
        return self.records is None

    def question(self, qid: str) -> Question:
        return self._by_id[qid]

    def count(self, qid: str, item: str) -> int:
        return self.counts[qid][self._by_id[qid].index(item)]

    def count_vector(self, qid: str) -> np.ndarray:
        return np.asarray(self.counts[qid], dtype=np.int64)

    def n(self, qid: str) -> int:
        return sum(self.counts[qid])

    @property
    def total(self) -> int:
        return sum(sum(c) for c in self.counts.values())

    @property
    def participants(self) -> tuple[str, ...]:
        if self.records is None:
            return ()
        return tuple(dict.fromkeys(r.participant for r in self.records))

    def subset(self, questions: Sequence[Question]) -> "ResponseTable":
        """Table restricted to `questions` (which may have reduced choice-sets)."""
        counts = {}
        for q in questions:
            orig = self._by_id[q.id]
            full = self.counts[q.id]
            counts[q.id] = tuple(full[orig.index(k)] for k in q.choice_set)
        if self.records is None:
            return ResponseTable(tuple(questions), counts, None)
        by_id = {q.id: q for q in questions}
        recs = tuple(
            r for r in self.records if r.question_id in by_id and r.selected in by_id[r.question_id].choice_set
        )
        return ResponseTable(tuple(questions), counts, recs)

    def without_participants(self, drop: Iterable[str]) -> "ResponseTable":
        if self.records is None:
            raise ValidationError("aggregate-only table has no participant records")
        drop = set(drop)
        return ResponseTable.from_records(
            self.questions, [r for r in self.records if r.participant not in drop]
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, ResponseTable):
            return NotImplemented
        return (
            self.questions == other.questions
            and dict(self.counts) == dict(other.counts)
            and self.records == other.records
        )

    def to_dict(self) -> dict:
        d = {
            "questions": [q.to_dict() for q in self.questions],
            "counts": {k: list(v) for k, v in self.counts.items()},
        }
        if self.records is not None:
            d["records"] = [list(r) for r in self.records]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ResponseTable":
        qs = tuple(Question.from_dict(q) for q in d["questions"])
        if "records" in d:
            return cls.from_records(qs, d["records"])
        return cls(qs, {k: tuple(v) for k, v in d["counts"].items()})


def _aggregate(questions, records, by_id) -> dict[str, tuple[int, ...]]:
    tallies = {q.id: [0] * q.size for q in questions}
    for r in records:
        q = by_id[r.question_id]
        tallies[q.id][q.index(r.selected)] += 1
    return {k: tuple(v) for k, v in tallies.items()}


@dataclass(frozen=True, eq=False)
class ScoreVector:
    """Per-target similarity scores, stored centered so they sum to zero."""

    target: str
    items: tuple[str, ...]
    values: np.ndarray
    center: InitVar[bool] = True
    _index: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self, center):
        object.__setattr__(self, "items", tuple(self.items))
        object.__setattr__(self, "_index", {k: i for i, k in enumerate(self.items)})
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.shape[0] != len(self.items):
            raise ValidationError("score vector length does not match its items")
        if len(set(self.items)) != len(self.items):
            raise ValidationError("duplicate items in score vector")
        if not np.all(np.isfinite(v)):
            raise ValidationError("score vector entries must be finite")
        if center and v.size:
            v = v - v.mean()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_mapping(cls, target: str, scores: Mapping[str, float]) -> "ScoreVector":
        return cls(target, tuple(scores), np.fromiter(scores.values(), float, len(scores)))

    @classmethod
    def zeros(cls, target: str, items: Sequence[str]) -> "ScoreVector":
        return cls(target, tuple(items), np.zeros(len(items)))

    def __getitem__(self, item: str) -> float:
        return float(self.values[self._index[item]])

    def as_dict(self) -> dict[str, float]:
        return {k: float(v) for k, v in zip(self.items, self.values)}

    def lookup(self, items: Sequence[str]) -> np.ndarray:
        idx = self._index
        missing = [k for k in items if k not in idx]
        if missing:
            raise ValidationError(f"no score for items {missing} (target {self.target!r})")
        return self.values[[idx[k] for k in items]]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ScoreVector):
            return NotImplemented
        return (
            self.target == other.target
            and self.items == other.items
            and np.array_equal(self.values, other.values)
        )

    def to_dict(self) -> dict:
        return {"target": self.target, "scores": self.as_dict()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScoreVector":
        # stored values are already centred; re-centring would perturb the last bits
        sc = d["scores"]
        return cls(d["target"], tuple(sc), np.fromiter(sc.values(), float, len(sc)), center=False)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-subtracted softmax; ``-inf`` entries get probability zero."""
    logits = np.asarray(logits, dtype=float)
    m = np.max(logits, axis=axis, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=axis, keepdims=True)


def choice_probabilities(scores: ScoreVector, question: Question) -> np.ndarray:
    """BTL probabilities ``exp(s_k) / sum_{k' in C_Q} exp(s_k')`` over the choice-set."""
    return softmax(scores.lookup(question.choice_set))


def build_question_sets(
    questions: Sequence[Question],
    responses: ResponseTable | Iterable[Sequence[str]],
    universe: ItemUniverse | None = None,
) -> list[tuple[QuestionSet, ResponseTable]]:
    """Partition questions by target and route responses to their set.

    Sets are ordered by target identifier. `responses` is either a
    ResponseTable over `questions` or an iterable of
    ``(participant, question_id, selected)`` records.
    """
    questions = tuple(questions)
    if universe is None:
        universe = ItemUniverse.from_questions(questions)
    for q in questions:
        q.check_universe(universe)
    table = (
        responses
        if isinstance(responses, ResponseTable)
        else ResponseTable.from_records(questions, responses)
    )
    if set(table.counts) != {q.id for q in questions}:
        raise ValidationError("response table does not cover the question list")

    groups: dict[str, list[Question]] = {}
    for q in questions:
        groups.setdefault(q.target, []).append(q)
    out = []
    for i, target in enumerate(sorted(groups)):
        qs = QuestionSet(target, tuple(groups[target]), i)
        out.append((qs, table.subset(qs.questions)))
    return out


@dataclass(frozen=True)
class Dataset:
    """Question sets with their responses over one item universe."""

    universe: ItemUniverse
    question_sets: tuple[QuestionSet, ...]
    tables: tuple[ResponseTable, ...]

    def __post_init__(self):
        object.__setattr__(self, "question_sets", tuple(self.question_sets))
        object.__setattr__(self, "tables", tuple(self.tables))
        if len(self.question_sets) != len(self.tables):
            raise ValidationError("one response table per question set required")

    @classmethod
    def from_questions(
        cls,
        questions: Sequence[Question],
        responses: ResponseTable | Iterable[Sequence[str]],
        universe: ItemUniverse | None = None,
    ) -> "Dataset":
        questions = tuple(questions)
        if not questions:
            raise ValidationError("dataset has no questions")
        universe = universe or ItemUniverse.from_questions(questions)
        pairs = build_question_sets(questions, responses, universe)
        return cls(universe, tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))

    @property
    def m(self) -> int:
        return len(self.question_sets)

    @property
    def questions(self) -> tuple[Question, ...]:
        return tuple(q for qs in self.question_sets for q in qs.questions)

    @property
    def aggregate_only(self) -> bool:
        return any(t.aggregate_only for t in self.tables)

    @property
    def records(self) -> tuple[Response, ...]:
        if self.aggregate_only:
            raise ValidationError("dataset has no per-participant records")
        return tuple(r for t in self.tables for r in t.records)

    def table(self) -> ResponseTable:
        """All responses as one table over every question."""
        if self.aggregate_only:
            counts = {k: v for t in self.tables for k, v in t.counts.items()}
            return ResponseTable(self.questions, counts, None)
        return ResponseTable.from_records(self.questions, self.records)

    def __iter__(self):
        return iter(zip(self.question_sets, self.tables))

    def to_dict(self) -> dict:
        return {
            "universe": self.universe.to_dict(),
            "question_sets": [s.to_dict() for s in self.question_sets],
            "tables": [t.to_dict() for t in self.tables],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Dataset":
        return cls(
            ItemUniverse.from_dict(d["universe"]),
            tuple(QuestionSet.from_dict(s) for s in d["question_sets"]),
            tuple(ResponseTable.from_dict(t) for t in d["tables"]),
        )
