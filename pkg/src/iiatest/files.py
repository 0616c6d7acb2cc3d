"""CSV dataset files and atomic output.

* ``questions.csv``: ``question_id,target,opt1,...,optK``; short rows leave
  trailing option cells empty.
* ``responses.csv``: ``participant_id,question_id,selected``, or the
  aggregate form ``question_id,selected,count``.
* ``ground_truth.csv``: ``target,parameter,question_id,item,value`` with
  parameter one of ``score``, ``additive``, ``multiplicative``.
"""

from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

from .core import Dataset, Question, ResponseTable, ValidationError

QUESTION_HEADER = ("question_id", "target")
RESPONSE_HEADER = ("participant_id", "question_id", "selected")
COUNT_HEADER = ("question_id", "selected", "count")
TRUTH_HEADER = ("target", "parameter", "question_id", "item", "value")


def atomic_write(path, data: str | bytes) -> None:
    """Write via a temporary file in the same directory and rename over `path`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _rows(path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise ValidationError(f"{path}: not valid UTF-8 ({e})") from None
    except OSError as e:
        raise ValidationError(f"{path}: {e.strerror}") from None
    reader = csv.reader(io.StringIO(text))
    rows = [(i + 1, [c.strip() for c in r]) for i, r in enumerate(reader)]
    rows = [(i, r) for i, r in rows if any(r)]
    if not rows:
        raise ValidationError(f"{path}: empty file, header row required")
    return rows[0][1], rows[1:]


# -- questions --------------------------------------------------------------------


def read_questions(path) -> tuple[Question, ...]:
    header, rows = _rows(path)
    if tuple(header[:2]) != QUESTION_HEADER or len(header) < 4:
        raise ValidationError(f"{path}: header must be question_id,target,opt1,opt2[,...]")
    out, seen = [], set()
    for line, r in rows:
        if len(r) > len(header):
            raise ValidationError(f"{path}:{line}: more cells than header columns")
        r = r + [""] * (len(header) - len(r))
        qid, target, opts = r[0], r[1], r[2:]
        while opts and opts[-1] == "":
            opts.pop()
        if not qid or not target:
            raise ValidationError(f"{path}:{line}: missing question id or target")
        if "" in opts:
            raise ValidationError(f"{path}:{line}: empty option cell before the last option")
        if qid in seen:
            raise ValidationError(f"{path}:{line}: duplicate question id {qid!r}")
        seen.add(qid)
        try:
            out.append(Question(qid, target, tuple(opts)))
        except ValidationError as e:
            raise ValidationError(f"{path}:{line}: {e}") from None
    if not out:
        raise ValidationError(f"{path}: no questions")
    return tuple(out)


def questions_csv(questions: Sequence[Question]) -> str:
    width = max(q.size for q in questions)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(QUESTION_HEADER) + [f"opt{i + 1}" for i in range(width)])
    for q in questions:
        w.writerow([q.id, q.target, *q.choice_set] + [""] * (width - q.size))
    return buf.getvalue()


# -- responses --------------------------------------------------------------------


def read_responses(path, questions: Sequence[Question]) -> ResponseTable:
    header, rows = _rows(path)
    by_id = {q.id: q for q in questions}
    if tuple(header) == RESPONSE_HEADER:
        records, seen = [], {}
        for line, r in rows:
            if len(r) != 3:
                raise ValidationError(f"{path}:{line}: expected 3 cells, got {len(r)}")
            pid, qid, sel = r
            q = by_id.get(qid)
            if q is None:
                raise ValidationError(f"{path}:{line}: response to unknown question id {qid!r}")
            if sel not in q.choice_set:
                raise ValidationError(f"{path}:{line}: selected {sel!r} is not in the choice-set of {qid!r}")
            if (pid, qid) in seen:
                raise ValidationError(
                    f"{path}:{line}: participant {pid!r} already answered {qid!r} on line {seen[pid, qid]}"
                )
            seen[pid, qid] = line
            records.append((pid, qid, sel))
        return ResponseTable.from_records(questions, records)
    if tuple(header) == COUNT_HEADER:
        counts: dict[str, dict[str, int]] = {}
        for line, r in rows:
            if len(r) != 3:
                raise ValidationError(f"{path}:{line}: expected 3 cells, got {len(r)}")
            qid, sel, c = r
            q = by_id.get(qid)
            if q is None:
                raise ValidationError(f"{path}:{line}: count for unknown question id {qid!r}")
            if sel not in q.choice_set:
                raise ValidationError(f"{path}:{line}: {sel!r} is not in the choice-set of {qid!r}")
            try:
                c = int(c)
            except ValueError:
                raise ValidationError(f"{path}:{line}: count {c!r} is not an integer") from None
            if c < 0:
                raise ValidationError(f"{path}:{line}: negative count")
            if sel in counts.setdefault(qid, {}):
                raise ValidationError(f"{path}:{line}: repeated count for ({qid!r}, {sel!r})")
            counts[qid][sel] = c
        return ResponseTable.from_counts(questions, counts)
    raise ValidationError(
        f"{path}: header must be {','.join(RESPONSE_HEADER)} or {','.join(COUNT_HEADER)}"
    )


def responses_csv(table: ResponseTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if table.aggregate_only:
        w.writerow(COUNT_HEADER)
        for q in table.questions:
            for k, c in zip(q.choice_set, table.counts[q.id]):
                w.writerow([q.id, k, c])
    else:
        w.writerow(RESPONSE_HEADER)
        for r in table.records:
            w.writerow(list(r))
    return buf.getvalue()


def ingest(questions_path, responses_path) -> Dataset:
    questions = read_questions(questions_path)
    table = read_responses(responses_path, questions)
    return Dataset.from_questions(questions, table)


def write_dataset(directory, dataset: Dataset) -> tuple[Path, Path]:
    d = Path(directory)
    qp, rp = d / "questions.csv", d / "responses.csv"
    atomic_write(qp, questions_csv(dataset.questions))
    atomic_write(rp, responses_csv(dataset.table()))
    return qp, rp


# -- ground truth -----------------------------------------------------------------


def truth_csv(question_sets, truths: Iterable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRUTH_HEADER)
    for qs, t in zip(question_sets, truths):
        for k, v in t.scores.as_dict().items():
            w.writerow([qs.target, "score", "", k, repr(float(v))])
        for qid, per_item in t.additive.items():
            for k, v in per_item.items():
                w.writerow([qs.target, "additive", qid, k, repr(float(v))])
        for qid, v in t.multiplicative.items():
            w.writerow([qs.target, "multiplicative", qid, "", repr(float(v))])
    return buf.getvalue()
