"""Maximum-likelihood BTL scores for one question set.

Plain full-batch gradient ascent from ``s = 0`` with a fixed learning rate,
stopping once the log-likelihood improves by less than a tolerance. Items
that no participant ever selected are dropped first so the optimum is finite.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import QuestionSet, ResponseTable, ScoreVector, ValidationError

log = logging.getLogger(__name__)


class MleError(RuntimeError):
    pass


@dataclass(frozen=True)
class MleConfig:
    learning_rate: float = 0.005
    improvement_tol: float = 1e-4
    max_iters: int = 100_000

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.improvement_tol > 0 and self.max_iters > 0):
            raise ValidationError("MLE settings must be positive")


@dataclass(frozen=True, eq=False)
class MleResult:
    score_vector: ScoreVector
    final_log_likelihood: float
    iterations: int
    excluded_items: tuple[str, ...]
    converged: bool
    trace: np.ndarray
    question_set: QuestionSet
    table: ResponseTable


class Design:
    """Padded index/count arrays for a question set over a fixed item order."""

    def __init__(self, question_set: QuestionSet, table: ResponseTable, items=None):
        self.items = tuple(items) if items is not None else question_set.items
        pos = {k: i for i, k in enumerate(self.items)}
        qs = question_set.questions
        width = max(q.size for q in qs)
        self.idx = np.full((len(qs), width), -1, dtype=np.int64)
        self.counts = np.zeros((len(qs), width))
        for r, q in enumerate(qs):
            missing = [k for k in q.choice_set if k not in pos]
            if missing:
                raise ValidationError(f"no score for items {missing} in question {q.id!r}")
            self.idx[r, : q.size] = [pos[k] for k in q.choice_set]
            self.counts[r, : q.size] = table.counts[q.id]
        self.mask = self.idx >= 0
        self.n = self.counts.sum(axis=1)
        self._safe_idx = np.where(self.mask, self.idx, 0)

    def log_probs(self, s: np.ndarray) -> np.ndarray:
        logits = np.where(self.mask, s[self._safe_idx], -np.inf)
        m = logits.max(axis=1, keepdims=True)
        lse = m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))
        return logits - lse

    def probs(self, s: np.ndarray) -> np.ndarray:
        return np.exp(self.log_probs(s))

    def log_likelihood(self, s: np.ndarray) -> float:
        lp = self.log_probs(s)
        return float(np.sum(self.counts[self.mask] * lp[self.mask]))

    def gradient(self, s: np.ndarray) -> np.ndarray:
        resid = self.counts - self.n[:, None] * self.probs(s)
        return np.bincount(self.idx[self.mask], weights=resid[self.mask], minlength=len(self.items))


def _design(question_set, table, scores: ScoreVector) -> tuple[Design, np.ndarray]:
    d = Design(question_set, table)
    return d, scores.lookup(d.items)


def log_likelihood(question_set: QuestionSet, table: ResponseTable, scores: ScoreVector) -> float:
    """``sum_Q sum_k a_Qk log pi_Qk(s)``."""
    d, s = _design(question_set, table, scores)
    return d.log_likelihood(s)


def log_likelihood_gradient(question_set: QuestionSet, table: ResponseTable, scores: ScoreVector) -> dict[str, float]:
    """Gradient ``sum_{Q: k in C_Q} (a_Qk - n_Q pi_Qk)`` keyed by item."""
    d, s = _design(question_set, table, scores)
    return dict(zip(d.items, d.gradient(s).tolist()))


def chosen_items(question_set: QuestionSet, table: ResponseTable) -> tuple[list[str], list[str]]:
    """Split the set's items into (ever selected, never selected)."""
    totals = dict.fromkeys(question_set.items, 0)
    for q in question_set.questions:
        for k, c in zip(q.choice_set, table.counts[q.id]):
            totals[k] += c
    kept = [k for k, c in totals.items() if c > 0]
    return kept, [k for k, c in totals.items() if c == 0]


def fit_mle(
    question_set: QuestionSet,
    table: ResponseTable,
    config: MleConfig = MleConfig(),
    init: np.ndarray | float | None = None,
) -> MleResult:
    if table.total == 0:
        raise MleError(f"set {question_set.target!r} has no responses")
    kept, excluded = chosen_items(question_set, table)
    qs = question_set.restricted(kept)
    sub = table.subset(qs.questions)
    d = Design(qs, sub)

    s = np.zeros(len(d.items)) if init is None else np.broadcast_to(init, len(d.items)).astype(float)
    lr = config.learning_rate
    ll = d.log_likelihood(s)
    trace = [ll]
    converged = False
    it = 0
    while it < config.max_iters:
        it += 1
        step = s + lr * d.gradient(s)
        ll_new = d.log_likelihood(step)
        if not np.isfinite(ll_new):
            raise MleError(f"non-finite log-likelihood at iteration {it} (set {question_set.target!r})")
        if ll_new < ll - 1e-12:
            # overshoot: shrink the rate and retry from the same point
            lr *= 0.5
            log.debug("set %s: halving learning rate to %g", question_set.target, lr)
            continue
        s = step
        improvement = ll_new - ll
        ll = ll_new
        trace.append(ll)
        if improvement < config.improvement_tol:
            converged = True
            break
    if not converged:
        log.warning("MLE for set %r hit max_iters=%d", question_set.target, config.max_iters)
    return MleResult(
        score_vector=ScoreVector(qs.target, d.items, s),
        final_log_likelihood=ll,
        iterations=it,
        excluded_items=tuple(excluded),
        converged=converged,
        trace=np.asarray(trace),
        question_set=qs,
        table=sub,
    )
