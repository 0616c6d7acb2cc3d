"""Classical goodness-of-fit test for IIA and multi-set aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import QuestionSet, ResponseTable, ScoreVector, ValidationError
from .mle import Design, MleConfig, MleResult, fit_mle


class UntestableError(ValidationError):
    """The question set has no degrees of freedom left after fitting."""


@dataclass(frozen=True)
class GftResult:
    statistic: float
    dof: int
    p_value: float
    target: str = ""
    mle: MleResult | None = None


@dataclass(frozen=True)
class AggregateResult:
    method: str
    p_values: tuple[float, ...]
    aggregate_p: float
    alpha: float | None = None
    corrected_alpha: float | None = None
    statistic: float | None = None
    dof: int | None = None

    @property
    def m(self) -> int:
        return len(self.p_values)

    def reject(self, alpha: float | None = None) -> bool:
        if self.method == "min_bonferroni":
            thr = self.corrected_alpha if alpha is None else alpha / self.m
            return self.aggregate_p < thr
        return self.aggregate_p < (0.05 if alpha is None else alpha)


def pearson_statistic(counts: np.ndarray, expected: np.ndarray) -> float:
    """``sum (E - a)^2 / E`` over cells; all expected counts must be positive."""
    if np.any(expected <= 0):
        raise ValidationError("zero expected count in chi-squared statistic")
    return float(np.sum((expected - counts) ** 2 / expected))


def chi2_statistic(question_set: QuestionSet, table: ResponseTable, scores: ScoreVector) -> float:
    """Pearson statistic of observed counts against BTL expectations ``n_Q pi_Qk(s)``.

    Questions without responses contribute no cells.
    """
    d = Design(question_set, table, scores.items)
    s = scores.values
    probs = d.probs(s)
    live = d.mask & (d.n[:, None] > 0)
    expected = d.n[:, None] * probs
    if np.any(expected[live] <= 0):
        raise ValidationError(
            f"set {question_set.target!r}: zero expected count; exclude never-chosen items first"
        )
    return pearson_statistic(d.counts[live], expected[live])


def degrees_of_freedom(question_set: QuestionSet, effective_item_count: int, table: ResponseTable | None = None) -> int:
    """``sum_Q (|C_Q| - 1) - (items - 1)``; raises UntestableError when below one.

    With `table`, questions nobody answered are not counted.
    """
    qs = question_set.questions
    if table is not None:
        qs = [q for q in qs if table.n(q.id) > 0]
    nu = sum(q.size - 1 for q in qs) - (effective_item_count - 1)
    if nu < 1:
        raise UntestableError(f"set {question_set.target!r} has {nu} degrees of freedom")
    return nu


# -- regularized incomplete gamma -------------------------------------------

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000


def _gamma_p_series(a: float, x: float) -> float:
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_cf(a: float, x: float) -> float:
    # modified Lentz on the continued fraction for Gamma(a, x)
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gamma_q(a: float, x: float) -> float:
    """Upper regularized incomplete gamma ``Q(a, x)``."""
    if x < 0 or a <= 0:
        raise ValueError("gamma_q needs a > 0 and x >= 0")
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return 1.0 - _gamma_p_series(a, x)
    return _gamma_q_cf(a, x)


def gamma_p(a: float, x: float) -> float:
    """Lower regularized incomplete gamma ``P(a, x)``."""
    if x < 0 or a <= 0:
        raise ValueError("gamma_p needs a > 0 and x >= 0")
    if x == 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return _gamma_p_series(a, x)
    return 1.0 - _gamma_q_cf(a, x)


def chi2_sf(x: float, dof: float) -> float:
    """Upper tail ``P(X >= x)`` for ``X ~ chi2_dof``."""
    if x < 0:
        raise ValueError("chi2_sf needs x >= 0")
    return gamma_q(dof / 2.0, x / 2.0)


def chi2_cdf(x: float, dof: float) -> float:
    if x < 0:
        raise ValueError("chi2_cdf needs x >= 0")
    return gamma_p(dof / 2.0, x / 2.0)


# -- tests ------------------------------------------------------------------


def gft(question_set: QuestionSet, table: ResponseTable, mle_config: MleConfig = MleConfig()) -> GftResult:
    """Fit the BTL MLE and test it with the Pearson statistic."""
    fit = fit_mle(question_set, table, mle_config)
    dof = degrees_of_freedom(fit.question_set, len(fit.score_vector.items), fit.table)
    stat = chi2_statistic(fit.question_set, fit.table, fit.score_vector)
    return GftResult(stat, dof, chi2_sf(stat, dof), question_set.target, fit)


def aggregate_min(p_values: Sequence[float], alpha: float = 0.05) -> AggregateResult:
    """Minimum p-value against the Bonferroni threshold ``alpha / m``."""
    p = tuple(float(x) for x in p_values)
    if not p:
        raise ValidationError("no p-values to aggregate")
    return AggregateResult(
        "min_bonferroni", p, min(p), alpha=alpha, corrected_alpha=alpha / len(p)
    )


def aggregate_sum(results: Sequence[GftResult]) -> AggregateResult:
    """Sum of per-set statistics tested against chi2 with summed degrees of freedom."""
    if not results:
        raise ValidationError("no results to aggregate")
    stat = math.fsum(r.statistic for r in results)
    dof = sum(r.dof for r in results)
    return AggregateResult(
        "sum", tuple(r.p_value for r in results), chi2_sf(stat, dof), statistic=stat, dof=dof
    )


def rejection_curve(p_values: Sequence[float], alphas: Sequence[float]) -> np.ndarray:
    """Number of p-values strictly below each threshold."""
    p = np.sort(np.asarray(p_values, float))
    if p.size == 0:
        raise ValidationError("no p-values")
    return np.searchsorted(p, np.asarray(alphas, float), side="left")
