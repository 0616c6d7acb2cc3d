"""Posterior predictive checks for IIA and for population homogeneity.

The exceedance fraction counts ties, ``p = mean(T_rep >= T_obs)``, so a
statistic that ignores the data yields ``p = 1``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import rng as _rng
from .bayes.draws import PosteriorDraws
from .bayes.models import ChoiceModel
from .bayes.nuts import SamplerError
from .core import Dataset, Question, ResponseTable, ScoreVector, ValidationError, choice_probabilities
from .stats import AggregateResult, aggregate_min

log = logging.getLogger(__name__)

MIN_DRAWS = 100
MAX_DIVERGENCE_RATE = 0.01
_FLOOR = 1e-300


@dataclass(frozen=True, eq=False)
class PpcResult:
    """Observed and replicated statistic traces, one entry per posterior draw."""

    observed: np.ndarray
    replicated: np.ndarray
    label: str = ""

    def __post_init__(self):
        obs = np.asarray(self.observed, float)
        rep = np.asarray(self.replicated, float)
        if obs.shape != rep.shape or obs.ndim != 1 or obs.size == 0:
            raise ValidationError("observed and replicated traces must be equal-length 1-D arrays")
        obs.setflags(write=False)
        rep.setflags(write=False)
        object.__setattr__(self, "observed", obs)
        object.__setattr__(self, "replicated", rep)

    @property
    def n_draws(self) -> int:
        return self.observed.size

    @property
    def indicator(self) -> np.ndarray:
        return self.replicated >= self.observed

    @property
    def p_value(self) -> float:
        return float(np.mean(self.indicator))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["draw", "T_obs", "T_rep", "indicator"])
        for i, (o, r, e) in enumerate(zip(self.observed, self.replicated, self.indicator)):
            w.writerow([i, repr(float(o)), repr(float(r)), int(e)])
        return buf.getvalue()


def _thetas(draws) -> np.ndarray:
    if isinstance(draws, PosteriorDraws):
        return draws.pooled()
    x = np.asarray(draws, float)
    return x if x.ndim == 2 else x.reshape(x.shape[0], -1)


def _check_draws(n: int, min_draws: int) -> None:
    if n < min_draws:
        raise ValidationError(f"posterior predictive check needs at least {min_draws} draws, got {n}")


def check_divergences(draws: PosteriorDraws, max_rate: float = MAX_DIVERGENCE_RATE) -> None:
    """Raise SamplerError when the divergent-transition rate exceeds `max_rate`."""
    rate = draws.divergence_rate
    if rate > max_rate:
        raise SamplerError(
            f"{draws.divergences} divergent transitions ({rate:.2%}) exceed the {max_rate:.0%} limit"
        )


def ppc_pvalue(
    draws,
    observed,
    statistic: Callable[[object, np.ndarray], float],
    replicator: Callable[[np.ndarray, np.random.Generator], object],
    seed=0,
    min_draws: int = MIN_DRAWS,
    label: str = "",
) -> PpcResult:
    """Generic check: for each draw, replicate data and compare ``T(y, theta)``.

    `statistic(y, theta)` returns a float; `replicator(theta, gen)` returns a
    replicate of the same form as `observed`. Draw ``i`` uses its own
    replication substream.
    """
    thetas = _thetas(draws)
    _check_draws(thetas.shape[0], min_draws)
    obs = np.empty(thetas.shape[0])
    rep = np.empty(thetas.shape[0])
    for i, th in enumerate(thetas):
        y = replicator(th, _rng.generator(seed, _rng.REPLICATION, i))
        obs[i] = statistic(observed, th)
        rep[i] = statistic(y, th)
    return PpcResult(obs, rep, label)


# -- IIA discrepancy ------------------------------------------------------------


def iia_discrepancy(dataset: Dataset, scores: Sequence[ScoreVector] | Mapping[str, ScoreVector]) -> float:
    """Pearson discrepancy of observed counts against the given scores, summed over sets.

    Unlike the classical test nothing is refitted: `scores` is any parameter
    value, e.g. one posterior draw. Probabilities are floored at 1e-300.
    """
    if not isinstance(scores, Mapping):
        scores = {s.target: s for s in scores}
    total = 0.0
    for qs, table in dataset:
        sv = scores.get(qs.target)
        if sv is None:
            raise ValidationError(f"no scores for question set {qs.target!r}")
        for q in qs.questions:
            n = table.n(q.id)
            if n == 0:
                continue
            p = choice_probabilities(sv, q)
            if np.any(p < _FLOOR):
                log.warning("question %s: choice probability underflow, clamped at %g", q.id, _FLOOR)
                p = np.maximum(p, _FLOOR)
            e = n * p
            a = table.count_vector(q.id)
            total += float(np.sum((e - a) ** 2 / e))
    return total


@dataclass(frozen=True, eq=False)
class IiaPpc:
    """Per-set traces of the discrepancy from one shared posterior."""

    targets: tuple[str, ...]
    observed: np.ndarray  # (draws, sets)
    replicated: np.ndarray

    @property
    def m(self) -> int:
        return len(self.targets)

    def per_set(self) -> list[PpcResult]:
        return [PpcResult(self.observed[:, i], self.replicated[:, i], t) for i, t in enumerate(self.targets)]

    @property
    def p_values(self) -> np.ndarray:
        return np.mean(self.replicated >= self.observed, axis=0)

    def sum_result(self) -> PpcResult:
        return ppc_sum_aggregate(self.per_set())

    def min_aggregate(self, alpha: float = 0.05) -> AggregateResult:
        return ppc_min_aggregate(self.per_set(), alpha)


def _discrepancy_rows(counts, n, probs, mask, floor_warned):
    # counts (Q, W); probs (..., Q, W)
    live = mask & (n[:, None] > 0)
    if not floor_warned[0] and np.any(live & (probs < _FLOOR)):
        log.warning("choice probability underflow in discrepancy, clamped at %g", _FLOOR)
        floor_warned[0] = True
    e = n[:, None] * np.maximum(probs, _FLOOR)
    cells = np.where(live, (e - counts) ** 2 / e, 0.0)
    return cells.sum(axis=-1)


def iia_ppc(
    draws,
    model: ChoiceModel,
    seed=0,
    min_draws: int = MIN_DRAWS,
    chunk: int = 256,
) -> IiaPpc:
    """Per-set posterior predictive traces of the discrepancy.

    Replicates follow the fitted model's likelihood (perturbations included)
    with the observed trial counts ``n_Q``; draw ``i`` replicates from
    substream ``(seed, REPLICATION, i)``.
    """
    thetas = _thetas(draws)
    if thetas.shape[1] != model.dim:
        raise ValidationError(f"draws have dimension {thetas.shape[1]}, model expects {model.dim}")
    _check_draws(thetas.shape[0], min_draws)
    n_draws = thetas.shape[0]
    counts, n, mask = model.counts, model.n, model.mask
    n_int = n.astype(np.int64)
    q_per_set = np.array([len(qs.questions) for qs in model.dataset.question_sets])
    starts = np.concatenate([[0], np.cumsum(q_per_set)[:-1]])
    obs = np.empty((n_draws, len(q_per_set)))
    rep = np.empty_like(obs)
    warned = [False]
    for lo in range(0, n_draws, chunk):
        hi = min(lo + chunk, n_draws)
        probs = np.exp(model.question_log_probs(thetas[lo:hi]))
        y = np.empty_like(probs)
        for i in range(hi - lo):
            gen = _rng.generator(seed, _rng.REPLICATION, lo + i)
            pv = probs[i] / probs[i].sum(axis=-1, keepdims=True)
            y[i] = gen.multinomial(n_int, pv)
        d_obs = _discrepancy_rows(counts, n, probs, mask, warned)
        d_rep = _discrepancy_rows(y, n, probs, mask, warned)
        obs[lo:hi] = np.add.reduceat(d_obs, starts, axis=1)
        rep[lo:hi] = np.add.reduceat(d_rep, starts, axis=1)
    targets = tuple(qs.target for qs in model.dataset.question_sets)
    return IiaPpc(targets, obs, rep)


def ppc_min_aggregate(results: Sequence[PpcResult], alpha: float = 0.05) -> AggregateResult:
    """Bonferroni-corrected minimum over per-set posterior predictive p-values."""
    if not results:
        raise ValidationError("no per-set results to aggregate")
    return aggregate_min([r.p_value for r in results], alpha)


def ppc_sum_aggregate(results: Sequence[PpcResult], label: str = "sum") -> PpcResult:
    """One check on the summed statistic; every result must share the same draws."""
    if not results:
        raise ValidationError("no per-set results to aggregate")
    n = results[0].n_draws
    if any(r.n_draws != n for r in results):
        raise ValidationError("per-set traces have different lengths")
    obs = np.sum([r.observed for r in results], axis=0)
    rep = np.sum([r.replicated for r in results], axis=0)
    return PpcResult(obs, rep, label)


# -- homogeneity ----------------------------------------------------------------


def information_content(
    records: Iterable[Sequence[str]],
    probabilities: Mapping[str, Sequence[float]],
    questions: Sequence[Question],
    smoothing: float = 0.0,
) -> dict[str, float]:
    """``I_p = -sum_Q log pi_{Q, r_pQ}`` per participant, in nats.

    `probabilities` maps question id to a vector aligned with the choice-set.
    With ``smoothing > 0`` each vector becomes ``(pi + smoothing) / (1 + K smoothing)``.
    """
    by_id = {q.id: q for q in questions}
    out: dict[str, float] = {}
    for r in records:
        pid, qid, sel = r
        q = by_id[qid]
        p = np.asarray(probabilities[qid], float)
        if smoothing > 0:
            p = (p + smoothing) / (1.0 + q.size * smoothing)
        pk = p[q.index(sel)]
        if pk <= 0:
            raise ValidationError(
                f"participant {pid!r} selected {sel!r} in {qid!r}, which has zero probability; enable smoothing"
            )
        out[pid] = out.get(pid, 0.0) - math.log(pk)
    return out


@dataclass(frozen=True)
class HomogeneityConfig:
    """`mode` is ``"dirichlet"`` (posterior draws per question) or ``"plugin"`` (empirical proportions)."""

    mode: str = "dirichlet"
    n_draws: int = 1000
    smoothing: float = 0.0
    outlier_quantile: float = 0.99
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("dirichlet", "plugin"):
            raise ValidationError(f"unknown homogeneity mode {self.mode!r}")
        if self.n_draws < 1:
            raise ValidationError("n_draws must be positive")
        if self.smoothing < 0:
            raise ValidationError("smoothing must be non-negative")
        if not 0 < self.outlier_quantile < 1:
            raise ValidationError("outlier_quantile must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class HomogeneityResult:
    participants: tuple[str, ...]
    information: np.ndarray  # observed I_p under the point estimate
    statistic: float  # max - min of `information`
    ppc: PpcResult
    outliers: tuple[str, ...]
    information_draws: np.ndarray = field(repr=False)  # observed I_p per draw, (draws, participants)
    threshold: np.ndarray = field(repr=False)  # replicate quantile per participant

    @property
    def p_value(self) -> float:
        return self.ppc.p_value

    def information_map(self) -> dict[str, float]:
        return dict(zip(self.participants, map(float, self.information)))


def _records_table(data) -> ResponseTable:
    if isinstance(data, Dataset):
        if data.aggregate_only:
            raise ValidationError("homogeneity test needs per-participant records")
        return data.table()
    if isinstance(data, ResponseTable):
        if data.aggregate_only:
            raise ValidationError("homogeneity test needs per-participant records")
        return data
    raise ValidationError("expected a Dataset or ResponseTable")


def homogeneity_test(data, config: HomogeneityConfig = HomogeneityConfig(), exclude: Iterable[str] = ()) -> HomogeneityResult:
    """Check whether all participants share one set of choice distributions.

    ``T = max_p I_p - min_p I_p``. Each replicate redraws every participant's
    answers to their own questions from the per-question distributions of
    that draw. Participants in `exclude` are dropped before anything else.
    """
    table = _records_table(data)
    exclude = set(exclude)
    if exclude:
        table = table.without_participants(exclude)
    questions = [q for q in table.questions if table.n(q.id) > 0]
    if not questions:
        raise ValidationError("no answered questions")
    participants = table.participants
    if len(participants) < 2:
        raise ValidationError("homogeneity test needs at least two participants")
    q_pos = {q.id: i for i, q in enumerate(questions)}
    p_pos = {p: i for i, p in enumerate(participants)}
    width = max(q.size for q in questions)
    n_q = len(questions)
    counts = np.zeros((n_q, width))
    mask = np.zeros((n_q, width), bool)
    for i, q in enumerate(questions):
        counts[i, : q.size] = table.counts[q.id]
        mask[i, : q.size] = True
    rec = [r for r in table.records if r.question_id in q_pos]
    r_q = np.array([q_pos[r.question_id] for r in rec])
    r_p = np.array([p_pos[r.participant] for r in rec])
    r_c = np.array([questions[q_pos[r.question_id]].index(r.selected) for r in rec])
    n_p = len(participants)

    def _smooth(pi):
        if config.smoothing > 0:
            k = mask.sum(axis=1)[:, None]
            pi = np.where(mask, (pi + config.smoothing) / (1.0 + k * config.smoothing), 0.0)
        return pi

    def _info(pi, choice):
        return np.bincount(r_p, weights=-np.log(pi[r_q, choice]), minlength=n_p)

    point = _smooth(counts / counts.sum(axis=1, keepdims=True))
    with np.errstate(divide="ignore"):
        info_point = _info(point, r_c)
    if not np.all(np.isfinite(info_point)):
        raise ValidationError("a selected item has zero estimated probability; enable smoothing")

    n_draws = config.n_draws
    obs_info = np.empty((n_draws, n_p))
    rep_info = np.empty((n_draws, n_p))
    for i in range(n_draws):
        gen = _rng.generator(config.seed, _rng.REPLICATION, "homogeneity", i)
        if config.mode == "dirichlet":
            g = np.where(mask, gen.standard_gamma(np.where(mask, 1.0 + counts, 1.0)), 0.0)
            pi = _smooth(g / g.sum(axis=1, keepdims=True))
        else:
            pi = point
        # inverse-CDF draw; the last column absorbs rounding
        cum = np.cumsum(pi, axis=1)
        cum[:, -1] = np.inf
        u = gen.random(len(rec))
        choice = (cum[r_q] <= u[:, None]).sum(axis=1)
        choice = np.minimum(choice, mask[r_q].sum(axis=1) - 1)
        with np.errstate(divide="ignore"):
            obs_info[i] = _info(pi, r_c)
            rep_info[i] = _info(pi, choice)
    if not np.all(np.isfinite(obs_info)):
        raise ValidationError("a selected item has zero probability under a draw; enable smoothing")
    t_obs = obs_info.max(axis=1) - obs_info.min(axis=1)
    t_rep = rep_info.max(axis=1) - rep_info.min(axis=1)
    threshold = np.quantile(rep_info, config.outlier_quantile, axis=0)
    flagged = obs_info.mean(axis=0) > threshold
    return HomogeneityResult(
        participants=participants,
        information=info_point,
        statistic=float(info_point.max() - info_point.min()),
        ppc=PpcResult(t_obs, t_rep, "homogeneity"),
        outliers=tuple(p for p, f in zip(participants, flagged) if f),
        information_draws=obs_info,
        threshold=threshold,
    )
