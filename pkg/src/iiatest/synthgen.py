"""Synthetic similarity-choice data.

Generators draw from three choice models over drop-one question sets:

* IIA compliant: ``pi_Qk ∝ exp(s_k)`` with ``s_k ~ N(0, sigma^2)``
* additive perturbation: ``pi_Qk ∝ exp(s_k + eps_Qk)``, ``eps_Qk ~ N(0, sigma_p^2)``
* multiplicative perturbation: ``pi_Qk ∝ exp(s_k * eps_Q)``, ``eps_Q ~ N(1, sigma_m^2)``

plus finite mixtures of homogeneous populations. The full-choice-set question
(``Q0`` in a drop-one set) is never perturbed. Scores, perturbations and
responses use separate substreams, so a zero perturbation scale reproduces
the IIA generator exactly for the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import rng as _rng
from .core import (
    Dataset,
    ItemUniverse,
    Question,
    QuestionSet,
    Response,
    ResponseTable,
    ScoreVector,
    ValidationError,
    softmax,
)

KINDS = ("iia", "additive", "multiplicative")


@dataclass(frozen=True)
class SynthConfig:
    sigma: float = 2.0
    sigma_p: float = 0.0
    sigma_m: float = 0.0
    m: int = 100
    n: int = 30
    seed: int = 0
    kind: str = "iia"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValidationError("sigma must be positive")
        if self.sigma_p < 0 or self.sigma_m < 0:
            raise ValidationError("perturbation scales must be non-negative")
        if self.m < 1 or self.n < 1:
            raise ValidationError("m and n must be at least 1")
        if self.kind not in KINDS:
            raise ValidationError(f"kind must be one of {KINDS}")

    @property
    def perturbation(self) -> float:
        return {"iia": 0.0, "additive": self.sigma_p, "multiplicative": self.sigma_m}[self.kind]


@dataclass(frozen=True)
class GroundTruth:
    """Parameters a synthetic table was drawn from."""

    scores: ScoreVector
    raw_scores: Mapping[str, float]
    probabilities: Mapping[str, tuple[float, ...]]
    additive: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    multiplicative: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class MixtureComponent:
    weight: float
    probabilities: Mapping[str, tuple[float, ...]]


@dataclass(frozen=True)
class MixturePopulation:
    components: tuple[MixtureComponent, ...]

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        w = np.array([c.weight for c in self.components])
        if len(w) == 0 or np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
            raise ValidationError("mixture weights must be non-negative and sum to 1")
        for c in self.components:
            for qid, p in c.probabilities.items():
                p = np.asarray(p, float)
                if np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
                    raise ValidationError(f"component vector for {qid!r} is not a distribution")

    def marginal(self, qid: str) -> np.ndarray:
        return sum(c.weight * np.asarray(c.probabilities[qid], float) for c in self.components)


def make_drop_one_set(seed, universe: ItemUniverse, target: str, index: int = 0) -> QuestionSet:
    """One 4-option question plus the four 3-option questions dropping one option each."""
    if universe.size < 5:
        raise ValidationError("drop-one sets need a universe of at least 5 items")
    if target not in universe:
        raise ValidationError(f"target {target!r} not in universe")
    pool = [k for k in universe.items if k != target]
    gen = _rng.generator(seed)
    chosen = tuple(pool[i] for i in gen.choice(len(pool), size=4, replace=False))
    qs = [Question(f"{target}/q0", target, chosen)]
    for i in range(4):
        qs.append(Question(f"{target}/q{i + 1}", target, chosen[:i] + chosen[i + 1 :]))
    return QuestionSet(target, tuple(qs), index)


def synthetic_universe(m: int) -> ItemUniverse:
    return ItemUniverse(tuple(f"item{j:03d}" for j in range(max(m, 5))))


def _full_questions(question_set: QuestionSet) -> set[str]:
    items = set(question_set.items)
    return {q.id for q in question_set.questions if set(q.choice_set) == items}


def _draw_scores(question_set: QuestionSet, sigma: float, seed) -> dict[str, float]:
    items = question_set.items
    z = _rng.generator(seed, "scores").standard_normal(len(items))
    return dict(zip(items, sigma * z))


def _respond(question_set, probabilities, n, seed) -> ResponseTable:
    gen = _rng.generator(seed, "responses")
    records = []
    for q in question_set.questions:
        picks = gen.choice(q.size, size=n, p=probabilities[q.id])
        records.extend(
            Response(_participant(j), q.id, q.choice_set[k]) for j, k in enumerate(picks)
        )
    return ResponseTable.from_records(question_set.questions, records)


def _participant(j: int) -> str:
    return f"p{j:04d}"


def _truth(question_set, raw, probs, **extra) -> GroundTruth:
    return GroundTruth(
        scores=ScoreVector.from_mapping(question_set.target, raw),
        raw_scores=raw,
        probabilities={k: tuple(float(x) for x in v) for k, v in probs.items()},
        **extra,
    )


def gen_iia_responses(question_set: QuestionSet, sigma: float, n: int, seed):
    """Responses from the IIA-compliant model. Returns ``(table, truth)``."""
    if n < 1:
        raise ValidationError("n must be at least 1")
    raw = _draw_scores(question_set, sigma, seed)
    probs = {
        q.id: softmax([raw[k] for k in q.choice_set]) for q in question_set.questions
    }
    return _respond(question_set, probs, n, seed), _truth(question_set, raw, probs)


def gen_additive_responses(question_set: QuestionSet, sigma: float, sigma_p: float, n: int, seed):
    """Responses with per-(question, item) additive score noise. Returns ``(table, truth)``."""
    if n < 1:
        raise ValidationError("n must be at least 1")
    raw = _draw_scores(question_set, sigma, seed)
    items = question_set.items
    gen = _rng.generator(seed, "perturbation")
    full = _full_questions(question_set)
    probs, eps = {}, {}
    for q in question_set.questions:
        # one draw per set item keeps streams aligned across topologies
        e = sigma_p * gen.standard_normal(len(items))
        if q.id in full:
            e = np.zeros_like(e)
        else:
            eps[q.id] = {k: float(e[items.index(k)]) for k in q.choice_set}
        probs[q.id] = softmax([raw[k] + e[items.index(k)] for k in q.choice_set])
    table = _respond(question_set, probs, n, seed)
    return table, _truth(question_set, raw, probs, additive=eps)


def gen_multiplicative_responses(question_set: QuestionSet, sigma: float, sigma_m: float, n: int, seed):
    """Responses with one multiplicative score factor per question. Returns ``(table, truth)``."""
    if n < 1:
        raise ValidationError("n must be at least 1")
    raw = _draw_scores(question_set, sigma, seed)
    gen = _rng.generator(seed, "perturbation")
    full = _full_questions(question_set)
    probs, eps = {}, {}
    for q in question_set.questions:
        e = 1.0 + sigma_m * gen.standard_normal()
        if q.id in full:
            e = 1.0
        else:
            eps[q.id] = float(e)
        probs[q.id] = softmax([raw[k] * e for k in q.choice_set])
    table = _respond(question_set, probs, n, seed)
    return table, _truth(question_set, raw, probs, multiplicative=eps)


def gen_mixture_responses(questions: Sequence[Question], mixture: MixturePopulation, n: int, seed) -> ResponseTable:
    """`n` participants, each assigned a component by weight, answering every question."""
    questions = tuple(questions)
    for c in mixture.components:
        for q in questions:
            p = c.probabilities.get(q.id)
            if p is None or len(p) != q.size:
                raise ValidationError(f"mixture component does not cover question {q.id!r}")
    gen = _rng.generator(seed, "mixture")
    weights = np.array([c.weight for c in mixture.components])
    assign = gen.choice(len(weights), size=n, p=weights)
    records = []
    for j, comp in enumerate(assign):
        probs = mixture.components[comp].probabilities
        for q in questions:
            k = gen.choice(q.size, p=np.asarray(probs[q.id], float))
            records.append(Response(_participant(j), q.id, q.choice_set[k]))
    return ResponseTable.from_records(questions, records)


MIXTURE_P1 = ((0.4, 0.6, 0.0), (0.2, 0.3, 0.5))
MIXTURE_P2 = ((0.09, 0.01, 0.9), (0.9, 0.1, 0.0))


def two_population_mixture(copies: int = 1, weights=(0.5, 0.5)):
    """Two IIA-compliant populations whose equal mixture violates IIA.

    Each copy is one target with questions ``(a, b, c)`` and ``(a, b, d)``.
    Returns ``(questions, mixture)``.
    """
    questions, p1, p2 = [], {}, {}
    for i in range(copies):
        t, a, b, c, d = (f"t{i}", f"a{i}", f"b{i}", f"c{i}", f"d{i}")
        q1, q2 = Question(f"{t}/abc", t, (a, b, c)), Question(f"{t}/abd", t, (a, b, d))
        questions += [q1, q2]
        p1[q1.id], p1[q2.id] = MIXTURE_P1
        p2[q1.id], p2[q2.id] = MIXTURE_P2
    mix = MixturePopulation(
        (MixtureComponent(weights[0], p1), MixtureComponent(weights[1], p2))
    )
    return tuple(questions), mix


def homogeneous_population(probabilities: Mapping[str, Sequence[float]]) -> MixturePopulation:
    return MixturePopulation(
        (MixtureComponent(1.0, {k: tuple(v) for k, v in probabilities.items()}),)
    )


def plant_outlier(table: ResponseTable, population: MixturePopulation, participant: str) -> ResponseTable:
    """Replace `participant`'s answers by the least likely option of every question.

    Uses the first mixture component; the participant answers every question
    of `table`.
    """
    probs = population.components[0].probabilities
    records = [r for r in table.records if r.participant != participant]
    for q in table.questions:
        k = int(np.argmin(np.asarray(probs[q.id], float)))
        records.append(Response(participant, q.id, q.choice_set[k]))
    return ResponseTable.from_records(table.questions, records)


def generate_dataset(config: SynthConfig, universe: ItemUniverse | None = None):
    """`config.m` independent drop-one sets with responses.

    Returns ``(dataset, truths)`` with one GroundTruth per set in set order.
    """
    universe = universe or synthetic_universe(config.m)
    if config.m > universe.size:
        raise ValidationError("more question sets than available targets")
    questions, records, truths = [], [], []
    for i, target in enumerate(universe.items[: config.m]):
        sub = _rng.seed_sequence(config.seed, _rng.GENERATION, i)
        qs = make_drop_one_set(_rng.seed_sequence(sub, "topology"), universe, target, i)
        if config.kind == "iia":
            table, truth = gen_iia_responses(qs, config.sigma, config.n, sub)
        elif config.kind == "additive":
            table, truth = gen_additive_responses(qs, config.sigma, config.sigma_p, config.n, sub)
        else:
            table, truth = gen_multiplicative_responses(qs, config.sigma, config.sigma_m, config.n, sub)
        questions.extend(qs.questions)
        records.extend(table.records)
        truths.append(truth)
    dataset = Dataset.from_questions(questions, records, universe)
    # sets come back sorted by target; synthetic targets are already sorted
    return dataset, tuple(truths)
