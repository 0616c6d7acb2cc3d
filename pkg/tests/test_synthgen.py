from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iiatest.core import Question, ValidationError
from iiatest.synthgen import (
    MixtureComponent,
    MixturePopulation,
    SynthConfig,
    gen_additive_responses,
    gen_iia_responses,
    gen_mixture_responses,
    gen_multiplicative_responses,
    generate_dataset,
    homogeneous_population,
    make_drop_one_set,
    synthetic_universe,
    two_population_mixture,
)

U = synthetic_universe(12)


@given(st.integers(0, 2**32))
@settings(max_examples=30)
def test_drop_one_structure(seed):
    qs = make_drop_one_set(seed, U, "item003")
    sizes = [q.size for q in qs.questions]
    assert sizes == [4, 3, 3, 3, 3]
    c0 = qs.questions[0].choice_set
    assert "item003" not in c0
    for i, q in enumerate(qs.questions[1:]):
        assert q.choice_set == c0[:i] + c0[i + 1 :]
    assert make_drop_one_set(seed, U, "item003") == qs


def test_drop_one_needs_five_items():
    from iiatest.core import ItemUniverse

    with pytest.raises(ValidationError):
        make_drop_one_set(0, ItemUniverse(("a", "b", "c", "d")), "a")


def _qs(seed=0):
    return make_drop_one_set(seed, U, "item000")


def test_iia_odds_ratios_match_across_questions():
    qs = _qs()
    _, truth = gen_iia_responses(qs, 2.0, 1, 7)
    p0 = np.array(truth.probabilities[qs.questions[0].id])
    p1 = np.array(truth.probabilities[qs.questions[1].id])
    np.testing.assert_allclose(p0[1:] / p0[1:].sum(), p1, atol=1e-12)


def test_zero_perturbation_reduces_to_iia():
    qs = _qs()
    t0, a = gen_iia_responses(qs, 2.0, 30, 5)
    t1, b = gen_additive_responses(qs, 2.0, 0.0, 30, 5)
    t2, c = gen_multiplicative_responses(qs, 2.0, 0.0, 30, 5)
    for q in qs.questions:
        np.testing.assert_array_equal(a.probabilities[q.id], b.probabilities[q.id])
        np.testing.assert_array_equal(a.probabilities[q.id], c.probabilities[q.id])
    assert t0 == t1 == t2


def test_full_question_is_not_perturbed():
    qs = _qs()
    _, truth = gen_additive_responses(qs, 2.0, 0.8, 5, 3)
    assert qs.questions[0].id not in truth.additive
    assert set(truth.additive) == {q.id for q in qs.questions[1:]}
    _, truth = gen_multiplicative_responses(qs, 2.0, 0.5, 5, 3)
    assert set(truth.multiplicative) == {q.id for q in qs.questions[1:]}


def test_multiplicative_keeps_ordering_for_positive_factor():
    qs = _qs(4)
    _, truth = gen_multiplicative_responses(qs, 2.0, 0.2, 1, 11)
    raw = truth.raw_scores
    for q in qs.questions[1:]:
        e = truth.multiplicative[q.id]
        if e > 0:
            order_p = np.argsort(truth.probabilities[q.id])
            order_s = np.argsort([raw[k] for k in q.choice_set])
            np.testing.assert_array_equal(order_p, order_s)


def test_small_sigma_is_near_uniform():
    qs = _qs()
    t, _ = gen_iia_responses(qs, 1e-6, 20000, 2)
    for q in qs.questions:
        f = t.count_vector(q.id) / 20000
        np.testing.assert_allclose(f, 1 / q.size, atol=0.015)


@pytest.mark.parametrize(
    "gen,args",
    [
        (gen_iia_responses, (2.0,)),
        (gen_additive_responses, (2.0, 0.6)),
        (gen_multiplicative_responses, (2.0, 0.3)),
    ],
)
def test_frequencies_within_three_standard_errors(gen, args):
    qs = _qs(9)
    n = 20000
    table, truth = gen(qs, *args, n, 123)
    assert table.total == 5 * n
    for q in qs.questions:
        p = np.array(truth.probabilities[q.id])
        f = table.count_vector(q.id) / n
        se = np.sqrt(p * (1 - p) / n)
        assert np.all(np.abs(f - p) <= 3 * se + 1e-12)


def test_generators_are_deterministic():
    cfg = SynthConfig(kind="additive", sigma_p=0.4, m=10, n=5, seed=99)
    a, ta = generate_dataset(cfg)
    b, tb = generate_dataset(cfg)
    assert a.to_dict() == b.to_dict()
    assert [t.additive for t in ta] == [t.additive for t in tb]


def test_protocol_scale():
    ds, truths = generate_dataset(SynthConfig(m=100, n=30, seed=0))
    assert ds.m == 100
    assert len(ds.questions) == 500
    assert len(ds.records) == 15000
    assert len(truths) == 100


def test_config_validation():
    with pytest.raises(ValidationError):
        SynthConfig(sigma=0)
    with pytest.raises(ValidationError):
        SynthConfig(sigma_p=-0.1)
    with pytest.raises(ValidationError):
        SynthConfig(m=0)


def test_two_population_marginals_violate_iia():
    qs, mix = two_population_mixture()
    m1 = mix.marginal(qs[0].id)
    m2 = mix.marginal(qs[1].id)
    np.testing.assert_allclose(m1, [0.245, 0.305, 0.45])
    np.testing.assert_allclose(m2, [0.55, 0.2, 0.25])
    np.testing.assert_allclose(np.round(m1, 2), [0.25, 0.3, 0.45], atol=0.011)
    np.testing.assert_allclose(np.round(m2, 2), [0.55, 0.2, 0.25], atol=0.011)
    assert abs(m1[0] / m1[1] - m2[0] / m2[1]) > 1.0


def test_mixture_marginals_match_frequencies():
    qs, mix = two_population_mixture()
    t = gen_mixture_responses(qs, mix, 20000, 1)
    for q in qs:
        p = mix.marginal(q.id)
        f = t.count_vector(q.id) / 20000
        se = np.sqrt(p * (1 - p) / 20000)
        assert np.all(np.abs(f - p) <= 4 * se + 1e-12)
    assert len(t.participants) == 20000


def test_mixture_validation():
    q = Question("x/q", "x", ("a", "b"))
    with pytest.raises(ValidationError):
        MixturePopulation((MixtureComponent(0.7, {}), MixtureComponent(0.2, {})))
    with pytest.raises(ValidationError):
        MixturePopulation((MixtureComponent(1.0, {"x/q": (0.5, 0.6)}),))
    with pytest.raises(ValidationError):
        gen_mixture_responses([q], homogeneous_population({"x/q": (0.2, 0.3, 0.5)}), 3, 0)
