from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from iiatest.core import Question, QuestionSet, ResponseTable, ScoreVector, ValidationError
from iiatest.mle import fit_mle
from iiatest.stats import (
    GftResult,
    UntestableError,
    aggregate_min,
    aggregate_sum,
    chi2_cdf,
    chi2_sf,
    chi2_statistic,
    degrees_of_freedom,
    gamma_p,
    gamma_q,
    gft,
    pearson_statistic,
    rejection_curve,
)
from iiatest.synthgen import SynthConfig, generate_dataset

# 40-digit reference values of Q(nu/2, x/2)
FROZEN = {
    (3.841, 1): 0.050013683763956699076,
    (8.0, 8): 0.43347012036670893362,
    (16.0, 16): 0.45296080948699448545,
    (50.0, 1): 1.5374597944280348502e-12,
    (50.0, 30): 0.012402060718900579954,
    (23.5, 11): 0.015014005133985037796,
    (0.001, 2): 0.99950012497916927056,
    (100.0, 5): 5.2851483609432400564e-20,
}

X_GRID = (0.1, 0.5) + tuple(float(k) for k in range(1, 51))
NU_GRID = tuple(range(1, 31))


def _density(t, nu):
    return math.exp((nu / 2 - 1) * math.log(t) - t / 2 - (nu / 2) * math.log(2) - math.lgamma(nu / 2))


def quad_sf(x, nu):
    """Upper tail by adaptive quadrature of the density."""
    val, _ = integrate.quad(_density, x, np.inf, args=(nu,), epsabs=1e-14, epsrel=1e-12, limit=200)
    return val


def oracle_gap():
    return max(abs(chi2_sf(x, nu) - quad_sf(x, nu)) for x in X_GRID for nu in NU_GRID)


def test_sf_matches_quadrature_grid():
    assert oracle_gap() < 1e-8


@pytest.mark.parametrize("key", sorted(FROZEN))
def test_sf_frozen_values(key):
    x, nu = key
    assert chi2_sf(x, nu) == pytest.approx(FROZEN[key], rel=1e-10, abs=1e-300)


def test_five_percent_point():
    assert abs(chi2_sf(3.841, 1) - 0.05) < 5e-4


@given(st.floats(0.01, 200), st.floats(0, 400))
def test_gamma_complement(a, x):
    assert abs(gamma_p(a, x) + gamma_q(a, x) - 1.0) < 1e-12


@given(st.integers(1, 60), st.floats(0, 100), st.floats(0, 100))
def test_sf_monotone(nu, x, y):
    lo, hi = sorted((x, y))
    assert chi2_sf(lo, nu) >= chi2_sf(hi, nu) - 1e-15
    assert 0.0 <= chi2_sf(hi, nu) <= 1.0
    assert chi2_cdf(hi, nu) == pytest.approx(1 - chi2_sf(hi, nu), abs=1e-12)


def test_sf_domain():
    assert chi2_sf(0.0, 3) == 1.0
    assert chi2_sf(math.inf, 3) == 0.0
    with pytest.raises(ValueError):
        chi2_sf(-1.0, 3)


def _drop_one():
    c = ("a", "b", "c", "d")
    qs = [Question("q0", "t", c)] + [Question(f"q{i + 1}", "t", c[:i] + c[i + 1 :]) for i in range(4)]
    return QuestionSet("t", tuple(qs))


def test_drop_one_degrees_of_freedom():
    qs = _drop_one()
    assert degrees_of_freedom(qs, 4) == 8


def test_single_question_is_untestable():
    qs = QuestionSet("t", (Question("q", "t", ("a", "b", "c")),))
    with pytest.raises(UntestableError):
        degrees_of_freedom(qs, 3)


def test_unanswered_questions_do_not_count():
    qs = _drop_one()
    counts = {q.id: (5,) * q.size for q in qs.questions}
    counts["q4"] = (0, 0, 0)
    t = ResponseTable.from_counts(qs.questions, counts)
    assert degrees_of_freedom(qs, 4, t) == 6
    r = gft(qs, t)
    assert r.dof == 6


def test_statistic_sums_sixteen_cells_on_drop_one():
    qs = _drop_one()
    rng = np.random.default_rng(1)
    t = ResponseTable.from_counts(qs.questions, {q.id: rng.integers(1, 9, q.size) for q in qs.questions})
    sv = ScoreVector("t", ("a", "b", "c", "d"), [0.3, -0.2, 1.0, 0.1])
    cells = []
    for q in qs.questions:
        w = np.exp([sv[k] for k in q.choice_set])
        e = t.n(q.id) * w / w.sum()
        cells.extend((e - t.count_vector(q.id)) ** 2 / e)
    assert len(cells) == 16
    assert chi2_statistic(qs, t, sv) == pytest.approx(sum(cells), rel=1e-12)


def test_statistic_by_hand():
    q = Question("q", "t", ("a", "b"))
    qs = QuestionSet("t", (q, Question("r", "t", ("a", "b"))))
    t = ResponseTable.from_counts(qs.questions, {"q": (3, 1), "r": (0, 0)})
    sv = ScoreVector.zeros("t", ("a", "b"))
    assert chi2_statistic(qs, t, sv) == pytest.approx((2 - 3) ** 2 / 2 + (2 - 1) ** 2 / 2)


def test_zero_expected_count_raises():
    with pytest.raises(ValidationError):
        pearson_statistic(np.array([1.0, 0.0]), np.array([1.0, 0.0]))


def test_saturated_model_has_zero_statistic():
    q = Question("q", "t", ("a", "b", "c"))
    qs = QuestionSet("t", (q,))
    t = ResponseTable.from_counts([q], {"q": (30, 50, 20)})
    from iiatest.mle import MleConfig

    fit = fit_mle(qs, t, MleConfig(improvement_tol=1e-12))
    assert chi2_statistic(fit.question_set, fit.table, fit.score_vector) < 1e-6


def test_aggregate_min_single_and_bonferroni():
    one = aggregate_min([0.03], 0.05)
    assert one.aggregate_p == 0.03 and one.corrected_alpha == 0.05 and one.reject()
    many = aggregate_min([0.03, 0.2, 0.5, 0.9], 0.05)
    assert many.corrected_alpha == pytest.approx(0.0125)
    assert not many.reject()
    with pytest.raises(ValidationError):
        aggregate_min([])


def test_aggregate_sum_adds_statistics_and_dof():
    rs = [GftResult(8.0, 8, chi2_sf(8.0, 8)), GftResult(16.0, 8, chi2_sf(16.0, 8))]
    agg = aggregate_sum(rs)
    assert agg.statistic == 24.0 and agg.dof == 16
    assert agg.aggregate_p == pytest.approx(chi2_sf(24.0, 16))
    single = aggregate_sum(rs[:1])
    assert single.aggregate_p == rs[0].p_value


@given(st.lists(st.floats(0, 1), min_size=1, max_size=50), st.lists(st.floats(0, 1), min_size=1, max_size=10))
def test_rejection_curve_counts(p, alphas):
    alphas = sorted(alphas)
    c = rejection_curve(p, alphas)
    assert np.all(np.diff(c) >= 0)
    for a, k in zip(alphas, c):
        assert k == sum(1 for x in p if x < a)


def _null_p_values(rep):
    ds, _ = generate_dataset(SynthConfig(m=100, n=30, seed=10_000 + rep))
    out = []
    for qs, t in ds:
        try:
            out.append(gft(qs, t).p_value)
        except UntestableError:
            pass
    return np.array(out)


def _ks(p):
    p = np.sort(p)
    n = p.size
    i = np.arange(1, n + 1)
    return max(np.max(i / n - p), np.max(p - (i - 1) / n))


def test_null_p_values_close_to_uniform():
    ks = [_ks(_null_p_values(r)) for r in range(30)]
    assert np.mean(ks) < 0.15
    curves = np.array([rejection_curve(_null_p_values(r), [0.1, 0.3, 0.5]) / 100 for r in range(5)])
    assert np.all(np.abs(curves.mean(axis=0) - [0.1, 0.3, 0.5]) < 0.15)
