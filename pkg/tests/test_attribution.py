import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import DictModel, or_subset_value, shapley_by_permutations
from rootcf.attribution import (EXACT_THRESHOLD, IDENTITY, LOG, LOGIT, SubsetValues, Transform, attribute,
                                effect_score, marginal_gain, prevalence_shift_check, shapley_exact, shapley_sampled)
from rootcf.diagnosis import EXACT, exact_model, logistic_model
from rootcf.graph import CausalGraph, ancestors
from rootcf.models import or_model, random_discrete_scm
from rootcf.scm import ErrorDistribution, Mechanism, Scm

TRANSFORMS = [IDENTITY, LOG, LOGIT]


def background_model(p, seed=0, zero=()):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=p)
    w[list(zero)] = 0.0
    return logistic_model(rng.normal(), w, background=rng.laplace(size=(256, p)), shuffle_seed=seed)


def roots_table_scm(table):
    """Three Bernoulli roots feeding a table-label D."""
    g = CausalGraph(4, [(0, 3), (1, 3), (2, 3)], diagnosis_index=3)
    return Scm(g, (Mechanism.root(),) * 3 + (Mechanism.table_label(table),),
               tuple(ErrorDistribution.bernoulli(q) for q in (0.3, 0.6, 0.5)))


class TestOrModel:
    def test_oracle_values(self):
        # the oracle itself, checked against values worked out by hand
        assert or_subset_value((1, 1), []) == Fraction(3, 4)
        assert or_subset_value((1, 1), [0]) == 1
        assert shapley_by_permutations(lambda W: float(or_subset_value((1, 1), W)), 2) == [0.125, 0.125]

    def test_closed_values(self):
        model = exact_model(or_model())
        e = (1.0, 1.0)
        res = shapley_exact(model, e, IDENTITY, EXACT)
        oracle = shapley_by_permutations(lambda W: float(or_subset_value((1, 1), W)), 2)
        np.testing.assert_allclose(res.s, oracle, atol=1e-12)
        assert res.phi_total == pytest.approx(0.25, abs=1e-12)
        assert SubsetValues(model, e, IDENTITY, EXACT)(0) == pytest.approx(0.75, abs=1e-12)
        assert effect_score(model, e, [0, 1], IDENTITY, EXACT).value == pytest.approx(0.25, abs=1e-12)

    @pytest.mark.parametrize("e", list(itertools.product((0, 1), repeat=2)))
    def test_every_patient(self, e):
        res = shapley_exact(exact_model(or_model()), e, IDENTITY, EXACT)
        oracle = shapley_by_permutations(lambda W: float(or_subset_value(e, W)), 2)
        np.testing.assert_allclose(res.s, oracle, atol=1e-12)

    def test_symmetric_coordinates_share_credit(self):
        res = shapley_exact(exact_model(or_model()), (1, 1), IDENTITY, EXACT)
        assert res.s[0] == res.s[1]


class TestExactShapley:
    @settings(max_examples=30)
    @given(st.integers(0, 10_000), st.integers(1, 5), st.sampled_from(TRANSFORMS))
    def test_matches_permutation_oracle(self, seed, p, m):
        rng = np.random.default_rng(seed)
        scm = random_discrete_scm(p, rng, label_kind="table" if seed % 2 else "logistic")
        oracle = DictModel(scm.to_dict())
        states, _ = scm.error_states()
        e = list(states[int(rng.integers(len(states)))])
        res = shapley_exact(exact_model(scm), e, m, EXACT)
        expected = shapley_by_permutations(lambda W: oracle.subset_value(e, W, m), p)
        np.testing.assert_allclose(res.s, expected, atol=1e-10)

    @settings(max_examples=40)
    @given(st.integers(0, 10_000), st.integers(1, 6), st.sampled_from(TRANSFORMS))
    def test_local_accuracy(self, seed, p, m):
        model = background_model(p, seed)
        e = np.random.default_rng(seed + 1).laplace(size=p)
        res = shapley_exact(model, e, m)
        values = SubsetValues(model, e, m)
        assert abs(res.s.sum() - (values(values.full) - values(0))) < 1e-10
        assert res.phi_total == pytest.approx(values(values.full) - values(0), abs=1e-15)

    def test_empty_set_scores_zero(self):
        model = background_model(3)
        assert effect_score(model, [0.1, 0.2, 0.3], []).value == 0.0

    def test_single_coordinate(self):
        model = background_model(1)
        res = shapley_exact(model, [1.5], LOGIT)
        assert res.s[0] == pytest.approx(res.phi_total, abs=1e-15)

    def test_effect_score_telescopes_into_gains(self):
        model = background_model(4, seed=2)
        e = [0.5, -1.0, 2.0, 0.1]
        V = [0, 2, 3]
        W = [1]
        total = 0.0
        for i in V:
            total += marginal_gain(model, e, W, i)
            W = W + [i]
        assert total == pytest.approx(effect_score(model, e, V).value, abs=1e-12)

    def test_gain_requires_new_coordinate(self):
        with pytest.raises(ValueError):
            marginal_gain(background_model(2), [0.0, 0.0], [0], 0)

    def test_missing_coordinate_scores_exactly_zero(self):
        model = background_model(5, seed=4, zero=(1, 3))
        e = np.random.default_rng(0).laplace(size=5) * 3
        for m in TRANSFORMS:
            res = shapley_exact(model, e, m)
            assert res.s[1] == 0.0 and res.s[3] == 0.0

    @settings(max_examples=30)
    @given(st.integers(0, 10_000), st.integers(2, 5))
    def test_non_ancestors_score_zero(self, seed, p):
        rng = np.random.default_rng(seed)
        scm = random_discrete_scm(p, rng, label_kind="table" if seed % 2 else "logistic")
        anc = ancestors(scm.graph, scm.graph.diagnosis_index)
        states, _ = scm.error_states()
        e = states[int(rng.integers(len(states)))]
        res = shapley_exact(exact_model(scm), e, LOGIT, EXACT)
        for j, v in enumerate(scm.coords):
            if v not in anc:
                assert abs(res.s[j]) < 1e-12

    def test_threshold(self):
        model = logistic_model(0.0, np.ones(EXACT_THRESHOLD + 1), background=np.zeros((2, EXACT_THRESHOLD + 1)))
        with pytest.raises(ValueError):
            shapley_exact(model, np.zeros(EXACT_THRESHOLD + 1))

    def test_ranking_and_root_causes(self):
        res = shapley_exact(background_model(3, seed=1), [3.0, 0.0, -3.0], LOGIT)
        assert sorted(res.ranked()) == [0, 1, 2]
        assert all(res.s[i] > 0.2 for i in res.root_causes(0.2))
        d = res.to_dict(names=["a", "b", "c"], tau=0.0)
        assert d["ranked_causes"] == [["a", "b", "c"][i] for i in res.ranked()]


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.floats(0.01, 0.5))
def test_consistency_under_raised_table_entries(seed, delta):
    rng = np.random.default_rng(seed)
    keys = list(itertools.product((0.0, 1.0), repeat=3))
    base = {k: float(rng.uniform(0.05, 0.45)) for k in keys}
    e = tuple(float(v) for v in rng.integers(0, 2, size=3))
    # raise P(D | x) wherever x agrees with the patient on coordinate 0
    raised = {k: q + delta * (k[0] == e[0]) for k, q in base.items()}
    m1 = exact_model(roots_table_scm(list(base.items())))
    m2 = exact_model(roots_table_scm(list(raised.items())))
    for W in itertools.chain.from_iterable(itertools.combinations([1, 2], r) for r in range(3)):
        assert marginal_gain(m2, e, W, 0, IDENTITY, EXACT) >= marginal_gain(m1, e, W, 0, IDENTITY, EXACT) - 1e-15
    s1 = shapley_exact(m1, e, IDENTITY, EXACT).s
    s2 = shapley_exact(m2, e, IDENTITY, EXACT).s
    assert s2[0] >= s1[0] - 1e-15


class TestSampled:
    def test_deterministic_per_seed(self):
        model = background_model(6, seed=3)
        e = np.linspace(-2, 2, 6)
        a = shapley_sampled(model, e, LOGIT, permutations=16, seed=5)
        b = shapley_sampled(model, e, LOGIT, permutations=16, seed=5)
        c = shapley_sampled(model, e, LOGIT, permutations=16, seed=6)
        assert a.s.tobytes() == b.s.tobytes()
        assert a.s.tobytes() != c.s.tobytes()

    def test_two_coordinates_exact(self):
        model = background_model(2, seed=8)
        e = [1.0, -0.5]
        for m in TRANSFORMS:
            np.testing.assert_allclose(shapley_sampled(model, e, m, permutations=2, seed=1).s,
                                       shapley_exact(model, e, m).s, atol=1e-12)

    def test_locally_accurate_after_adjustment(self):
        model = background_model(7, seed=1)
        e = np.random.default_rng(1).laplace(size=7)
        res = shapley_sampled(model, e, IDENTITY, permutations=8, seed=0)
        assert abs(res.s.sum() - res.phi_total) < 1e-12
        assert res.estimator["kind"] == "sampled" and res.estimator["permutations"] == 8

    def test_unbiased_across_seeds(self):
        scm = random_discrete_scm(5, np.random.default_rng(2), label_kind="table")
        model = exact_model(scm)
        e = scm.error_states()[0][11]
        exact = shapley_exact(model, e, IDENTITY, EXACT).s
        draws = np.array([shapley_sampled(model, e, IDENTITY, permutations=4, seed=k, sampling=EXACT).s
                          for k in range(300)])
        se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
        assert np.all(np.abs(draws.mean(axis=0) - exact) <= 4 * se + 1e-12)

    def test_error_shrinks_with_permutations(self):
        model = background_model(8, seed=6)
        e = np.random.default_rng(6).laplace(size=8) * 2
        exact = shapley_exact(model, e, IDENTITY).s
        err = [np.mean([np.max(np.abs(shapley_sampled(model, e, IDENTITY, n, seed=k).s - exact)) for k in range(10)])
               for n in (8, 512)]
        assert err[1] < err[0] / 4

    def test_dispatch(self):
        model = background_model(3)
        assert attribute(model, [0, 0, 0], estimator="sampled", permutations=4).estimator["kind"] == "sampled"
        with pytest.raises(ValueError):
            attribute(model, [0, 0, 0], estimator="kernel")


class TestPrevalence:
    @pytest.mark.parametrize("c", [-3.0, -1.0, 0.7, 3.0])
    def test_logit_invariant(self, c):
        scm = random_discrete_scm(4, np.random.default_rng(5))
        e = scm.error_states()[0][9]
        report = prevalence_shift_check(exact_model(scm), e, c, LOGIT, EXACT)
        assert report["invariance_expected"]
        assert report["max_abs_diff"] < 1e-10

    def test_identity_moves(self):
        scm = random_discrete_scm(4, np.random.default_rng(5))
        e = scm.error_states()[0][9]
        report = prevalence_shift_check(exact_model(scm), e, 1.5, IDENTITY, EXACT)
        assert not report["invariance_expected"]
        assert report["max_abs_diff"] > 1e-4


class TestTransform:
    def test_values(self):
        assert LOGIT(0.5) == 0.0
        assert LOG(1.0) == pytest.approx(np.log(1 - 1e-9))
        assert np.isfinite(LOGIT(0.0))

    @pytest.mark.parametrize("kwargs", [dict(kind="probit"), dict(eps=0.0), dict(eps=0.5)])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            Transform(**kwargs)
