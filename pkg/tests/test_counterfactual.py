import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import ks_2samp

from oracles import DictModel, or_prob
from rootcf.counterfactual import (Action, BacktrackingKernel, CounterfactualQuery, backtracking_counterfactual,
                                   do_submodel, interventional_counterfactual, verify_equivalence, verify_patient)
from rootcf.errors import InconsistentEvidenceError, KernelValidationError, UnsupportedModelError
from rootcf.graph import CausalGraph
from rootcf.models import figure1_scm, or_model, random_discrete_scm
from rootcf.scm import ErrorDistribution, Mechanism, Scm

D_OR = 2


def chain():
    g = CausalGraph(2, [(0, 1)])
    return Scm(g, (Mechanism.root(), Mechanism.linear((0.8,))),
               (ErrorDistribution.laplace(0, 1), ErrorDistribution.laplace(0, 1)))


class TestActions:
    def test_point_action_fixes_value(self):
        sub = do_submodel(chain(), Action.point({0: 0.0}))
        x = sub.push_forward(np.array([[3.0, 1.0], [-2.0, 0.5]]))
        np.testing.assert_array_equal(x[:, 0], [0.0, 0.0])
        np.testing.assert_allclose(x[:, 1], [1.0, 0.5])

    def test_empty_action_rejected(self):
        with pytest.raises(ValueError):
            Action.copy([])

    def test_target_out_of_range(self):
        with pytest.raises(IndexError):
            do_submodel(chain(), Action.copy([5]))

    def test_non_finite_point(self):
        with pytest.raises(ValueError):
            Action.point({0: float("nan")})

    def test_stochastic_copy_keeps_marginal(self):
        scm = chain()
        q = CounterfactualQuery((0,), errors=(2.5, 0.0), action=Action.copy([0]))
        dist = interventional_counterfactual(scm, q, samples=20000, seed=3)
        draws = np.repeat([o[0] for o in dist.outcomes], np.round(dist.weights * 20000).astype(int))
        reference = scm.error_dists[0].sample(np.random.default_rng(99), 20000)
        assert ks_2samp(draws, reference).pvalue > 1e-3
        assert dist.stderr is not None and np.all(np.isfinite(dist.stderr))


class TestInterventional:
    def test_full_evidence_no_action_is_point_mass(self):
        scm = figure1_scm()
        e = (0.5, -1.0, 0.25, 2.0)
        dist = interventional_counterfactual(scm, CounterfactualQuery((0, 1, 2, 3), errors=e))
        assert len(dist.outcomes) == 1 and dist.total() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(dist.outcomes[0], scm.push_forward(e))

    def test_observed_continuous_evidence_inverts(self):
        scm = figure1_scm()
        x = scm.push_forward([0.5, -1.0, 0.25, 2.0])
        q = CounterfactualQuery((4,), observed={v: x[v] for v in range(4)})
        p1 = interventional_counterfactual(scm, q).marginal(4, 1)
        assert p1 == pytest.approx(scm.label_proba(x), abs=1e-12)

    def test_partial_continuous_evidence_unsupported(self):
        with pytest.raises(UnsupportedModelError):
            interventional_counterfactual(figure1_scm(), CounterfactualQuery((4,), observed={0: 1.0}))

    def test_zero_probability_evidence(self):
        with pytest.raises(InconsistentEvidenceError):
            interventional_counterfactual(or_model(), CounterfactualQuery((D_OR,), observed={0: 0.5}))
        with pytest.raises(InconsistentEvidenceError):
            interventional_counterfactual(or_model(), CounterfactualQuery((D_OR,), errors=(2.0, 0.0)))

    def test_evidence_on_diagnosis_unsupported(self):
        with pytest.raises(UnsupportedModelError):
            interventional_counterfactual(or_model(), CounterfactualQuery((0,), observed={D_OR: 1.0}))

    def test_or_model_copy_second(self):
        q = CounterfactualQuery((D_OR,), errors=(1.0, 1.0), action=Action.copy([1]))
        assert interventional_counterfactual(or_model(), q).marginal(D_OR, 1) == 1.0

    def test_or_model_copy_both(self):
        q = CounterfactualQuery((D_OR,), errors=(0.0, 0.0), action=Action.copy([0, 1]))
        dist = interventional_counterfactual(or_model(), q)
        assert dist.marginal(D_OR, 1) == 0.75
        assert dist.total() == pytest.approx(1.0, abs=1e-12)

    def test_joint_targets_normalised(self):
        rng = np.random.default_rng(4)
        scm = random_discrete_scm(4, rng)
        x = scm.push_forward(scm.error_states()[0][3])
        q = CounterfactualQuery(tuple(range(5)), observed={0: x[0]}, action=Action.copy([1, 2]))
        assert abs(interventional_counterfactual(scm, q).total() - 1.0) < 1e-12


def symmetric(a):
    return np.array([[1 - a, a], [a, 1 - a]])


class TestKernels:
    def test_symmetry_violation(self):
        with pytest.raises(KernelValidationError) as info:
            BacktrackingKernel.from_tables([(0, 1)], [np.array([[0.8, 0.2], [0.1, 0.9]])])
        assert info.value.desideratum == "symmetry"

    def test_closeness_violation(self):
        with pytest.raises(KernelValidationError) as info:
            BacktrackingKernel.from_tables([(0, 1)], [symmetric(0.6)])
        assert info.value.desideratum == "closeness"

    def test_closeness_tie_rejected(self):
        with pytest.raises(KernelValidationError) as info:
            BacktrackingKernel.from_tables([(0, 1)], [symmetric(0.5)])
        assert info.value.desideratum == "closeness"

    def test_decomposability_violation(self):
        # e* copies e jointly with probability 0.7, otherwise both coordinates flip together
        joint = np.zeros((4, 4))
        for r in range(4):
            joint[r, r] = 0.7
            joint[r, 3 - r] = 0.3
        with pytest.raises(KernelValidationError) as info:
            BacktrackingKernel.from_joint([(0, 1), (0, 1)], joint)
        assert info.value.desideratum == "decomposability"

    def test_product_joint_accepted(self):
        joint = np.kron(symmetric(0.1), symmetric(0.2))
        k = BacktrackingKernel.from_joint([(0, 1), (0, 1)], joint)
        np.testing.assert_allclose(k.tables[0], symmetric(0.1))
        np.testing.assert_allclose(k.tables[1], symmetric(0.2))


class TestBacktracking:
    def test_degenerate_equals_factual(self):
        scm = figure1_scm()
        e = (1.0, -0.5, 0.2, 0.3)
        dist = backtracking_counterfactual(scm, BacktrackingKernel.degenerate(), factual_errors=e)
        assert dist.marginal(4, 1) == pytest.approx(float(scm.proba_from_errors(e)), abs=1e-15)

    def test_table_kernel_matches_hand_enumeration(self):
        rng = np.random.default_rng(12)
        scm = random_discrete_scm(3, rng, edge_prob=0.6)
        tables = [symmetric(0.1), symmetric(0.25), symmetric(0.05)]
        kernel = BacktrackingKernel.from_tables([(0, 1)] * 3, tables)
        states, _ = scm.error_states()
        x_obs = scm.push_forward(states[5])
        z = {0: x_obs[0]}
        got = backtracking_counterfactual(scm, kernel, z=z).marginal(3, 1)

        oracle = DictModel(scm.to_dict())
        num = den = 0.0
        for e in itertools.product((0.0, 1.0), repeat=3):
            pe = np.prod([dict(oracle.errors[c])[e[c]] for c in range(3)])
            if abs(oracle._x(list(e))[0] - z[0]) > 1e-9:
                continue
            for es in itertools.product((0.0, 1.0), repeat=3):
                w = pe * np.prod([tables[c][int(e[c]), int(es[c])] for c in range(3)])
                num += w * oracle.prob(list(es))
                den += w
        assert got == pytest.approx(num / den, abs=1e-12)
        dist = backtracking_counterfactual(scm, kernel, z=z, targets=(0, 1, 3))
        assert abs(dist.total() - 1.0) < 1e-12

    def test_inconsistent_joint_evidence(self):
        with pytest.raises(InconsistentEvidenceError):
            backtracking_counterfactual(or_model(), BacktrackingKernel.degenerate(), v_star={0: 1.0},
                                        factual_errors=(0.0, 0.0))

    def test_continuous_needs_degenerate(self):
        kernel = BacktrackingKernel.from_tables([(0, 1)] * 4, [symmetric(0.1)] * 4)
        with pytest.raises(UnsupportedModelError):
            backtracking_counterfactual(figure1_scm(), kernel, z={0: 1.0})


class TestEquivalence:
    def test_or_model_examples(self):
        scm = or_model()
        r = verify_equivalence(scm, (1, 1), [1])
        assert r["lhs5"] == r["rhs5"] == 1.0
        r = verify_equivalence(scm, (0, 0), [0, 1])
        assert r["rhs5"] == 0.75 and r["lhs4"] == 0.0
        assert r["max_abs_diff"] < 1e-12

    def test_or_model_against_hand_values(self):
        scm = or_model()
        for e in itertools.product((0, 1), repeat=2):
            r = verify_equivalence(scm, e, [])
            assert r["lhs4"] == or_prob(*e)
            assert r["rhs5"] == r["lhs4"]

    def test_continuous_rejected(self):
        with pytest.raises(UnsupportedModelError):
            verify_equivalence(figure1_scm(), (0, 0, 0, 0), [0])

    @settings(max_examples=25)
    @given(st.integers(0, 100_000), st.integers(2, 5), st.sampled_from(["logistic", "table"]))
    def test_identities_on_random_models(self, seed, p, label_kind):
        rng = np.random.default_rng(seed)
        scm = random_discrete_scm(p, rng, label_kind=label_kind)
        states, probs = scm.error_states()
        e = states[int(rng.integers(len(states)))]
        report = verify_patient(scm, e)
        assert report["pass"], report["max_abs_diff"]
        assert report["eq4"]["diff"] < 1e-12
