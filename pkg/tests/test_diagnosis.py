import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit
from scipy.stats import ks_2samp

from oracles import DictModel
from rootcf.diagnosis import (BACKGROUND, EXACT, DiagnosisModel, Sampling, conditional_expectation, exact_model,
                              fit_logistic, logistic_model, predict_proba)
from rootcf.errors import ConvergenceError, DegenerateLabelError, UnsupportedModelError
from rootcf.models import figure1_scm, or_model, random_discrete_scm


class TestPrediction:
    def test_zero_weights_give_half(self):
        model = logistic_model(0.0, np.zeros(3))
        np.testing.assert_array_equal(predict_proba(model, np.random.default_rng(0).normal(size=(5, 3))), 0.5)

    def test_logistic_formula(self):
        model = logistic_model(-0.5, [1.0, 2.0])
        assert predict_proba(model, [0.3, -0.1]) == pytest.approx(expit(-0.5 + 0.3 - 0.2))

    def test_or_model_predictions(self):
        model = exact_model(or_model())
        np.testing.assert_array_equal(predict_proba(model, [[0, 0], [0, 1], [1, 0], [1, 1]]), [0, 1, 1, 1])

    def test_wrong_width(self):
        with pytest.raises(ValueError):
            predict_proba(logistic_model(0.0, [1.0, 1.0]), [1.0, 2.0, 3.0])

    def test_shift_moves_log_odds(self):
        model = logistic_model(0.2, [1.0])
        assert predict_proba(model.shifted(0.7), [0.1]) == pytest.approx(expit(1.0))


class TestConditionalExpectation:
    def test_or_model_values(self):
        model = exact_model(or_model())
        assert conditional_expectation(model, [1, 1], [], EXACT) == 0.75
        assert conditional_expectation(model, [0, 0], [0], EXACT) == 0.5
        assert conditional_expectation(model, [1, 0], [0], EXACT) == 1.0
        assert conditional_expectation(model, [1, 0], [0, 1], EXACT) == 1.0

    @pytest.mark.parametrize("seed", range(5))
    def test_exact_against_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        scm = random_discrete_scm(4, rng, label_kind="table" if seed % 2 else "logistic")
        oracle = DictModel(scm.to_dict())
        model = exact_model(scm)
        states, _ = scm.error_states()
        e = states[int(rng.integers(len(states)))]
        for r in range(5):
            for W in itertools.combinations(range(4), r):
                got = conditional_expectation(model, e, W, EXACT)
                assert got == pytest.approx(oracle.subset_value(list(e), set(W)), abs=1e-12)

    def test_exact_needs_synthetic_model(self):
        with pytest.raises(UnsupportedModelError):
            conditional_expectation(logistic_model(0, [1, 1], background=np.zeros((3, 2))), [0, 0], [0], EXACT)

    def test_exact_needs_discrete_errors(self):
        with pytest.raises(UnsupportedModelError):
            conditional_expectation(exact_model(figure1_scm()), [0, 0, 0, 0], [0], EXACT)

    def test_full_set_is_prediction(self):
        model = logistic_model(0.1, [1.0, -1.0], background=np.zeros((4, 2)))
        assert conditional_expectation(model, [0.5, 0.2], [0, 1]) == pytest.approx(float(predict_proba(model, [0.5, 0.2])))

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            conditional_expectation(exact_model(or_model()), [0, 0], [2], EXACT)

    def test_monte_carlo_within_three_se(self):
        scm = random_discrete_scm(5, np.random.default_rng(3))
        model = exact_model(scm)
        e = scm.error_states()[0][7]
        for W in ([], [0], [1, 3]):
            exact = conditional_expectation(model, e, W, EXACT)
            mc, se = conditional_expectation(model, e, W, Sampling.monte_carlo(20000, seed=5), return_stderr=True)
            assert abs(mc - exact) < 3 * se + 1e-12

    def test_monte_carlo_on_fitted_model_uses_background(self):
        rng = np.random.default_rng(0)
        bg = rng.normal(size=(500, 2))
        model = logistic_model(0.0, [1.0, 1.0], background=bg)
        mc = conditional_expectation(model, [0.0, 0.0], [0], Sampling.monte_carlo(50000, 1))
        ref = float(np.mean(expit(bg[:, 1])))
        assert mc == pytest.approx(ref, abs=0.01)

    def test_background_design_keeps_column_marginals(self):
        rng = np.random.default_rng(2)
        bg = rng.laplace(size=(2000, 3))
        model = logistic_model(0.0, [1.0, 1.0, 1.0], background=bg, shuffle_seed=4)
        design = model.design
        for j in range(3):
            np.testing.assert_array_equal(np.sort(design[:, j]), np.sort(bg[:, j]))
            assert ks_2samp(design[:, j], bg[:, j]).pvalue > 0.5
        # columns are shuffled independently, so the rows are not the original rows
        assert not np.array_equal(design, bg)

    @settings(max_examples=20)
    @given(st.integers(0, 10_000), st.integers(2, 5))
    def test_law_of_total_expectation(self, seed, p):
        rng = np.random.default_rng(seed)
        scm = random_discrete_scm(p, rng, label_kind="table" if seed % 2 else "logistic")
        model = exact_model(scm)
        states, probs = scm.error_states()
        W = [c for c in range(p) if rng.random() < 0.5]
        prior = conditional_expectation(model, states[0], [], EXACT)
        averaged = sum(q * conditional_expectation(model, s, W, EXACT) for s, q in zip(states, probs))
        assert averaged == pytest.approx(prior, abs=1e-12)

    @settings(max_examples=20)
    @given(st.integers(0, 10_000), st.integers(2, 5))
    def test_nested_conditioning_is_a_tower(self, seed, p):
        # averaging the larger set's expectation over the extra coordinate recovers the smaller set's
        rng = np.random.default_rng(seed)
        scm = random_discrete_scm(p, rng)
        model = exact_model(scm)
        states, _ = scm.error_states()
        e = np.array(states[int(rng.integers(len(states)))], dtype=float)
        W = [c for c in range(1, p) if rng.random() < 0.5]
        dist = scm.error_dists[0]
        vals, probs = dist.support()
        tower = 0.0
        for v, q in zip(vals, probs):
            row = e.copy()
            row[0] = v
            tower += q * conditional_expectation(model, row, [0] + W, EXACT)
        assert tower == pytest.approx(conditional_expectation(model, e, W, EXACT), abs=1e-12)


class TestFitting:
    def test_recovers_weight(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(50000, 2))
        d = (rng.random(50000) < expit(0.3 + 2.0 * x[:, 0])).astype(float)
        model = fit_logistic(x, d)
        assert model.weights[0] == pytest.approx(2.0, abs=0.1)
        assert abs(model.weights[1]) < 0.1
        assert model.intercept == pytest.approx(0.3, abs=0.1)
        assert model.diagnostics["grad_max_norm"] < 1e-8

    def test_no_signal(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(20000, 3))
        d = (rng.random(20000) < 0.5).astype(float)
        assert np.max(np.abs(fit_logistic(x, d).weights)) < 0.05

    def test_degenerate_labels(self):
        with pytest.raises(DegenerateLabelError):
            fit_logistic(np.zeros((10, 2)), np.ones(10))

    def test_non_binary_labels(self):
        with pytest.raises(ValueError):
            fit_logistic(np.zeros((3, 1)), [0, 1, 2])

    def test_convergence_error(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(1000, 2))
        d = (x[:, 0] > 0).astype(float)
        with pytest.raises(ConvergenceError):
            fit_logistic(x, d, l2=0.0, max_iter=2)

    def test_separable_with_penalty_converges(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(1000, 2))
        d = (x[:, 0] > 0).astype(float)
        model = fit_logistic(x, d, l2=1e-2)
        assert model.weights[0] > 1.0

    def test_background_subsample(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(300, 2))
        d = (rng.random(300) < 0.5).astype(float)
        model = fit_logistic(x, d, background_size=100, seed=9)
        assert model.background.shape == (100, 2)
        assert {tuple(r) for r in model.background} <= {tuple(r) for r in x}
        again = fit_logistic(x, d, background_size=100, seed=9)
        assert again.background.tobytes() == model.background.tobytes()


class TestSerialisation:
    @pytest.mark.parametrize("make", [lambda: logistic_model(0.4, [1.0, -2.0], background=np.eye(2)),
                                      lambda: exact_model(or_model(), background=np.array([[0.0, 1.0]]))])
    def test_roundtrip(self, make):
        model = make()
        back = DiagnosisModel.from_dict(model.to_dict())
        assert back.fingerprint() == model.fingerprint()
        e = np.array([[0.0, 1.0], [1.0, 1.0]])
        np.testing.assert_array_equal(predict_proba(back, e), predict_proba(model, e))

    def test_fingerprint_changes_with_weights(self):
        assert logistic_model(0, [1.0]).fingerprint() != logistic_model(0, [1.5]).fingerprint()

    def test_bad_sampling_mode(self):
        with pytest.raises(ValueError):
            Sampling("bootstrap")
        assert BACKGROUND.mode == "background"
