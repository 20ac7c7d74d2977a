import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panel_dce.assignment import BernoulliMechanism, MarkovMechanism, ObservedPanel, draw_batch
from panel_dce.errors import NumericalError, ValidationError
from panel_dce.linear_fe import (bernoulli_moments, markov_moments, moments_for, problimit_repeated_cross_section,
                                 problimit_twoway_fe, problimit_unit_fe, repeated_cross_section_estimate,
                                 twoway_fe_batch, twoway_fe_estimate, unit_fe_batch, unit_fe_estimate,
                                 within_transforms)
from panel_dce.panel_core import ARPanelSpec, LinearPanelSpec

from oracles import dummy_ols_slope


def panel(W, Y):
    W = np.asarray(W)
    return ObservedPanel(W, Y, np.full(W.shape, 0.5))


def homogeneous_spec(N, T, b0, b1, eps=None):
    beta = np.zeros((N, T, 2))
    beta[:, :, 0], beta[:, :, 1] = b0, b1
    return LinearPanelSpec(beta, np.zeros((N, T)) if eps is None else eps)


class TestTransforms:
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
    @settings(max_examples=50, deadline=None)
    def test_sums_vanish(self, N, T, seed):
        a = np.random.default_rng(seed).normal(size=(N, T))
        tr = within_transforms(a)
        np.testing.assert_allclose(tr.dot.sum(axis=0), 0, atol=1e-10)
        np.testing.assert_allclose(tr.check.sum(axis=1), 0, atol=1e-10)
        np.testing.assert_allclose(tr.dotcheck.sum(axis=0), 0, atol=1e-10)
        np.testing.assert_allclose(tr.dotcheck.sum(axis=1), 0, atol=1e-10)


class TestEstimators:
    def test_hand_panel(self):
        assert unit_fe_estimate(panel([[1, 0], [0, 1]], [[1.0, 0.0], [0.0, 2.0]])) == pytest.approx(1.5, abs=1e-12)

    def test_proportional(self):
        W = np.random.default_rng(0).integers(0, 2, (5, 4))
        W[0] = [0, 1, 0, 1]
        assert unit_fe_estimate(panel(W, 2.5 * W)) == pytest.approx(2.5, abs=1e-12)

    def test_twoway_removes_effects(self):
        rng = np.random.default_rng(1)
        W = rng.integers(0, 2, (6, 5))
        Y = -1.2 * W + rng.normal(size=(6, 1)) + rng.normal(size=(1, 5))
        assert twoway_fe_estimate(panel(W, Y)) == pytest.approx(-1.2, abs=1e-10)

    def test_constant_treatment(self):
        with pytest.raises(NumericalError):
            unit_fe_estimate(panel([[1, 1], [0, 0]], [[1.0, 2.0], [3.0, 4.0]]))

    def test_non_numeric_rejected(self):
        obs = ObservedPanel([[0, 1], [1, 0]], np.zeros((2, 2)), np.full((2, 2), 0.5), alphabet=("a", "b"))
        with pytest.raises(ValidationError):
            unit_fe_estimate(obs)

    @given(st.integers(2, 6), st.integers(2, 6), st.integers(0, 2**31 - 1))
    @settings(max_examples=60, deadline=None)
    def test_matches_dummy_regression(self, N, T, seed):
        rng = np.random.default_rng(seed)
        W = rng.integers(0, 2, (N, T)).astype(float)
        W[0, 0], W[0, 1] = 0.0, 1.0
        W[1, 0], W[1, 1] = 0.0, 0.0
        Y = rng.normal(size=(N, T))
        obs = panel(W.astype(int), Y)
        assert unit_fe_estimate(obs) == pytest.approx(dummy_ols_slope(W, Y), abs=1e-8)
        assert twoway_fe_estimate(obs) == pytest.approx(dummy_ols_slope(W, Y, True), abs=1e-8)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_additive_invariance(self, seed):
        rng = np.random.default_rng(seed)
        W = rng.integers(0, 2, (5, 4))
        W[0, :2] = [0, 1]
        Y = rng.normal(size=(5, 4))
        a, b = unit_fe_batch(W, Y), twoway_fe_batch(W, Y)
        assert unit_fe_batch(W, Y + rng.normal(size=(5, 1))) == pytest.approx(a, abs=1e-10)
        assert twoway_fe_batch(W, Y + rng.normal(size=(5, 1)) + rng.normal(size=(1, 4))) == pytest.approx(b, abs=1e-10)

    def test_cross_section_scalar_case(self):
        rng = np.random.default_rng(2)
        W = rng.integers(0, 2, (20, 3))
        Y = rng.normal(size=(20, 3))
        w = W[:, 0] - W[:, 0].mean()
        y = Y[:, 0] - Y[:, 0].mean()
        assert repeated_cross_section_estimate(panel(W, Y), 1)[0] == pytest.approx((w @ y) / (w @ w), abs=1e-12)

    def test_cross_section_recovers_lags(self):
        N, T = 20_000, 3
        spec = LinearPanelSpec(np.tile([0.7, -0.4, 0.2], (N, T, 1)), np.random.default_rng(3).normal(size=(N, T)))
        codes, y, sp = draw_batch(BernoulliMechanism(0.5), spec, 4, [0])
        coef = repeated_cross_section_estimate(ObservedPanel(codes[0], y[0], sp[0]), 3)
        # sd of each coefficient is about 2 / sqrt(N)
        np.testing.assert_allclose(coef, [0.7, -0.4, 0.2], atol=3 * 2 / np.sqrt(N))

    def test_cross_section_needs_units(self):
        with pytest.raises(ValidationError):
            repeated_cross_section_estimate(panel([[0, 1, 1], [1, 0, 1]], np.zeros((2, 3))), 2)


class TestMoments:
    def test_bernoulli(self):
        mom = bernoulli_moments(0.5, 3)
        np.testing.assert_allclose(mom.cov[0], 0.25 * np.eye(3))

    def test_markov_autocovariance(self):
        rho = 0.8
        mom = markov_moments([[rho, 1 - rho], [1 - rho, rho]], [0.5, 0.5], 4)
        assert mom.cov[0, 1, 2] == pytest.approx((2 * rho - 1) / 4, abs=1e-12)
        assert mom.cov[0, 0, 3] == pytest.approx((2 * rho - 1) ** 3 / 4, abs=1e-12)

    def test_within_variance_t2(self):
        mom = bernoulli_moments(0.5, 2)
        np.testing.assert_allclose(np.diagonal(mom.check_cov[0]), 0.125)

    def test_markov_against_simulation(self):
        mech = MarkovMechanism([[0.7, 0.3], [0.4, 0.6]], [0.9, 0.1])
        mom = moments_for(mech, 4)
        spec = LinearPanelSpec(np.zeros((50_000, 4, 1)), np.zeros((50_000, 4)))
        W = draw_batch(mech, spec, 1, [0])[0][0].astype(float)
        np.testing.assert_allclose(W.mean(axis=0), mom.m[0], atol=0.01)
        np.testing.assert_allclose(W.T @ W / len(W), mom.M[0], atol=0.01)

    def test_invalid_transition(self):
        with pytest.raises(ValidationError):
            markov_moments([[0.5, 0.6], [0.5, 0.5]], [0.5, 0.5], 3)


class TestProbabilityLimits:
    def test_no_carryover_iid(self):
        out = problimit_unit_fe(homogeneous_spec(3, 5, 1.3, 0.0), bernoulli_moments(0.4, 5))
        assert out["total"] == pytest.approx(1.3, abs=1e-12)
        assert out["carryover_term"] == 0.0 and out["counterfactual_term"] == 0.0
        out2 = problimit_twoway_fe(homogeneous_spec(3, 5, 1.3, 0.0), bernoulli_moments(0.4, 5))
        assert out2["total"] == pytest.approx(1.3, abs=1e-12)

    def test_iid_carryover_from_demeaning(self):
        out = problimit_unit_fe(homogeneous_spec(2, 5, 1.0, 1.0), bernoulli_moments(0.5, 5))
        assert out["carryover_term"] == pytest.approx(-0.2, abs=1e-12)
        assert out["total"] == pytest.approx(0.8, abs=1e-12)

    def test_separable_counterfactual_vanishes(self):
        rng = np.random.default_rng(5)
        eps = rng.normal(size=(4, 1)) + rng.normal(size=(1, 5))
        spec = homogeneous_spec(4, 5, 1.0, 0.5, eps)
        mom = bernoulli_moments(rng.uniform(0.2, 0.8, (4, 5)), 5)
        assert problimit_twoway_fe(spec, mom)["counterfactual_term"] == pytest.approx(0.0, abs=1e-12)

    def test_ar_input_is_unrolled(self):
        ar = ARPanelSpec.constant(2, 4, 0.5, 1.0, np.zeros((2, 4)))
        mom = markov_moments([[0.8, 0.2], [0.2, 0.8]], [0.5, 0.5], 4)
        from panel_dce.panel_core import unroll_ar_to_linear
        assert problimit_unit_fe(ar, mom) == problimit_unit_fe(unroll_ar_to_linear(ar), mom)

    def test_heterogeneous_design_matches_simulation(self):
        N, T = 20_000, 4
        rng = np.random.default_rng(6)
        probs = np.where(np.arange(N)[:, None] < N // 2, 0.3, 0.7) * np.ones((1, T))
        eps = rng.normal(size=(N, T)) + 2.0 * (probs > 0.5)
        spec = homogeneous_spec(N, T, 1.0, 0.5, eps)
        mom = bernoulli_moments(probs, T)
        codes, y, _ = draw_batch(BernoulliMechanism(probs), spec, 7, range(5))
        assert twoway_fe_batch(codes, y).mean() == pytest.approx(problimit_twoway_fe(spec, mom)["total"], abs=0.02)
        assert unit_fe_batch(codes, y).mean() == pytest.approx(problimit_unit_fe(spec, mom)["total"], abs=0.02)
        rcs = problimit_repeated_cross_section(spec, mom, 2)
        sims = [repeated_cross_section_estimate(ObservedPanel(c, yy, np.full((N, T), 0.5)), 2)
                for c, yy in zip(codes, y)]
        np.testing.assert_allclose(np.mean(sims, axis=0), rcs["total"], atol=0.05)
        assert abs(rcs["counterfactual_term"][0]) > 0.1

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            problimit_unit_fe(homogeneous_spec(2, 4, 1.0, 0.0), bernoulli_moments(0.5, 5))
