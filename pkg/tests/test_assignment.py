import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panel_dce.assignment import (BernoulliMechanism, CategoricalMechanism, MarkovMechanism, ObservedPanel,
                                  SharpNullPanel, ThresholdMechanism, adapted_propensity, draw_batch, draw_panel,
                                  enumerate_panels, enumerate_unit_paths, mechanism_from_dict, observe,
                                  validate_probabilistic)
from panel_dce.errors import AssumptionViolation, ValidationError
from panel_dce.panel_core import ARPanelSpec

from oracles import simulate_assignments, unit_paths


def ar_panel(n, T, seed=0, phi=0.5, beta=1.0):
    return ARPanelSpec.constant(n, T, phi, beta, np.random.default_rng(seed).normal(size=(n, T)))


MECHANISMS = [
    BernoulliMechanism(0.3),
    CategoricalMechanism([[0.2, 0.8], [0.5, 0.5], [0.7, 0.3]]),
    MarkovMechanism.symmetric(0.8),
    ThresholdMechanism(0.3, 0.4, 0.0),
]


class TestMechanisms:
    def test_bernoulli_rejects_degenerate(self):
        for p in (-0.1, 1.2):
            with pytest.raises(ValidationError):
                BernoulliMechanism(p)
        for p in (0.0, 1.0):
            with pytest.raises(AssumptionViolation):
                draw_panel(BernoulliMechanism(p), ar_panel(2, 2), 0)

    def test_categorical_normalization(self):
        with pytest.raises(ValidationError):
            CategoricalMechanism([0.5, 0.4])
        with pytest.raises(ValidationError):
            CategoricalMechanism([1.2, -0.2])

    def test_markov_rows(self):
        with pytest.raises(ValidationError):
            MarkovMechanism([[0.5, 0.4], [0.5, 0.5]], [0.5, 0.5])
        m = MarkovMechanism.symmetric(0.9)
        probs = m.step_probs(2, np.array([[0], [1]]), np.zeros((2, 1)), np.arange(2))
        np.testing.assert_allclose(probs, [[0.9, 0.1], [0.1, 0.9]])

    def test_threshold_depends_on_outcome(self):
        m = ThresholdMechanism(0.2, 0.5, 1.0)
        probs = m.step_probs(2, np.zeros((2, 1), dtype=int), np.array([[0.5], [1.5]]), np.arange(2))
        np.testing.assert_allclose(probs[:, 1], [0.2, 0.7])
        assert not m.history_free

    @pytest.mark.parametrize("mech", MECHANISMS)
    def test_round_trip(self, mech):
        back = mechanism_from_dict(mech.to_dict())
        wh = np.array([[0, 1], [1, 1]])
        yh = np.array([[0.3, -0.2], [1.0, 2.0]])
        np.testing.assert_allclose(back.step_probs(3, wh, yh, np.arange(2)), mech.step_probs(3, wh, yh, np.arange(2)))

    def test_unknown_kind(self):
        with pytest.raises(ValidationError):
            mechanism_from_dict({"kind": "lottery"})

    def test_incompatible_horizon(self):
        with pytest.raises(ValidationError):
            draw_panel(CategoricalMechanism([[0.5, 0.5]] * 2), ar_panel(2, 3), 0)


class TestDrawing:
    @pytest.mark.parametrize("mech", MECHANISMS)
    def test_deterministic(self, mech):
        panel = ar_panel(4, 3)
        a = draw_panel(mech, panel, seed=11)
        b = draw_panel(mech, panel, seed=11)
        assert a == b

    @pytest.mark.parametrize("mech", MECHANISMS)
    def test_unit_draws_isolated(self, mech):
        # adding units does not change the draws of existing units
        small = draw_batch(mech, ar_panel(3, 3, seed=1), 5, [0, 1])
        big_panel = ARPanelSpec.constant(7, 3, 0.5, 1.0, np.vstack([ar_panel(3, 3, seed=1).epsilon,
                                                                    np.zeros((4, 3))]))
        big = draw_batch(mech, big_panel, 5, [0, 1])
        for a, b in zip(small, big):
            np.testing.assert_array_equal(a, b[:, :3])

    @pytest.mark.parametrize("mech", MECHANISMS)
    def test_outcomes_follow_realized_path(self, mech):
        panel = ar_panel(5, 3, seed=2)
        obs = draw_panel(mech, panel, 3)
        np.testing.assert_allclose(obs.outcomes, panel.outcomes_along(obs.assignments), atol=1e-12)
        np.testing.assert_allclose(obs.step_probs, observe(panel, mech, obs.assignments).step_probs)

    def test_bernoulli_share(self):
        codes, _, sp = draw_batch(BernoulliMechanism(0.3), ar_panel(1000, 5), 9, range(4))
        share = codes.mean()
        assert abs(share - 0.3) < 4 * np.sqrt(0.3 * 0.7 / codes.size)
        np.testing.assert_allclose(sp, np.where(codes == 1, 0.3, 0.7))

    def test_markov_persistence(self):
        codes, _, _ = draw_batch(MarkovMechanism.symmetric(0.9), ar_panel(2000, 6), 1, [0])
        stay = (codes[..., 1:] == codes[..., :-1]).mean()
        assert abs(stay - 0.9) < 0.01

    def test_sample_law_matches_numpy_draws(self):
        mech = ThresholdMechanism(0.3, 0.4, 0.0)
        panel = ar_panel(1, 3, seed=4)
        ours = draw_batch(mech, panel, 2, range(20000))[0][:, 0]
        ref = simulate_assignments(mech, panel, np.random.default_rng(0), 20000)[0][:, 0]
        for path in itertools.product(range(2), repeat=3):
            a = np.all(ours == path, axis=1).mean()
            b = np.all(ref == path, axis=1).mean()
            assert abs(a - b) < 0.02

    def test_groups_share_draws(self):
        groups = np.array([0, 0, 1, 1, 2])
        obs = draw_panel(BernoulliMechanism(0.5), ar_panel(5, 6), 4, group_ids=groups)
        np.testing.assert_array_equal(obs.assignments[0], obs.assignments[1])
        np.testing.assert_array_equal(obs.assignments[2], obs.assignments[3])

    def test_groups_with_different_designs_rejected(self):
        mech = CategoricalMechanism(np.array([[[0.1, 0.9]] * 2, [[0.9, 0.1]] * 2]))
        with pytest.raises(ValidationError):
            for seed in range(50):
                draw_panel(mech, ar_panel(2, 2), seed, group_ids=np.array([0, 0]))

    def test_sharp_null_panel_reveals_observed(self):
        obs = draw_panel(BernoulliMechanism(0.5), ar_panel(3, 4), 1)
        _, y, _ = draw_batch(BernoulliMechanism(0.5), SharpNullPanel(obs), 2, range(5))
        np.testing.assert_array_equal(y, np.broadcast_to(obs.outcomes, y.shape))


class TestObservedPanel:
    def test_rejects_degenerate_step_probs(self):
        with pytest.raises(AssumptionViolation) as exc:
            ObservedPanel(np.zeros((2, 2)), np.zeros((2, 2)), np.array([[0.5, 0.5], [1.0, 0.5]]))
        assert exc.value.unit == 1 and exc.value.time == 1

    def test_shape_checks(self):
        with pytest.raises(ValidationError):
            ObservedPanel(np.zeros((2, 2)), np.zeros((2, 3)), np.full((2, 2), 0.5))
        with pytest.raises(ValidationError):
            ObservedPanel(np.full((2, 2), 2), np.zeros((2, 2)), np.full((2, 2), 0.5))

    def test_group_consistency(self):
        with pytest.raises(ValidationError):
            ObservedPanel(np.array([[0], [1]]), np.zeros((2, 1)), np.full((2, 1), 0.5),
                          group_ids=np.array([["a"], ["a"]], dtype=object))

    def test_summary(self):
        obs = ObservedPanel(np.array([[1, 0], [1, 1]]), np.array([[1.0, 2.0], [3.0, 4.0]]), np.full((2, 2), 0.5))
        s = obs.summary()
        assert s["treatment_counts"] == {"0": 1, "1": 3}
        assert s["treatment_mean"] == 0.75
        assert s["outcome_mean"] == 2.5


class TestEnumeration:
    @pytest.mark.parametrize("mech", MECHANISMS)
    def test_unit_paths_sum_to_one(self, mech):
        panel = ar_panel(3, 3)
        tb = enumerate_unit_paths(mech, panel, 1)
        assert tb.probs.sum() == pytest.approx(1.0, abs=1e-12)
        oracle = {codes: prob for codes, _, _, prob in unit_paths(panel, mech, 1)}
        for path, prob in zip(tb.paths, tb.probs):
            assert prob == pytest.approx(oracle[tuple(path)], abs=1e-12)

    def test_panels_sum_to_one(self):
        total = sum(p for p, _ in enumerate_panels(ThresholdMechanism(0.3, 0.4), ar_panel(2, 3)))
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_guard(self):
        with pytest.raises(ValidationError):
            next(enumerate_panels(BernoulliMechanism(0.5), ar_panel(5, 5)))


class TestPropensity:
    def test_bernoulli_product(self):
        prop = adapted_propensity(BernoulliMechanism(0.5), 0, [0, 1], [0.0, 0.0], [1, 1])
        assert prop.value == pytest.approx(0.25, abs=1e-12)
        assert prop.window_start == 3

    def test_markov_product(self):
        prop = adapted_propensity(MarkovMechanism.symmetric(0.8), 0, [1], [0.0], [1, 0])
        assert prop.value == pytest.approx(0.8 * 0.2, abs=1e-12)

    def test_bounds_violation(self):
        with pytest.raises(AssumptionViolation):
            adapted_propensity(BernoulliMechanism(0.05), 0, [], [], [1], bounds=(0.1, 0.9))

    def test_outcome_dependent_needs_outcomes(self):
        with pytest.raises(ValidationError):
            adapted_propensity(ThresholdMechanism(0.3, 0.4), 0, [0], [1.0], [1, 1])
        prop = adapted_propensity(ThresholdMechanism(0.3, 0.4), 0, [0], [1.0], [1, 1], window_outcomes=[-1.0, 0.0])
        assert prop.value == pytest.approx(0.7 * 0.3, abs=1e-12)

    @given(st.floats(0.05, 0.95), st.lists(st.integers(0, 1), min_size=1, max_size=6))
    @settings(max_examples=50, deadline=None)
    def test_bernoulli_closed_form(self, p, window):
        prop = adapted_propensity(BernoulliMechanism(p), 0, [], [], window)
        k = sum(window)
        assert prop.value == pytest.approx(p**k * (1 - p) ** (len(window) - k), rel=1e-12)

    def test_validate_probabilistic(self):
        obs = ObservedPanel(np.zeros((2, 2)), np.zeros((2, 2)), np.array([[0.5, 0.05], [0.5, 0.97]]))
        assert validate_probabilistic(obs, (0.1, 0.9)) == [(0, 2, 0.05), (1, 2, 0.97)]
        assert validate_probabilistic(obs, (0.01, 0.99)) == []
