"""Tests for dominance, Pareto filtering, hypervolume, and sweeps."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from praffl.data import generate_synthetic, standardize
from praffl.errors import ConfigurationError, UsageError
from praffl.models import init_communicated, init_hypernetwork, personalized_spec
from praffl.moo import (
    Dominance,
    ReferencePoint,
    SolutionSet,
    dominates,
    evaluate_sweep,
    hypervolume_2d,
    hypervolume_mc_oracle,
    nondominated_filter,
    sample_preference_uniform,
    sweep_grid,
)
from praffl.objectives import EPS_LAMBDA, ObjectivePoint, PointKind, PreferenceVector

from oracles import hypervolume_inclusion_exclusion, pareto_brute_force

REF = ReferencePoint(1.0, 1.0)


def solution_set(values, kind=PointKind.EVAL_METRIC):
    return SolutionSet([ObjectivePoint(a, b, kind) for a, b in values])


class TestDominates:
    def test_strict(self):
        assert dominates(ObjectivePoint(0.1, 0.2), ObjectivePoint(0.2, 0.3)) is Dominance.STRICTLY_DOMINATES

    def test_weak_edge(self):
        assert dominates(ObjectivePoint(0.1, 0.3), ObjectivePoint(0.1, 0.4)) is Dominance.DOMINATES

    def test_incomparable(self):
        assert dominates(ObjectivePoint(0.1, 0.4), ObjectivePoint(0.2, 0.3)) is Dominance.NONE

    def test_equal_points_do_not_dominate(self):
        assert dominates(ObjectivePoint(0.3, 0.3), ObjectivePoint(0.3, 0.3)) is Dominance.NONE

    def test_mixed_kinds_rejected(self):
        with pytest.raises(UsageError):
            dominates(
                ObjectivePoint(0.1, 0.1, PointKind.TRAIN_LOSS),
                ObjectivePoint(0.1, 0.1, PointKind.EVAL_METRIC),
            )

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=3, max_size=3))
    def test_strict_partial_order_on_triples(self, triple):
        pts = [ObjectivePoint(a, b) for a, b in triple]
        wins = lambda x, y: dominates(x, y) is not Dominance.NONE
        for p in pts:
            assert not wins(p, p)  # irreflexive
        for x in pts:
            for y in pts:
                if wins(x, y):
                    assert not wins(y, x)  # antisymmetric
        for x in pts:
            for y in pts:
                for z in pts:
                    if wins(x, y) and wins(y, z):
                        assert wins(x, z)  # transitive


class TestNondominatedFilter:
    def test_singleton(self):
        s = solution_set([(0.5, 0.5)])
        assert nondominated_filter(s).points == s.points

    def test_antichain_is_kept(self):
        s = solution_set([(0.1, 0.9), (0.9, 0.1), (0.5, 0.5)])
        assert len(nondominated_filter(s)) == 3

    def test_duplicates_of_retained_points_kept_once(self):
        s = solution_set([(0.2, 0.2), (0.2, 0.2), (0.5, 0.5)])
        kept = nondominated_filter(s)
        assert [p.as_tuple() for p in kept.points] == [(0.2, 0.2)]

    def test_matches_brute_force_on_random_sets(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            values = rng.random((rng.integers(1, 60), 2))
            s = solution_set(values)
            expected = pareto_brute_force(values)
            got = np.zeros(len(values), dtype=bool)
            kept = {id(p) for p in nondominated_filter(s).points}
            for i, p in enumerate(s.points):
                got[i] = id(p) in kept
            assert np.array_equal(got, expected)

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        s = solution_set(rng.random((40, 2)))
        once = nondominated_filter(s)
        twice = nondominated_filter(once)
        assert [p.as_tuple() for p in once.points] == [p.as_tuple() for p in twice.points]

    def test_provenance_follows_points(self):
        prefs = [PreferenceVector(0.3, 0.7), PreferenceVector(0.7, 0.3)]
        s = SolutionSet([ObjectivePoint(0.1, 0.1), ObjectivePoint(0.5, 0.5)], provenance=prefs)
        kept = nondominated_filter(s)
        assert kept.provenance == [prefs[0]]


class TestHypervolume:
    def test_point_at_reference_contributes_nothing(self):
        assert hypervolume_2d(solution_set([(1.0, 1.0)]), REF) == 0.0

    def test_unit_box(self):
        assert hypervolume_2d(solution_set([(0.0, 0.0)]), REF) == pytest.approx(1.0)

    def test_two_point_inclusion_exclusion_fixture(self):
        s = solution_set([(0.2, 0.6), (0.4, 0.3)])
        assert hypervolume_2d(s, REF) == pytest.approx(0.5, abs=1e-15)

    def test_empty_set(self):
        assert hypervolume_2d(SolutionSet([]), REF) == 0.0

    def test_matches_inclusion_exclusion_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(300):
            values = rng.random((rng.integers(1, 21), 2))
            got = hypervolume_2d(solution_set(values), REF)
            expected = hypervolume_inclusion_exclusion(values, (1.0, 1.0))
            assert got == pytest.approx(expected, abs=1e-12)

    def test_monotone_under_point_addition(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            values = rng.random((10, 2))
            base = hypervolume_2d(solution_set(values), REF)
            extra = rng.random(2)
            grown = hypervolume_2d(solution_set(np.vstack([values, extra])), REF)
            assert grown >= base - 1e-15

    def test_strictly_grows_when_adding_a_dominating_point(self):
        values = np.array([[0.5, 0.5], [0.3, 0.8]])
        base = hypervolume_2d(solution_set(values), REF)
        better = np.vstack([values, [[0.2, 0.2]]])
        assert hypervolume_2d(solution_set(better), REF) > base

    def test_invariant_under_removing_dominated_points(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            s = solution_set(rng.random((15, 2)))
            filtered = nondominated_filter(s)
            assert hypervolume_2d(s, REF) == pytest.approx(hypervolume_2d(filtered, REF), abs=1e-15)

    def test_out_of_box_points_warn(self, caplog):
        import logging

        with caplog.at_level(logging.WARNING, logger="praffl.moo"):
            hypervolume_2d(solution_set([(0.5, 0.5)]), ReferencePoint(0.4, 1.0))
        assert any("reference box" in r.message for r in caplog.records)


class TestMonteCarloOracle:
    def test_empty_set_is_zero(self):
        assert hypervolume_mc_oracle(SolutionSet([]), REF, samples=100, seed=0) == 0.0

    def test_unit_box_single_point(self):
        s = solution_set([(0.0, 0.0)])
        estimate = hypervolume_mc_oracle(s, REF, samples=1_000_000, seed=1)
        assert estimate == pytest.approx(1.0, abs=0.005)

    def test_agrees_with_exact_sweep(self):
        rng = np.random.default_rng(5)
        for trial in range(5):
            values = rng.random((20, 2))
            s = solution_set(values)
            exact = hypervolume_2d(s, REF)
            estimate = hypervolume_mc_oracle(s, REF, samples=1_000_000, seed=trial)
            assert abs(estimate - exact) <= 3e-3

    def test_samples_must_be_positive(self):
        with pytest.raises(ConfigurationError):
            hypervolume_mc_oracle(solution_set([(0.5, 0.5)]), REF, samples=0, seed=0)


class TestPreferenceSampling:
    def test_grid_count_and_endpoints(self):
        grid = sweep_grid(1001)
        assert len(grid) == 1001
        assert len({(p.lambda1, p.lambda2) for p in grid}) == 1001
        assert grid[0].lambda1 == pytest.approx(EPS_LAMBDA)
        assert grid[-1].lambda1 == pytest.approx(1.0 - EPS_LAMBDA)

    def test_grid_of_two_is_the_endpoints(self):
        grid = sweep_grid(2)
        assert grid[0].lambda1 == pytest.approx(EPS_LAMBDA)
        assert grid[1].lambda1 == pytest.approx(1.0 - EPS_LAMBDA)

    def test_grid_needs_two_points(self):
        with pytest.raises(ConfigurationError):
            sweep_grid(1)

    def test_sampled_vectors_satisfy_invariants(self):
        rng = np.random.default_rng(6)
        for _ in range(500):
            pref = sample_preference_uniform(rng)
            assert pref.lambda1 + pref.lambda2 == pytest.approx(1.0, abs=1e-12)
            assert min(pref.lambda1, pref.lambda2) >= EPS_LAMBDA


class TestEvaluateSweep:
    def setup_method(self):
        self.dataset = standardize(generate_synthetic(300, seed=0))
        self.cm = init_communicated(2, seed=0)
        self.hn = init_hypernetwork(personalized_spec(), seed=0)

    def test_rows_are_ordered_like_input_prefs(self):
        prefs = sweep_grid(5)
        sweep = evaluate_sweep(self.cm, self.hn, self.dataset, prefs)
        assert sweep.provenance == prefs
        assert len(sweep) == 5

    def test_duplicate_preferences_give_identical_rows(self):
        pref = PreferenceVector(0.4, 0.6)
        sweep = evaluate_sweep(self.cm, self.hn, self.dataset, [pref, pref])
        assert sweep.points[0].as_tuple() == sweep.points[1].as_tuple()

    def test_zero_initialized_model_is_preference_blind(self):
        sweep = evaluate_sweep(self.cm, self.hn, self.dataset, sweep_grid(7))
        rows = {p.as_tuple() for p in sweep.points}
        assert len(rows) == 1
