"""Tests for dataset generation, CSV ingestion, partitioning, and batching."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from praffl.data import (
    BatchPlan,
    CsvSchema,
    TabularDataset,
    batches,
    generate_synthetic,
    load_csv,
    partition,
    save_csv,
    standardize,
)
from praffl.errors import ConfigurationError, DataError, ParseError, SchemaError
from praffl.objectives import dp_disparity_hard

LOW_HETEROGENEITY = [[0.33, 0.33, 0.34], [0.33, 0.33, 0.34]]
HIGH_HETEROGENEITY = [[0.70, 0.10, 0.20], [0.10, 0.80, 0.10]]


class TestSyntheticGenerator:
    def test_shape_matches_protocol(self):
        ds = generate_synthetic(3500, seed=0)
        assert ds.n == 3500
        assert ds.num_features == 2

    def test_minimum_size_has_both_groups(self):
        for seed in range(20):
            ds = generate_synthetic(4, seed=seed)
            assert set(np.unique(ds.sensitive)) == {0, 1}

    def test_deterministic_in_seed(self):
        a = generate_synthetic(200, seed=7)
        b = generate_synthetic(200, seed=7)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.sensitive, b.sensitive)
        assert np.array_equal(a.labels, b.labels)

    def test_different_seeds_differ(self):
        a = generate_synthetic(200, seed=1)
        b = generate_synthetic(200, seed=2)
        assert not np.array_equal(a.features, b.features)

    def test_too_small_rejected(self):
        with pytest.raises(ConfigurationError):
            generate_synthetic(3, seed=0)

    def test_group_label_priors_conflict(self):
        ds = generate_synthetic(5000, seed=3)
        rate1 = ds.labels[ds.sensitive == 1].mean()
        rate0 = ds.labels[ds.sensitive == 0].mean()
        assert rate1 == pytest.approx(0.7, abs=0.05)
        assert rate0 == pytest.approx(0.3, abs=0.05)

    def test_error_minimizing_classifier_is_unfair(self):
        """The built-in conflict: an accuracy-driven linear model must show a
        demographic-parity gap of at least 0.2 (sklearn as independent fit)."""
        from sklearn.linear_model import LogisticRegression

        ds = standardize(generate_synthetic(3500, seed=0))
        clf = LogisticRegression().fit(ds.features, ds.labels)
        preds = clf.predict(ds.features)
        assert dp_disparity_hard(preds, ds.sensitive) >= 0.2


class TestDatasetInvariants:
    def test_row_count_mismatch(self):
        with pytest.raises(DataError):
            TabularDataset(np.zeros((3, 2)), np.zeros(2), np.zeros(3))

    def test_non_binary_sensitive(self):
        with pytest.raises(DataError):
            TabularDataset(np.zeros((2, 1)), np.array([0, 2]), np.array([0, 1]))

    def test_cell_counts(self):
        ds = TabularDataset(np.zeros((4, 1)), np.array([0, 0, 1, 1]), np.array([0, 1, 0, 1]))
        assert ds.cell_counts() == {(0, 0): 1, (0, 1): 1, (1, 0): 1, (1, 1): 1}


class TestCsv:
    def write(self, tmp_path, text, name="data.csv"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    def test_well_formed_three_rows(self, tmp_path):
        path = self.write(tmp_path, "x0,x1,sensitive,label\n1,2,0,1\n3,4,1,0\n5,6,0,0\n")
        ds = load_csv(path)
        assert ds.n == 3
        assert ds.num_features == 2

    def test_non_binary_sensitive_names_column(self, tmp_path):
        path = self.write(tmp_path, "x0,sensitive,label\n1,2,1\n")
        with pytest.raises(DataError, match="sensitive"):
            load_csv(path)

    def test_constant_column_standardizes_to_zero(self, tmp_path):
        path = self.write(tmp_path, "x0,x1,sensitive,label\n5,1,0,1\n5,2,1,0\n5,3,0,0\n")
        ds = load_csv(path)
        assert np.all(ds.features[:, 0] == 0.0)

    def test_standardization_is_zero_mean_unit_variance(self, tmp_path):
        rng = np.random.default_rng(0)
        rows = "\n".join(
            f"{rng.normal():.6f},{rng.normal(5, 3):.6f},{i % 2},{(i + 1) % 2}" for i in range(50)
        )
        path = self.write(tmp_path, "x0,x1,sensitive,label\n" + rows + "\n")
        ds = load_csv(path)
        assert ds.features.mean(axis=0) == pytest.approx([0.0, 0.0], abs=1e-12)
        assert ds.features.std(axis=0) == pytest.approx([1.0, 1.0], abs=1e-12)

    def test_missing_column_is_schema_error(self, tmp_path):
        path = self.write(tmp_path, "x0,label\n1,0\n")
        with pytest.raises(SchemaError, match="sensitive"):
            load_csv(path)

    def test_non_numeric_cell_reports_row(self, tmp_path):
        path = self.write(tmp_path, "x0,sensitive,label\n1,0,1\nbad,1,0\n")
        with pytest.raises(ParseError, match="row 3"):
            load_csv(path)

    def test_custom_schema(self, tmp_path):
        path = self.write(tmp_path, "f0,f1,sex,y\n1,2,0,1\n3,4,1,0\n")
        ds = load_csv(path, CsvSchema(feature_prefix="f", sensitive_column="sex", label_column="y"))
        assert ds.num_features == 2

    def test_round_trip_preserves_values(self, tmp_path):
        ds = generate_synthetic(50, seed=5)
        path = tmp_path / "round.csv"
        save_csv(ds, path)
        loaded = load_csv(path)
        assert np.array_equal(loaded.sensitive, ds.sensitive)
        assert np.array_equal(loaded.labels, ds.labels)
        # save_csv writes raw features; load_csv standardizes them
        assert np.array_equal(loaded.features, standardize(ds).features)


class TestPartition:
    def test_low_heterogeneity_counts(self):
        ds = generate_synthetic(1000, seed=0)
        part = partition(ds, LOW_HETEROGENEITY, seed=1)
        assert part.num_clients == 3
        for group in (0, 1):
            total = int((ds.sensitive == group).sum())
            for k, frac in enumerate(LOW_HETEROGENEITY[group]):
                got = int((part.clients[k].sensitive == group).sum())
                assert abs(got - frac * total) <= 1.0

    def test_high_heterogeneity_counts(self):
        ds = generate_synthetic(1000, seed=0)
        part = partition(ds, HIGH_HETEROGENEITY, seed=1)
        for group in (0, 1):
            total = int((ds.sensitive == group).sum())
            for k, frac in enumerate(HIGH_HETEROGENEITY[group]):
                got = int((part.clients[k].sensitive == group).sum())
                assert abs(got - frac * total) <= 1.0

    def test_single_client_identity(self):
        ds = generate_synthetic(100, seed=2)
        part = partition(ds, [[1.0], [1.0]], seed=0)
        assert part.num_clients == 1
        assert part.clients[0].n == ds.n

    def test_multiset_equality(self):
        ds = generate_synthetic(500, seed=4)
        part = partition(ds, HIGH_HETEROGENEITY, seed=9)
        assert sum(c.n for c in part.clients) == ds.n
        stacked = np.vstack(
            [
                np.column_stack([c.features, c.sensitive, c.labels])
                for c in part.clients
            ]
        )
        source = np.column_stack([ds.features, ds.sensitive, ds.labels])
        order = lambda m: m[np.lexsort(m.T)]
        assert np.array_equal(order(stacked), order(source))

    def test_deterministic_in_seed(self):
        ds = generate_synthetic(300, seed=0)
        a = partition(ds, LOW_HETEROGENEITY, seed=5)
        b = partition(ds, LOW_HETEROGENEITY, seed=5)
        for ca, cb in zip(a.clients, b.clients):
            assert np.array_equal(ca.features, cb.features)

    def test_bad_fraction_sum_rejected(self):
        ds = generate_synthetic(100, seed=0)
        with pytest.raises(ConfigurationError):
            partition(ds, [[0.5, 0.4], [0.5, 0.5]], seed=0)

    def test_out_of_range_fraction_rejected(self):
        ds = generate_synthetic(100, seed=0)
        with pytest.raises(ConfigurationError):
            partition(ds, [[1.2, -0.2], [0.5, 0.5]], seed=0)


class TestBatches:
    def make(self, n):
        return TabularDataset(np.zeros((n, 1)), np.arange(n) % 2, np.arange(n) % 2)

    def test_slice_lengths(self):
        plan = BatchPlan(4, shuffle_seed=0)
        lengths = [len(b) for b in batches(self.make(10), plan, epoch=0)]
        assert lengths == [4, 4, 2]

    def test_single_slice(self):
        plan = BatchPlan(128, shuffle_seed=0)
        assert len(batches(self.make(128), plan, epoch=0)) == 1

    def test_deterministic(self):
        plan = BatchPlan(3, shuffle_seed=11)
        a = batches(self.make(10), plan, epoch=2)
        b = batches(self.make(10), plan, epoch=2)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_epochs_differ(self):
        plan = BatchPlan(5, shuffle_seed=11)
        a = np.concatenate(batches(self.make(10), plan, epoch=0))
        b = np.concatenate(batches(self.make(10), plan, epoch=1))
        assert not np.array_equal(a, b)

    def test_batch_size_validation(self):
        with pytest.raises(ConfigurationError):
            batches(self.make(10), BatchPlan(0, 0), epoch=0)
        with pytest.raises(ConfigurationError):
            batches(self.make(10), BatchPlan(11, 0), epoch=0)

    @settings(max_examples=50, deadline=None)
    @given(n=st.integers(1, 200), batch=st.integers(1, 200), seed=st.integers(0, 2**32 - 1), epoch=st.integers(0, 5))
    def test_slices_cover_every_index_once(self, n, batch, seed, epoch):
        if batch > n:
            return
        plan = BatchPlan(batch, seed)
        covered = np.concatenate(batches(self.make(n), plan, epoch))
        assert sorted(covered.tolist()) == list(range(n))
