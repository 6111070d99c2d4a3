import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dg_bench import distributions as dist
from dg_bench.distributions import (
    ClusterMixture,
    CsvSchema,
    FiniteDomainDistribution,
    LabeledDataset,
)
from dg_bench.errors import CsvFormatError, ValidationError
from dg_bench.metrics import atom_map_partition, constant_partition


class TestToyFourCluster:
    def test_no_noise_pmfs_are_one_hot(self):
        src = dist.toy_four_cluster(10.0, 0.0)
        assert np.all(np.isin(src.label_pmfs, (0.0, 1.0)))
        assert np.allclose(src.label_pmfs.sum(axis=1), 1.0)

    def test_cat_pmf_at_noise_03(self):
        src = dist.toy_four_cluster(10.0, 0.3)
        assert np.allclose(src.label_pmfs[dist.TOY_CAT], [0.3, 0.7])

    def test_full_flip_makes_cat_object(self):
        src = dist.toy_four_cluster(10.0, 1.0)
        assert np.array_equal(src.label_pmfs[dist.TOY_CAT], [1.0, 0.0])

    def test_empirical_flip_fraction(self):
        data = dist.toy_four_cluster(10.0, 0.3).sample(10_000, 0)
        cat = data.partition_cells == dist.TOY_CAT
        assert abs(np.mean(data.labels[cat] == 0) - 0.3) <= 0.02

    def test_same_seed_bit_identical(self):
        src = dist.toy_four_cluster(10.0, 0.3)
        assert src.sample(500, 11).equals(src.sample(500, 11))
        assert not src.sample(500, 11).equals(src.sample(500, 12))

    def test_names(self):
        src = dist.toy_four_cluster(4.0, 0.1)
        assert src.cluster_names == ("Truck", "Ship", "Cat", "Dog")
        assert src.label_names == ("Object", "Animal")


def test_single_deterministic_cluster():
    src = ClusterMixture([1.0], [[0.0, 0.0]], [1.0], [[0.0, 0.0, 1.0]])
    data = src.sample(200, 3)
    assert np.all(data.labels == 2)


def test_mixture_validation():
    with pytest.raises(ValidationError):
        ClusterMixture([0.5, 0.6], [[0.0], [1.0]], [1.0, 1.0], [[1.0], [1.0]])
    with pytest.raises(ValidationError):
        ClusterMixture([1.0], [[0.0]], [-1.0], [[1.0]])


def test_conditional_pmf_matches_bayes_formula():
    # Two 1-d clusters at -1 and +1, unit spread: posterior of cluster 1 is a logistic in 2x.
    src = ClusterMixture([0.5, 0.5], [[-1.0], [1.0]], [1.0, 1.0], [[1.0, 0.0], [0.2, 0.8]])
    x = np.array([[-0.7], [0.0], [2.5]])
    w1 = 1.0 / (1.0 + np.exp(-2 * x[:, 0]))
    expect = np.stack([(1 - w1) + 0.2 * w1, 0.8 * w1], axis=1)
    assert np.allclose(src.conditional_pmf(x), expect)


class TestEnumerateJoint:
    def test_single_atom(self):
        src = FiniteDomainDistribution([1.0], [[0.0, 1.0]], atom_features=[[0.0]])
        J = dist.enumerate_joint(src, constant_partition())
        assert np.array_equal(J.mass, [[0.0, 1.0]])

    def test_two_atoms_one_cell(self):
        src = FiniteDomainDistribution([0.5, 0.5], [[1.0, 0.0], [0.0, 1.0]], atom_features=[[0.0], [1.0]])
        J = dist.enumerate_joint(src, atom_map_partition([0, 0]))
        assert np.allclose(J.mass, [[0.5, 0.5]])

    def test_toy_analog_cat_row(self):
        p = np.array([0.1, 0.2, 0.3, 0.4])
        pmfs = [[1, 0], [1, 0], [0.3, 0.7], [0, 1]]
        feats = [[0, 10], [11, 10.3], [0.2, 0], [10.6, 0.5]]
        J = dist.enumerate_joint(FiniteDomainDistribution(p, pmfs, atom_features=feats),
                                 atom_map_partition(range(4)))
        assert np.allclose(J.mass[2], [0.3 * 0.3, 0.7 * 0.3])


def test_finite_domain_needs_distinct_distances():
    with pytest.raises(ValidationError):
        FiniteDomainDistribution([0.5, 0.5], [[1.0], [1.0]], atom_features=[[0.0], [0.0]])
    with pytest.raises(ValidationError):  # equidistant pairs make nearest neighbours ambiguous
        FiniteDomainDistribution([0.3, 0.3, 0.4], [[1.0]] * 3, atom_features=[[0.0], [1.0], [2.0]])


class TestCsv:
    def test_lexicographic_labels(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("x,label\n1.0,a\n2.0,b\n3.0,a\n")
        data = dist.load_csv(f)
        assert list(data.labels) == [0, 1, 0] and data.K == 2
        assert data.metadata["label_names"] == ("a", "b")

    def test_missing_label_column(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("x,y\n1,2\n")
        with pytest.raises(CsvFormatError, match="missing label column"):
            dist.load_csv(f)

    def test_non_numeric_and_empty(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("x,label\nfoo,a\n")
        with pytest.raises(CsvFormatError):
            dist.load_csv(f)
        g = tmp_path / "e.csv"
        g.write_text("x,label\n")
        with pytest.raises(CsvFormatError):
            dist.load_csv(g)

    def test_round_trip(self, tmp_path):
        data = dist.toy_four_cluster(5.0, 0.2).sample(50, 4)
        f = tmp_path / "r.csv"
        dist.write_csv(data, f)
        back = dist.load_csv(f, CsvSchema(cell="cell"))
        assert back.equals(data)


class TestRebalance:
    def test_linear_target_ratios(self):
        t = dist.linear_marginal(10)
        counts = dist.rebalance_counts(np.full(10, 1000), t)
        assert np.array_equal(counts // counts[0], np.arange(1, 11))
        assert np.all(counts % counts[0] == 0)

    def test_target_equal_to_empirical_keeps_size(self):
        avail = np.array([30, 50, 20])
        counts = dist.rebalance_counts(avail, avail / avail.sum())
        assert np.array_equal(counts, avail)

    def test_absent_class_errors(self):
        with pytest.raises(ValidationError):
            dist.rebalance_counts([10, 0, 5], [0.3, 0.3, 0.4])

    def test_rebalance_subsamples(self):
        data = dist.gaussian_clusters(3, 3, 2, 6.0).sample(3000, 1)
        out = dist.rebalance(data, dist.linear_marginal(3), 2, total=600)
        assert out.n <= 600
        assert np.all(np.bincount(out.labels, minlength=3) == dist.rebalance_counts(
            np.bincount(data.labels, minlength=3), dist.linear_marginal(3), 600))

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(1, 400), min_size=2, max_size=8), st.data())
    def test_marginal_close_to_target(self, avail, data):
        # Flooring each class loses < 1 sample, so the TV to the target stays below K / n_out.
        K = len(avail)
        w = np.array(data.draw(st.lists(st.integers(1, 20), min_size=K, max_size=K)), float)
        t = w / w.sum()
        counts = dist.rebalance_counts(np.array(avail), t)
        assert np.all(counts <= np.array(avail))
        n_out = counts.sum()
        if n_out:
            assert 0.5 * np.abs(counts / n_out - t).sum() < K / n_out


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 60))
def test_sampling_is_deterministic_and_valid(seed, n):
    src = dist.gaussian_clusters(4, 3, 3, 4.0, label_noise=0.2)
    a, b = src.sample(n, seed), src.sample(n, seed)
    assert a.equals(b)
    assert a.n == n and a.d == 3 and a.labels.max() < 3
    assert not a.features.flags.writeable


def test_dataset_validation():
    with pytest.raises(ValidationError):
        LabeledDataset([[0.0]], [2], K=2)
    with pytest.raises(ValidationError):
        LabeledDataset([[np.nan]], [0], K=1)
    with pytest.raises(ValidationError):
        LabeledDataset(np.zeros((2, 1)), [0], K=1)
