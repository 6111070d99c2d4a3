import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dg_bench import classifiers as clf
from dg_bench import metrics as mt
from dg_bench.bimodal import BimodalFamily, BimodalSource
from dg_bench.distributions import LabeledDataset, toy_four_cluster, two_cluster
from dg_bench.errors import ValidationError
from dg_bench.metrics import DiscreteJoint


def _binom_cdf(k, n, p):
    return sum(math.comb(n, i) * p**i * (1 - p) ** (n - i) for i in range(k + 1))


def _bisect(f, target):
    """Root of an increasing function on [0, 1]."""
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if f(mid) < target else (lo, mid)
    return 0.5 * (lo + hi)


def _cp_oracle(k, n, alpha=0.05):
    """Exact interval by bisection on binomial tail probabilities."""
    lower = 0.0 if k == 0 else _bisect(lambda p: 1 - _binom_cdf(k - 1, n, p), alpha / 2)
    upper = 1.0 if k == n else _bisect(lambda p: -_binom_cdf(k, n, p), -alpha / 2)
    return lower, upper


class TestTV:
    def test_examples(self):
        P = DiscreteJoint(np.array([[0.5, 0.5]]))
        assert mt.tv_distance(P, P) == 0.0
        assert mt.tv_distance(DiscreteJoint(np.array([[1.0, 0.0]])), DiscreteJoint(np.array([[0.0, 1.0]]))) == 1.0
        assert math.isclose(mt.tv_distance(P, DiscreteJoint(np.array([[0.8, 0.2]]))), 0.3)

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            mt.tv_distance(DiscreteJoint(np.ones((1, 2)) / 2), DiscreteJoint(np.ones((2, 1)) / 2))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 4), st.data())
    def test_metric_properties(self, M, K, data):
        def draw():
            w = np.array(data.draw(st.lists(st.integers(0, 9), min_size=M * K, max_size=M * K)), float)
            w[0] += 1
            return DiscreteJoint((w / w.sum()).reshape(M, K))

        P, Q, R = draw(), draw(), draw()
        assert 0.0 <= mt.tv_distance(P, Q) <= 1.0
        assert math.isclose(mt.tv_distance(P, Q), mt.tv_distance(Q, P))
        assert mt.tv_distance(P, R) <= mt.tv_distance(P, Q) + mt.tv_distance(Q, R) + 1e-12


class TestEmpiricalJoint:
    def test_point_mass(self):
        assert np.array_equal(mt.empirical_joint([1], [2], 2, 3).mass, [[0, 0, 0], [0, 0, 1]])

    def test_two_pairs(self):
        assert np.array_equal(mt.empirical_joint([0, 0], [0, 1]).mass, [[0.5, 0.5]])

    def test_concentration(self):
        truth = np.array([[0.1, 0.2], [0.3, 0.4]])
        rng = np.random.default_rng(0)
        flat = rng.choice(4, size=10_000, p=truth.ravel())
        J = mt.empirical_joint(flat // 2, flat % 2, 2, 2)
        assert mt.tv_distance(J, DiscreteJoint(truth)) <= 0.03


class TestAdvantage:
    def test_identical_samples(self):
        X = np.array([0, 1, 1, 0])
        y = np.array([0, 1, 0, 0])
        tests = mt.cell_label_family(2, 2)
        assert mt.test_family_advantage(tests, (X, y), (X, y))[0] == 0.0

    def test_single_test(self):
        t = mt.cell_label_test(0, 1)
        adv, ident = mt.test_family_advantage([t], (np.array([0, 0]), np.array([1, 1])),
                                              (np.array([0, 0]), np.array([1, 0])))
        assert adv == 0.5 and ident == t.identifier

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 2), st.integers(2, 3), st.integers(0, 10_000))
    def test_subset_family_equals_tv(self, M, K, seed):
        rng = np.random.default_rng(seed)
        XP, yP = rng.integers(M, size=40), rng.integers(K, size=40)
        XQ, yQ = rng.integers(M, size=30), rng.integers(K, size=30)
        JP, JQ = mt.empirical_joint(XP, yP, M, K), mt.empirical_joint(XQ, yQ, M, K)
        # brute force over all subsets of cells
        pairs = list(itertools.product(range(M), range(K)))
        brute = max(abs(sum(JP.mass[p] - JQ.mass[p] for p in S))
                    for r in range(len(pairs) + 1) for S in itertools.combinations(pairs, r))
        adv, _ = mt.test_family_advantage(mt.all_subset_tests(M, K), (XP, yP), (XQ, yQ))
        assert math.isclose(adv, brute, abs_tol=1e-12)
        assert math.isclose(adv, mt.tv_distance(JP, JQ), abs_tol=1e-12)
        cell_adv, _ = mt.test_family_advantage(mt.cell_label_family(M, K), (XP, yP), (XQ, yQ))
        assert math.isclose(cell_adv, np.abs(JP.mass - JQ.mass).max(), abs_tol=1e-12)


class TestGeneralizationGap:
    def test_interpolating_gap_is_test_error(self):
        src = toy_four_cluster(3.0, 0.3)
        S, T = src.sample(200, 0), src.sample(500, 1)
        m = clf.one_nn().train(S)
        assert mt.generalization_gap(m, S, T) == clf.train_error(m, T)

    def test_perfect_model(self):
        S = LabeledDataset([[0.0], [10.0]], [0, 1], 2)
        assert mt.generalization_gap(clf.one_nn().train(S), S, S) == 0.0

    def test_constant_predictor(self):
        class Const:
            def predict(self, X, rng=None):
                return np.zeros(len(X), dtype=int)

        src = two_cluster(4.0, 0.0)
        assert mt.generalization_gap(Const(), src.sample(10_000, 0), src.sample(10_000, 1)) <= 0.02


class TestDistinguishability:
    def test_constant_partition_is_free(self):
        ci = mt.distinguishability_eps(clf.one_nn(), toy_four_cluster(10, 0.3), mt.constant_partition(),
                                       100, 50, 0)
        assert ci.point == 0.0

    def test_clusters_well_separated(self):
        src = toy_four_cluster(10.0, 0.3)
        ci = mt.distinguishability_eps(clf.one_nn(), src, mt.cluster_partition(4), 100, 10_000, 1)
        assert ci.point <= 0.02

    def test_coin_split_is_unlearnable(self):
        src = toy_four_cluster(10.0, 0.0)
        ci = mt.distinguishability_eps(clf.one_nn(), src, mt.coin_split_partition(4, 2), 200, 200, 2,
                                       test_points_per_trial=20)
        # only points of the split cluster (a quarter of the mass) are at risk, and there it is a coin
        assert abs(ci.point / 0.25 - 0.5) < 0.08


class TestFeatureCalibration:
    def test_deterministic_labels_gap_is_error(self):
        src = toy_four_cluster(2.0, 0.0)
        res = mt.feature_calibration_gap(clf.one_nn(), src, mt.clean_label_partition(2), 100, 30, 50, 0)
        assert math.isclose(res.gap, res.test_error, abs_tol=1e-12)

    def test_toy_noisy_one_nn(self):
        src = toy_four_cluster(10.0, 0.3)
        res = mt.feature_calibration_gap(clf.one_nn(), src, mt.cluster_partition(4), 500, 40, 200, 1)
        cat = res.joint_model.mass[2]
        assert np.allclose(cat / cat.sum(), [0.3, 0.7], atol=0.05)
        assert res.gap <= 0.05
        assert res.gap_ci[0] <= res.gap <= res.gap_ci[1] + 0.02

    def test_clean_learnable_source(self):
        src = toy_four_cluster(10.0, 0.0)
        res = mt.feature_calibration_gap(clf.decision_tree(), src, mt.cluster_partition(4), 500, 10, 200, 2)
        assert res.gap <= 0.03


class TestAgreement:
    def test_bimodal_rates(self):
        src = BimodalSource(0.5, 10)
        res = mt.agreement_rate(BimodalFamily(src), src, 10, 400, 100, 0)
        assert abs(res.accuracy.point - 0.55) < 0.02 and abs(res.agreement.point - 0.55) < 0.02

    def test_degenerate_family_reports_gap(self):
        class ZeroFamily:
            def train(self, data, rng):
                class M:
                    def predict(self, X, rng=None):
                        return np.zeros(len(X), dtype=int)
                return M()

        src = two_cluster(4.0, 0.0)
        res = mt.agreement_rate(ZeroFamily(), src, 10, 20, 500, 1)
        assert res.agreement.point == 1.0
        assert abs(res.accuracy.point - 0.5) < 0.03
        assert res.gap > 0.4

    def test_fixed_dataset_split(self):
        data = toy_four_cluster(6.0, 0.1).sample(500, 0)
        res = mt.agreement_rate(clf.one_nn(), data, 0, 10, 0, 3)
        assert res.accuracy.n == 10 * 100


class TestPointwise:
    def test_identical_members(self):
        data = toy_four_cluster(3.0, 0.3).sample(300, 0)
        m = clf.one_nn().train(toy_four_cluster(3.0, 0.3).sample(100, 1))
        pm = mt.pointwise_agreement_M([(m, m)], data)
        acc = (m.predict(data.features) == data.labels).astype(float)
        assert np.array_equal(pm.values, acc - 1)

    def test_bimodal_is_zero(self):
        src = BimodalSource(0.5, 10)
        fam = BimodalFamily(src)
        rng = np.random.default_rng(0)
        pairs = [(fam.train(None, rng), fam.train(None, rng)) for _ in range(400)]
        T = src.sample(2000, 1)
        pm = mt.pointwise_agreement_M(pairs, T)
        hard = src.is_hard(T.partition_cells)
        assert np.all(pm.values[~hard] == 0.0)
        # hard atoms: mean of 400 differences of two Bernoulli(0.1) indicators
        assert np.abs(pm.values[hard]).max() < 6 * math.sqrt(2 * 0.1 * 0.9 / 400)
        assert abs(pm.mean) < 0.005

    def test_spread_exceeds_bias(self):
        # Noisy cells: each point's own sampled label makes M(x, y) swing in sign while the mean cancels.
        src = toy_four_cluster(10.0, 0.4)
        rng = np.random.default_rng(4)
        pairs = [(clf.one_nn().train(src.sample(200, rng)), clf.one_nn().train(src.sample(200, rng)))
                 for _ in range(50)]
        pm = mt.pointwise_agreement_M(pairs, src.sample(4000, rng))
        assert pm.mean_abs >= 5 * abs(pm.mean)

    def test_H_examples(self):
        a = clf.one_nn().train(LabeledDataset([[0.0]], [0], 2))
        b = clf.one_nn().train(LabeledDataset([[0.0]], [1], 2))
        H, mean = mt.pointwise_density_H([a, b], [[0.0]], [[0.5, 0.5]])
        assert H[0] == 0.0
        H, mean = mt.pointwise_density_H([a], [[0.0]], [[0.5, 0.5]])
        assert mean == 0.5

    def test_H_mean_small_for_large_ensemble(self):
        src = two_cluster(6.0, 0.4)
        rng = np.random.default_rng(9)
        ens = [clf.one_nn().train(src.sample(200, rng)) for _ in range(100)]
        T = src.sample(500, rng)
        _, mean = mt.pointwise_density_H(ens, T.features, src.conditional_pmf(T.features))
        assert mean <= 0.1


class TestClopperPearson:
    def test_zero_successes(self):
        ci = mt.clopper_pearson(0, 10)
        assert ci.lower == 0.0
        assert math.isclose(ci.upper, 1 - 0.025 ** (1 / 10), rel_tol=1e-9)
        assert abs(ci.upper - 0.3085) < 1e-4

    def test_mirror(self):
        a, b = mt.clopper_pearson(0, 10), mt.clopper_pearson(10, 10)
        assert math.isclose(b.lower, 1 - a.upper) and b.upper == 1.0

    def test_half(self):
        ci = mt.clopper_pearson(5, 10)
        assert abs(ci.lower - 0.187) < 1e-3 and abs(ci.upper - 0.813) < 1e-3

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 40), st.data())
    def test_matches_binomial_tail_oracle(self, n, data):
        k = data.draw(st.integers(0, n))
        ci = mt.clopper_pearson(k, n)
        lo, hi = _cp_oracle(k, n)
        assert math.isclose(ci.lower, lo, abs_tol=1e-9) and math.isclose(ci.upper, hi, abs_tol=1e-9)

    def test_invalid(self):
        with pytest.raises(ValidationError):
            mt.clopper_pearson(3, 2)
        with pytest.raises(ValidationError):
            mt.clopper_pearson(0, 0)
