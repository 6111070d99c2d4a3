"""Distributional-generalization metrics.

Joint laws of (feature cell, label) are compared in total variation; Monte
Carlo procedures train a fresh model per trial and pool integer counts, so
the result is identical for any number of workers.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from dg_bench.classifiers import ensemble_predict_pmf
from dg_bench.distributions import LabeledDataset, _frozen
from dg_bench.errors import ValidationError
from dg_bench.seeding import master_seed, run_trials, sum_arrays, trial_rng


# ----------------------------------------------------------------- types


@dataclass(frozen=True, eq=False)
class DiscreteJoint:
    """pmf over (cell, label) stored as an ``M x K`` matrix."""

    mass: np.ndarray

    def __post_init__(self):
        m = np.array(self.mass, dtype=float)
        if m.ndim == 1:
            m = m[None, :]
        if m.ndim != 2 or np.any(m < 0) or abs(m.sum() - 1.0) > 1e-9:
            raise ValidationError("joint mass must be a nonnegative matrix summing to 1")
        object.__setattr__(self, "mass", _frozen(m))

    @property
    def M(self) -> int:
        return self.mass.shape[0]

    @property
    def K(self) -> int:
        return self.mass.shape[1]

    @classmethod
    def from_counts(cls, counts) -> "DiscreteJoint":
        counts = np.asarray(counts, dtype=float)
        return cls(counts / counts.sum())

    def row_conditional(self, cell: int) -> np.ndarray:
        row = self.mass[cell]
        return row / row.sum() if row.sum() > 0 else row

    def label_marginal(self) -> np.ndarray:
        return self.mass.sum(axis=0)

    def to_list(self) -> list:
        return self.mass.tolist()


def _coin(X: np.ndarray) -> np.ndarray:
    """Deterministic pseudo-random bit of each row (a hash of its float bits)."""
    bits = np.ascontiguousarray(X, dtype=np.float64).view(np.uint64)
    h = np.zeros(len(X), dtype=np.uint64)
    with np.errstate(over="ignore"):
        for j in range(bits.shape[1]):
            h = (h ^ bits[:, j]) * np.uint64(0x9E3779B97F4A7C15)
    return ((h >> np.uint64(40)) & np.uint64(1)).astype(np.int64)


@dataclass(frozen=True)
class Partition:
    """A feature map ``L`` into ``[M]``.

    kinds
    -----
    ``constant``       every point in cell 0
    ``cluster``        the dataset's known ``partition_cells`` (cluster id or atom id)
    ``cell_map``       ``mapping[partition_cells]`` (coarsening, atom maps)
    ``clean_label``    the clean class label
    ``label_coarsen``  ``mapping[clean label]``
    ``coin_split``     ``partition_cells``, except cell ``mapping[0]`` is split in
                       two by a coin that is a hash of ``x``; the new half is cell ``M - 1``
    ``custom``         ``rule(data) -> cells``
    """

    kind: str
    M: int
    mapping: tuple = ()
    rule: Callable | None = field(default=None, compare=False)
    name: str = ""

    def cells(self, data: LabeledDataset) -> np.ndarray:
        k = self.kind
        if k == "constant":
            out = np.zeros(data.n, dtype=np.int64)
        elif k == "clean_label":
            out = np.asarray(data.clean_labels, dtype=np.int64)
        elif k == "label_coarsen":
            out = np.asarray(self.mapping, dtype=np.int64)[data.clean_labels]
        elif k == "custom":
            out = np.asarray(self.rule(data), dtype=np.int64)
        else:
            if data.partition_cells is None:
                raise ValidationError(f"partition {self.kind!r} needs dataset partition_cells")
            base = data.partition_cells
            if k == "cluster":
                out = base
            elif k == "cell_map":
                if base.max() >= len(self.mapping):
                    raise ValidationError("partition map does not cover every cell")
                out = np.asarray(self.mapping, dtype=np.int64)[base]
            elif k == "coin_split":
                out = np.where((base == self.mapping[0]) & (_coin(data.features) == 1),
                               self.M - 1, base)
            else:
                raise ValidationError(f"unknown partition kind {k!r}")
        if len(out) and (out.min() < 0 or out.max() >= self.M):
            raise ValidationError(f"partition {self.label} produced a cell outside [0, {self.M})")
        return out

    def atom_cells(self, n_atoms: int) -> np.ndarray:
        """Cells of atoms ``0..n_atoms-1`` of a finite domain."""
        if self.kind == "constant":
            return np.zeros(n_atoms, dtype=np.int64)
        if self.kind == "cluster":
            if n_atoms > self.M:
                raise ValidationError("partition leaves atoms unassigned")
            return np.arange(n_atoms)
        if self.kind == "cell_map":
            m = list(self.mapping)
            if len(m) < n_atoms or any(c is None or c < 0 for c in m[:n_atoms]):
                raise ValidationError("partition leaves atoms unassigned")
            out = np.asarray(m[:n_atoms], dtype=np.int64)
            if out.max() >= self.M:
                raise ValidationError(f"atom map produces cells outside [0, {self.M})")
            return out
        raise ValidationError(f"partition {self.kind!r} is not defined on atoms")

    @property
    def label(self) -> str:
        return self.name or self.kind

    def to_dict(self) -> dict:
        out = {"type": self.kind, "M": self.M}
        if self.mapping:
            out["map"] = list(self.mapping)
        if self.name:
            out["name"] = self.name
        return out


def constant_partition() -> Partition:
    return Partition("constant", 1, name="constant")


def cluster_partition(M: int) -> Partition:
    return Partition("cluster", M, name="cluster")


def atom_map_partition(mapping: Sequence[int], M: int | None = None) -> Partition:
    mapping = tuple(int(c) for c in mapping)
    return Partition("cell_map", M if M is not None else max(mapping) + 1, mapping, name="atom_map")


def coarsen_cells(mapping: Sequence[int], name: str = "coarse") -> Partition:
    mapping = tuple(int(c) for c in mapping)
    return Partition("cell_map", max(mapping) + 1, mapping, name=name)


def clean_label_partition(K: int) -> Partition:
    return Partition("clean_label", K, name="clean_label")


def label_coarsening(mapping: Sequence[int]) -> Partition:
    mapping = tuple(int(c) for c in mapping)
    return Partition("label_coarsen", max(mapping) + 1, mapping, name="label_coarsen")


def coin_split_partition(M: int, cell: int) -> Partition:
    """Cluster ids with cluster ``cell`` split in half by a coin; ``M + 1`` cells."""
    return Partition("coin_split", M + 1, (int(cell),), name=f"coin_split[{cell}]")


@dataclass(frozen=True)
class TestFunction:
    """A test ``T(x, yhat) -> [0, 1]`` evaluated on batches."""

    __test__ = False  # not a pytest class

    identifier: str
    rule: Callable[[np.ndarray, np.ndarray], np.ndarray] = field(compare=False)

    def __call__(self, X, yhat) -> np.ndarray:
        v = np.asarray(self.rule(X, np.asarray(yhat)), dtype=float)
        if np.any(v < 0) or np.any(v > 1):
            raise ValidationError(f"test {self.identifier} left [0, 1]")
        return v


def error_test(truth: Callable[[np.ndarray], np.ndarray]) -> TestFunction:
    return TestFunction("error", lambda X, yhat: yhat != truth(X))


def agreement_test(reference, rng=None) -> TestFunction:
    return TestFunction("agree", lambda X, yhat: reference.predict(X, rng) == yhat)


def cell_label_test(cell: int, label: int, cell_fn=None) -> TestFunction:
    cell_fn = cell_fn or (lambda X: np.asarray(X).ravel())
    return TestFunction(f"cell={cell},label={label}",
                        lambda X, yhat: (cell_fn(X) == cell) & (yhat == label))


def subset_test(members, cell_fn=None, identifier=None) -> TestFunction:
    """Indicator of ``(L(x), yhat)`` lying in a set of (cell, label) pairs."""
    members = frozenset(members)
    cell_fn = cell_fn or (lambda X: np.asarray(X).ravel())

    def rule(X, yhat):
        cells = cell_fn(X)
        return np.array([(int(c), int(l)) in members for c, l in zip(cells, yhat)], dtype=float)

    return TestFunction(identifier or f"subset{sorted(members)}", rule)


def cell_label_family(M: int, K: int, cell_fn=None) -> list:
    return [cell_label_test(c, l, cell_fn) for c in range(M) for l in range(K)]


@dataclass(frozen=True)
class BinomialCI:
    point: float
    lower: float
    upper: float
    level: float = 0.95
    successes: int = 0
    n: int = 0

    def __post_init__(self):
        if not (0.0 <= self.lower <= self.point <= self.upper <= 1.0):
            raise ValidationError("interval must satisfy 0 <= lower <= point <= upper <= 1")

    @property
    def half_width(self) -> float:
        return 0.5 * (self.upper - self.lower)

    def overlaps(self, other: "BinomialCI") -> bool:
        return self.lower <= other.upper and other.lower <= self.upper

    def to_dict(self) -> dict:
        return {"point": self.point, "lower": self.lower, "upper": self.upper,
                "level": self.level, "successes": self.successes, "n": self.n}


# ----------------------------------------------------------------- basic ops


def tv_distance(P: DiscreteJoint, Q: DiscreteJoint) -> float:
    """Total variation ``0.5 * sum |P - Q|``."""
    if P.mass.shape != Q.mass.shape:
        raise ValidationError(f"shape mismatch {P.mass.shape} vs {Q.mass.shape}")
    return float(min(1.0, 0.5 * np.abs(P.mass - Q.mass).sum()))


def tv_pmf(p, q) -> float:
    return float(0.5 * np.abs(np.asarray(p, float) - np.asarray(q, float)).sum())


def joint_counts(cells, labels, M: int, K: int) -> np.ndarray:
    counts = np.zeros((M, K), dtype=np.int64)
    np.add.at(counts, (np.asarray(cells), np.asarray(labels)), 1)
    return counts


def empirical_joint(cells, labels, M: int | None = None, K: int | None = None) -> DiscreteJoint:
    cells = np.asarray(cells, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if cells.shape != labels.shape:
        raise ValidationError("cells and labels must have equal length")
    if len(cells) < 1:
        raise ValidationError("need at least one pair")
    M = int(cells.max()) + 1 if M is None else M
    K = int(labels.max()) + 1 if K is None else K
    return DiscreteJoint.from_counts(joint_counts(cells, labels, M, K))


def test_family_advantage(tests, samples_P, samples_Q):
    """``max_T |E_P T - E_Q T|`` over ``tests``; samples are ``(X, yhat)`` pairs.

    Returns ``(advantage, identifier of the maximizing test)``.
    """
    if not tests:
        raise ValidationError("need at least one test")
    XP, yP = samples_P
    XQ, yQ = samples_Q
    best, best_id = -1.0, None
    for t in tests:
        adv = abs(float(np.mean(t(XP, yP))) - float(np.mean(t(XQ, yQ))))
        if adv > best:
            best, best_id = adv, t.identifier
    return best, best_id


def all_subset_tests(M: int, K: int, cell_fn=None) -> list:
    """Every subset indicator over the ``M*K`` (cell, label) pairs (brute-force family)."""
    pairs = [(c, l) for c in range(M) for l in range(K)]
    if len(pairs) > 16:
        raise ValidationError("subset family too large to enumerate")
    out = []
    for r in range(len(pairs) + 1):
        for combo in itertools.combinations(pairs, r):
            out.append(subset_test(combo, cell_fn, identifier=str(combo)))
    return out


def generalization_gap(model, train, test, rng=None) -> float:
    """``|train error - test error|``."""
    if train.d != test.d or train.K != test.K:
        raise ValidationError("train and test sets disagree on (d, K)")
    tr = float(np.mean(model.predict(train.features, rng) != train.labels))
    te = float(np.mean(model.predict(test.features, rng) != test.labels))
    return abs(tr - te)


def clopper_pearson(successes: int, n: int, alpha: float = 0.05) -> BinomialCI:
    """Exact binomial interval from Beta quantiles."""
    if not (0 <= successes <= n) or n < 1:
        raise ValidationError("need 0 <= successes <= n and n >= 1")
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    k = int(successes)
    lower = 0.0 if k == 0 else float(stats.beta.ppf(alpha / 2, k, n - k + 1))
    upper = 1.0 if k == n else float(stats.beta.ppf(1 - alpha / 2, k + 1, n - k))
    point = k / n
    return BinomialCI(point, min(lower, point), max(upper, point), 1 - alpha, k, int(n))


# ----------------------------------------------------------------- Monte Carlo


def _fit(family, data: LabeledDataset, rng):
    # Any object with train(data, rng) works as a family, not only ClassifierFamilySpec.
    return family.train(data, rng)


def _distinguish_trial(family, source, L, n, t, index, rng):
    S = source.sample(n, rng)
    train_set = S.relabel(L.cells(S), K=L.M)
    model = _fit(family, train_set, rng)
    T = source.sample(t, rng)
    return int(np.sum(model.predict(T.features, rng) != L.cells(T)))


def distinguishability_eps(family, source, L: Partition, n: int, trials: int, rng,
                           test_points_per_trial: int = 1, workers: int = 1,
                           alpha: float = 0.05) -> BinomialCI:
    """Failure rate of ``family`` at predicting ``L(x)`` after training on ``L``-labels.

    Each trial draws ``n`` points, replaces their labels with ``L(x)``, trains,
    and scores fresh test points.
    """
    seed = master_seed(rng)
    fails = run_trials(partial(_distinguish_trial, family, source, L, n, test_points_per_trial),
                       trials, seed, "distinguish", workers)
    return clopper_pearson(int(sum(fails)), trials * test_points_per_trial, alpha)


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    gap: float
    joint_true: DiscreteJoint
    joint_model: DiscreteJoint
    gap_ci: tuple
    test_error: float
    trial_counts_true: np.ndarray
    trial_counts_model: np.ndarray

    def __iter__(self):
        return iter((self.gap, self.joint_true, self.joint_model))

    @property
    def half_width(self) -> float:
        return 0.5 * (self.gap_ci[1] - self.gap_ci[0])


def _calibration_trial(family, source, L, n, t, index, rng):
    S = source.sample(n, rng)
    model = _fit(family, S, rng)
    T = source.sample(t, rng)
    cells = L.cells(T)
    pred = model.predict(T.features, rng)
    K = T.K
    return (joint_counts(cells, T.labels, L.M, K), joint_counts(cells, pred, L.M, K),
            int(np.sum(pred != T.labels)))


def bootstrap_tv_ci(counts_a: np.ndarray, counts_b: np.ndarray, rng, resamples: int = 200,
                    level: float = 0.95) -> tuple:
    """Percentile bootstrap over trials for the TV between two pooled count tables."""
    rng = np.random.default_rng(rng)
    T = len(counts_a)
    idx = rng.integers(T, size=(resamples, T))
    A = counts_a[idx].sum(axis=1).astype(float)
    B = counts_b[idx].sum(axis=1).astype(float)
    A /= A.sum(axis=(1, 2), keepdims=True)
    B /= B.sum(axis=(1, 2), keepdims=True)
    tvs = 0.5 * np.abs(A - B).sum(axis=(1, 2))
    q = (1 - level) / 2
    return float(np.quantile(tvs, q)), float(np.quantile(tvs, 1 - q))


def feature_calibration_gap(family, source, L: Partition, n: int, trials: int,
                            test_points_per_trial: int, rng, workers: int = 1,
                            bootstrap: int = 200) -> CalibrationResult:
    """TV between pooled joints of ``(L(x), y)`` and ``(L(x), f(x))`` on test points.

    A fresh train set (and model) is drawn for every trial. The interval is a
    percentile bootstrap over trials.
    """
    seed = master_seed(rng)
    recs = run_trials(partial(_calibration_trial, family, source, L, n, test_points_per_trial),
                      trials, seed, "calibration", workers)
    ct = np.stack([r[0] for r in recs])
    cm = np.stack([r[1] for r in recs])
    jt = DiscreteJoint.from_counts(ct.sum(axis=0))
    jm = DiscreteJoint.from_counts(cm.sum(axis=0))
    ci = bootstrap_tv_ci(ct, cm, trial_rng(seed, "calibration-bootstrap", 0), bootstrap)
    err = sum(r[2] for r in recs) / (trials * test_points_per_trial)
    return CalibrationResult(tv_distance(jt, jm), jt, jm, ci, err, ct, cm)


@dataclass(frozen=True)
class AgreementResult:
    accuracy: BinomialCI
    agreement: BinomialCI
    gap: float

    def __iter__(self):
        return iter((self.accuracy, self.agreement, self.gap))


def _split_fixed(data: LabeledDataset, rng):
    """Disjoint 40% / 40% / 20% split of a fixed dataset."""
    perm = rng.permutation(data.n)
    a = int(round(0.4 * data.n))
    return data.subset(perm[:a]), data.subset(perm[a:2 * a]), data.subset(perm[2 * a:])


def _agreement_trial(family, source, n, t, index, rng):
    if isinstance(source, LabeledDataset):
        S1, S2, T = _split_fixed(source, rng)
    else:
        S1, S2 = source.sample(n, rng), source.sample(n, rng)
        T = source.sample(t, rng)
    f1 = _fit(family, S1, rng)
    f2 = _fit(family, S2, rng)
    p1 = f1.predict(T.features, rng)
    p2 = f2.predict(T.features, rng)
    return np.array([np.sum(p1 == T.labels), np.sum(p1 == p2), T.n], dtype=np.int64)


def agreement_rate(family, source, n: int, trials: int, test_points_per_trial: int, rng,
                   workers: int = 1, alpha: float = 0.05) -> AgreementResult:
    """Test accuracy of ``f1`` versus agreement of ``f1`` with an independent ``f2``.

    ``source`` may be a sampleable source (two fresh train sets per trial) or a
    fixed :class:`LabeledDataset` (a fresh 40/40/20 split per trial).
    Intervals are Clopper-Pearson over all pooled test points.
    """
    seed = master_seed(rng)
    tot = sum_arrays(run_trials(partial(_agreement_trial, family, source, n, test_points_per_trial),
                                trials, seed, "agreement", workers))
    correct, agree, total = (int(v) for v in tot)
    acc = clopper_pearson(correct, total, alpha)
    agr = clopper_pearson(agree, total, alpha)
    return AgreementResult(acc, agr, abs(acc.point - agr.point))


@dataclass(frozen=True, eq=False)
class PointwiseAgreement:
    values: np.ndarray
    mean: float
    mean_abs: float


def pointwise_agreement_M(ensemble_pairs, test: LabeledDataset, rng=None) -> PointwiseAgreement:
    """Per test point, mean over pairs of ``1{f1(x) = y} - 1{f1(x) = f2(x)}``."""
    if len(ensemble_pairs) == 0:
        raise ValidationError("need at least one pair")
    acc = np.zeros(test.n)
    for f1, f2 in ensemble_pairs:
        p1 = f1.predict(test.features, rng)
        p2 = f2.predict(test.features, rng)
        acc += (p1 == test.labels).astype(float) - (p1 == p2)
    M = acc / len(ensemble_pairs)
    return PointwiseAgreement(M, float(M.mean()), float(np.abs(M).mean()))


def pointwise_density_H(ensemble, X, pmfs, rng=None):
    """Per point TV between the ensemble's vote distribution and the true ``p(y|x)``.

    Returns ``(H, mean H)``.
    """
    pmfs = np.atleast_2d(np.asarray(pmfs, dtype=float))
    if np.any(pmfs < 0) or np.any(np.abs(pmfs.sum(axis=1) - 1) > 1e-9):
        raise ValidationError("every p(y|x) must be a probability vector")
    votes = ensemble_predict_pmf(ensemble, X, rng)
    if votes.shape != pmfs.shape:
        raise ValidationError("pmfs must have one row per point and one column per class")
    H = 0.5 * np.abs(votes - pmfs).sum(axis=1)
    return H, float(H.mean())
