"""Data sources: Gaussian cluster mixtures, finite atom domains, labeled datasets.

Sources expose ``sample(n, rng) -> LabeledDataset``; the metric code relies on
nothing else, so any object with that method can be plugged in.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from dg_bench.errors import (
    EmptyFile,
    MissingLabelColumn,
    NonNumericFeature,
    ValidationError,
)
from dg_bench.seeding import as_generator

_SUM_TOL = 1e-12


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _check_pmf_rows(pmfs: np.ndarray, what: str) -> None:
    if np.any(pmfs < 0):
        raise ValidationError(f"{what} has negative entries")
    if np.any(np.abs(pmfs.sum(axis=-1) - 1.0) > _SUM_TOL):
        raise ValidationError(f"{what} rows must sum to 1")


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """A realized sample ``{(x_i, y_i)}``.

    ``partition_cells`` carries a known feature value ``L(x_i)`` when the
    generator knows it (cluster id or atom id). ``metadata`` holds e.g.
    ``label_names`` or ``clean_labels`` after a noise channel was applied.
    """

    features: np.ndarray
    labels: np.ndarray
    K: int
    partition_cells: np.ndarray | None = None
    metadata: Mapping = field(default_factory=dict)

    def __post_init__(self):
        X = np.array(self.features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.labels)
        if X.ndim != 2 or len(X) < 1:
            raise ValidationError("dataset needs at least one row of features")
        if y.shape != (len(X),):
            raise ValidationError("labels must be a vector matching the feature rows")
        if not np.all(np.isfinite(X)):
            raise ValidationError("features contain non-finite values")
        if y.dtype.kind not in "iu":
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise ValidationError("labels must be integers")
        y = y.astype(np.int64)
        if self.K < 1 or y.min() < 0 or y.max() >= self.K:
            raise ValidationError(f"labels must lie in [0, {self.K})")
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "labels", _frozen(y, np.int64))
        if self.partition_cells is not None:
            cells = np.asarray(self.partition_cells)
            if cells.shape != y.shape or (len(cells) and cells.min() < 0):
                raise ValidationError("partition_cells must be nonnegative, one per row")
            object.__setattr__(self, "partition_cells", _frozen(cells, np.int64))
        object.__setattr__(self, "metadata", dict(self.metadata))

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def clean_labels(self) -> np.ndarray:
        return self.metadata.get("clean_labels", self.labels)

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        meta = dict(self.metadata)
        if "clean_labels" in meta:
            meta["clean_labels"] = _frozen(np.asarray(meta["clean_labels"])[idx], np.int64)
        cells = None if self.partition_cells is None else self.partition_cells[idx]
        return LabeledDataset(self.features[idx], self.labels[idx], self.K, cells, meta)

    def relabel(self, labels, K: int | None = None, **metadata) -> "LabeledDataset":
        meta = dict(self.metadata)
        meta.update(metadata)
        return LabeledDataset(self.features, labels, self.K if K is None else K,
                              self.partition_cells, meta)

    def marginal(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.K) / self.n

    def equals(self, other: "LabeledDataset") -> bool:
        same_cells = (self.partition_cells is None and other.partition_cells is None) or (
            self.partition_cells is not None
            and other.partition_cells is not None
            and np.array_equal(self.partition_cells, other.partition_cells)
        )
        return (
            self.K == other.K
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and same_cells
        )


@dataclass(frozen=True, eq=False)
class ClusterMixture:
    """Mixture of isotropic Gaussian clusters, each with its own label pmf.

    Parameters
    ----------
    weights : (C,) mixing probabilities
    centers : (C, d) cluster means
    spreads : (C,) isotropic standard deviations
    label_pmfs : (C, K) conditional label distribution inside each cluster
    cluster_ids : (C,) partition cell of each cluster (several clusters may share one)
    """

    weights: np.ndarray
    centers: np.ndarray
    spreads: np.ndarray
    label_pmfs: np.ndarray
    cluster_ids: np.ndarray | None = None
    cluster_names: tuple = ()
    label_names: tuple = ()

    def __post_init__(self):
        w = _frozen(self.weights)
        centers = np.array(self.centers, dtype=float)
        if centers.ndim == 1:
            centers = centers[:, None]
        pmfs = _frozen(np.atleast_2d(self.label_pmfs))
        spreads = _frozen(np.broadcast_to(np.asarray(self.spreads, dtype=float), w.shape))
        C = len(w)
        if C < 1 or centers.shape[0] != C or pmfs.shape[0] != C:
            raise ValidationError("weights, centers and label_pmfs must describe the same clusters")
        if np.any(w < 0) or abs(w.sum() - 1.0) > _SUM_TOL:
            raise ValidationError("cluster weights must be nonnegative and sum to 1")
        _check_pmf_rows(pmfs, "label_pmfs")
        if np.any(spreads <= 0):
            raise ValidationError("spreads must be positive")
        ids = np.arange(C) if self.cluster_ids is None else np.asarray(self.cluster_ids)
        if ids.shape != (C,) or ids.min() < 0:
            raise ValidationError("cluster_ids must be nonnegative, one per cluster")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "centers", _frozen(centers))
        object.__setattr__(self, "spreads", spreads)
        object.__setattr__(self, "label_pmfs", pmfs)
        object.__setattr__(self, "cluster_ids", _frozen(ids, np.int64))
        object.__setattr__(self, "cluster_names", tuple(self.cluster_names))
        object.__setattr__(self, "label_names", tuple(self.label_names))

    @property
    def d(self) -> int:
        return self.centers.shape[1]

    @property
    def K(self) -> int:
        return self.label_pmfs.shape[1]

    @property
    def M(self) -> int:
        return int(self.cluster_ids.max()) + 1

    def sample(self, n: int, rng) -> LabeledDataset:
        return sample_dataset(self, n, rng)

    def conditional_pmf(self, X) -> np.ndarray:
        """Exact ``p(y | x)`` under the mixture (posterior-weighted cluster pmfs)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        sq = ((X[:, None, :] - self.centers[None, :, :]) ** 2).sum(axis=2)
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        logp = logw - 0.5 * sq / self.spreads**2 - self.d * np.log(self.spreads)
        logp -= logp.max(axis=1, keepdims=True)
        post = np.exp(logp)
        post /= post.sum(axis=1, keepdims=True)
        return post @ self.label_pmfs

    def with_label_pmfs(self, label_pmfs) -> "ClusterMixture":
        return ClusterMixture(self.weights, self.centers, self.spreads, label_pmfs,
                              self.cluster_ids, self.cluster_names, self.label_names)


@dataclass(frozen=True, eq=False)
class FiniteDomainDistribution:
    """Distribution over finitely many atoms with exact per-atom label pmfs.

    Off-diagonal distances must be pairwise distinct so the nearest neighbour
    of any atom among any multiset of atoms is a unique atom.
    """

    probs: np.ndarray
    label_pmfs: np.ndarray
    pairwise_distance: np.ndarray | None = None
    atom_features: np.ndarray | None = None

    def __post_init__(self):
        p = _frozen(self.probs)
        pmfs = _frozen(np.atleast_2d(self.label_pmfs))
        A = len(p)
        if A < 1 or pmfs.shape[0] != A:
            raise ValidationError("probs and label_pmfs must have one row per atom")
        if np.any(p < 0) or abs(p.sum() - 1.0) > _SUM_TOL:
            raise ValidationError("atom probabilities must be nonnegative and sum to 1")
        _check_pmf_rows(pmfs, "label_pmfs")
        feats = None
        if self.atom_features is not None:
            feats = np.array(self.atom_features, dtype=float)
            if feats.ndim == 1:
                feats = feats[:, None]
            if feats.shape[0] != A:
                raise ValidationError("atom_features must have one row per atom")
        if self.pairwise_distance is None:
            if feats is None:
                raise ValidationError("need pairwise_distance or atom_features")
            D = np.sqrt(((feats[:, None, :] - feats[None, :, :]) ** 2).sum(axis=2))
        else:
            D = np.array(self.pairwise_distance, dtype=float)
        if D.shape != (A, A):
            raise ValidationError("pairwise_distance must be A x A")
        if not np.allclose(D, D.T, rtol=0, atol=0) or np.any(np.diag(D) != 0) or np.any(D < 0):
            raise ValidationError("pairwise_distance must be symmetric, nonnegative, zero diagonal")
        off = D[np.triu_indices(A, 1)]
        if np.any(off <= 0) or len(np.unique(off)) != len(off):
            raise ValidationError("off-diagonal distances must be positive and pairwise distinct")
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "label_pmfs", pmfs)
        object.__setattr__(self, "pairwise_distance", _frozen(D))
        object.__setattr__(self, "atom_features", None if feats is None else _frozen(feats))

    @property
    def n_atoms(self) -> int:
        return len(self.probs)

    @property
    def K(self) -> int:
        return self.label_pmfs.shape[1]

    @property
    def M(self) -> int:
        return self.n_atoms

    def sample(self, n: int, rng) -> LabeledDataset:
        """Draw ``n`` (atom, label) pairs; features are atom coordinates (or atom ids)."""
        rng = as_generator(rng)
        atoms = rng.choice(self.n_atoms, size=n, p=self.probs)
        labels = _sample_rows(self.label_pmfs[atoms], rng)
        feats = (self.atom_features[atoms] if self.atom_features is not None
                 else atoms[:, None].astype(float))
        return LabeledDataset(feats, labels, self.K, atoms)

    def conditional_pmf_of_atoms(self, atoms) -> np.ndarray:
        return self.label_pmfs[np.asarray(atoms)]


def _sample_rows(pmfs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of ``pmfs``."""
    cum = np.cumsum(pmfs, axis=1)
    u = rng.random(len(pmfs))[:, None]
    return np.minimum((u >= cum).sum(axis=1), pmfs.shape[1] - 1)


def toy_four_cluster(separation: float, noise_p: float, spread: float = 1.0) -> ClusterMixture:
    """Four equiprobable clusters {Truck, Ship, Cat, Dog} at the corners of a square.

    Truck and Ship are ``Object`` (label 0), Cat and Dog are ``Animal`` (label 1);
    Cat points are labeled Object with probability ``noise_p``.
    """
    if not 0.0 <= noise_p <= 1.0:
        raise ValidationError("noise_p must be a probability")
    if separation <= 0:
        raise ValidationError("separation must be positive")
    s = float(separation)
    centers = [[0.0, s], [s, s], [0.0, 0.0], [s, 0.0]]
    pmfs = [[1.0, 0.0], [1.0, 0.0], [noise_p, 1.0 - noise_p], [0.0, 1.0]]
    return ClusterMixture(
        weights=np.full(4, 0.25),
        centers=centers,
        spreads=spread,
        label_pmfs=pmfs,
        cluster_names=("Truck", "Ship", "Cat", "Dog"),
        label_names=("Object", "Animal"),
    )


TOY_CAT = 2


def two_cluster(separation: float, noise_p: float, d: int = 2, spread: float = 1.0) -> ClusterMixture:
    """Two equiprobable clusters of classes 0 and 1; class 0 is labeled 1 w.p. ``noise_p``."""
    centers = np.zeros((2, d))
    centers[1, 0] = separation
    return ClusterMixture(np.array([0.5, 0.5]), centers, spread,
                          [[1.0 - noise_p, noise_p], [0.0, 1.0]])


def gaussian_clusters(
    n_clusters: int,
    K: int,
    d: int,
    separation: float,
    spread: float = 1.0,
    label_noise: float = 0.0,
    center_seed: int = 0,
    weights=None,
) -> ClusterMixture:
    """Random cluster layout; cluster ``c`` has majority class ``c % K``.

    ``label_noise`` moves that much mass uniformly onto the other classes.
    Centers are drawn from a standard normal scaled by ``separation``.
    """
    rng = np.random.default_rng(center_seed)
    centers = separation * rng.standard_normal((n_clusters, d))
    pmfs = np.full((n_clusters, K), label_noise / (K - 1) if K > 1 else 0.0)
    pmfs[np.arange(n_clusters), np.arange(n_clusters) % K] = 1.0 - label_noise if K > 1 else 1.0
    w = np.full(n_clusters, 1.0 / n_clusters) if weights is None else np.asarray(weights, float)
    return ClusterMixture(w / w.sum(), centers, spread, pmfs)


def sample_dataset(source: ClusterMixture, n: int, rng) -> LabeledDataset:
    """Draw ``n`` i.i.d. points: cluster by weight, Gaussian feature, label by cluster pmf."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    rng = as_generator(rng)
    comp = rng.choice(len(source.weights), size=n, p=source.weights)
    noise = rng.standard_normal((n, source.d))
    X = source.centers[comp] + source.spreads[comp, None] * noise
    y = _sample_rows(source.label_pmfs[comp], rng)
    return LabeledDataset(X, y, source.K, source.cluster_ids[comp],
                          {"components": _frozen(comp, np.int64)})


def enumerate_joint(source: FiniteDomainDistribution, L):
    """Exact law of ``(L(x), y)``: mass(c, l) = sum over atoms in cell c of p(a) p(l | a)."""
    from dg_bench.metrics import DiscreteJoint

    cells = L.atom_cells(source.n_atoms)
    mass = np.zeros((L.M, source.K))
    np.add.at(mass, cells, source.probs[:, None] * source.label_pmfs)
    return DiscreteJoint(mass)


# --------------------------------------------------------------------- CSV I/O


@dataclass(frozen=True)
class CsvSchema:
    """Column layout. ``features=None`` means every column except label/cell."""

    label: str = "label"
    features: tuple | None = None
    cell: str | None = None


def load_csv(path, schema: CsvSchema | None = None) -> LabeledDataset:
    """Read a UTF-8 CSV with a header row and a ``label`` column.

    Label strings map to indices in lexicographic order; the names are kept in
    ``metadata["label_names"]``.
    """
    schema = schema or CsvSchema()
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise EmptyFile(f"empty file: {path}")
    header, body = rows[0], rows[1:]
    if schema.label not in header:
        raise MissingLabelColumn("missing label column")
    if not body:
        raise EmptyFile(f"no data rows in {path}")
    li = header.index(schema.label)
    ci = header.index(schema.cell) if schema.cell and schema.cell in header else None
    if schema.features is None:
        fcols = [i for i, h in enumerate(header) if i not in (li, ci)]
    else:
        fcols = [header.index(c) for c in schema.features]
    X = np.empty((len(body), len(fcols)))
    for r, row in enumerate(body):
        if len(row) != len(header):
            raise NonNumericFeature(f"row {r + 2} has {len(row)} fields, expected {len(header)}")
        for j, c in enumerate(fcols):
            try:
                X[r, j] = float(row[c])
            except ValueError:
                raise NonNumericFeature(
                    f"non-numeric feature {header[c]!r} at row {r + 2}: {row[c]!r}") from None
    raw = [row[li] for row in body]
    names = tuple(sorted(set(raw)))
    index = {name: i for i, name in enumerate(names)}
    y = np.array([index[v] for v in raw])
    cells = None if ci is None else np.array([int(row[ci]) for row in body])
    return LabeledDataset(X, y, len(names), cells,
                          {"label_names": names, "feature_names": tuple(header[c] for c in fcols)})


def write_csv(data: LabeledDataset, path, feature_names: Sequence[str] | None = None) -> None:
    """Write in the dialect :func:`load_csv` reads.

    Integer labels are zero-padded so lexicographic order equals numeric order.
    """
    names = feature_names or data.metadata.get("feature_names") or [f"x{j}" for j in range(data.d)]
    label_names = data.metadata.get("label_names")
    if label_names is None:
        width = len(str(data.K - 1))
        label_names = [f"{k:0{width}d}" for k in range(data.K)]
    header = list(names) + ["label"] + (["cell"] if data.partition_cells is not None else [])
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.n):
            row = [repr(float(v)) for v in data.features[i]] + [label_names[data.labels[i]]]
            if data.partition_cells is not None:
                row.append(str(int(data.partition_cells[i])))
            w.writerow(row)


# ----------------------------------------------------------------- rebalancing


def rebalance_counts(available, target_marginal, total: int | None = None) -> np.ndarray:
    """Per-class counts ``floor(N * t_l)`` for the largest feasible ``N``.

    ``N = min over classes with t_l > 0 of available_l / t_l``, optionally capped at ``total``.
    """
    avail = np.asarray(available, dtype=float)
    t = np.asarray(target_marginal, dtype=float)
    if np.any(t < 0) or abs(t.sum() - 1.0) > 1e-9:
        raise ValidationError("target_marginal must be a probability vector")
    need = t > 0
    if np.any(avail[need] == 0):
        missing = np.flatnonzero(need & (avail == 0)).tolist()
        raise ValidationError(f"classes {missing} have target mass but no samples")
    N = float(np.min(avail[need] / t[need]))
    if total is not None:
        N = min(N, float(total))
    counts = np.floor(N * t + 1e-9).astype(np.int64)
    return np.minimum(counts, avail.astype(np.int64))


def rebalance(data: LabeledDataset, target_marginal, rng, total: int | None = None) -> LabeledDataset:
    """Subsample without replacement so class counts follow ``target_marginal``."""
    t = np.asarray(target_marginal, dtype=float)
    if t.shape != (data.K,):
        raise ValidationError("target_marginal must have one entry per class")
    rng = as_generator(rng)
    counts = rebalance_counts(np.bincount(data.labels, minlength=data.K), t, total)
    keep = []
    for label, c in enumerate(counts):
        pool = np.flatnonzero(data.labels == label)
        if c:
            keep.append(rng.choice(pool, size=c, replace=False))
    idx = np.concatenate(keep) if keep else np.array([], dtype=np.int64)
    return data.subset(rng.permutation(idx))


def linear_marginal(K: int) -> np.ndarray:
    """``p(y = l)`` proportional to ``l + 1``."""
    w = np.arange(1, K + 1, dtype=float)
    return w / w.sum()
