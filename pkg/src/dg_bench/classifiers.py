"""Interpolating learners written from scratch.

All learners break ties toward the smallest index: nearest neighbours by
train-set position, votes and kernel scores by class index.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist

from dg_bench.distributions import LabeledDataset
from dg_bench.errors import DuplicatePointsError, SingularSystemError, ValidationError
from dg_bench.seeding import as_generator

KINDS = ("one_nn", "k_nn", "randomized_k_nn", "decision_tree", "kernel")
KERNELS = ("rbf", "laplace")
_CHUNK = 2048
# Kernel class scores closer than this (relative to the dominant kernel weight) tie.
SCORE_TIE_TOL = 1e-10


@dataclass(frozen=True)
class ClassifierFamilySpec:
    """Which learner to train, plus its hyperparameters.

    ``sigma`` is the per-dimension bandwidth; kernels use ``sigma * sqrt(d)``.
    ``lam`` is the ridge parameter (``"lambda"`` in JSON).
    """

    kind: str
    k: int = 1
    kernel_kind: str = "rbf"
    sigma: float = 1.0
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown classifier kind {self.kind!r}")
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.kernel_kind not in KERNELS:
            raise ValidationError(f"unknown kernel {self.kernel_kind!r}")
        if not self.sigma > 0:
            raise ValidationError("sigma must be positive")
        if not self.lam >= 0:
            raise ValidationError("lambda must be nonnegative")

    def train(self, data: LabeledDataset, rng=None) -> "TrainedClassifier":
        return train(self, data, rng)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind in ("k_nn", "randomized_k_nn"):
            out["k"] = self.k
        if self.kind == "kernel":
            out.update(kernel_kind=self.kernel_kind, sigma=self.sigma)
            out["lambda"] = self.lam
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ClassifierFamilySpec":
        obj = dict(obj)
        if "lambda" in obj:
            obj["lam"] = obj.pop("lambda")
        return cls(**obj)

    @property
    def name(self) -> str:
        if self.kind in ("k_nn", "randomized_k_nn"):
            return f"{self.kind}(k={self.k})"
        if self.kind == "kernel":
            return f"{self.kernel_kind}(sigma={self.sigma:g},lambda={self.lam:g})"
        return self.kind


def one_nn() -> ClassifierFamilySpec:
    return ClassifierFamilySpec("one_nn")


def k_nn(k: int) -> ClassifierFamilySpec:
    return ClassifierFamilySpec("k_nn", k=k)


def randomized_k_nn(k: int) -> ClassifierFamilySpec:
    return ClassifierFamilySpec("randomized_k_nn", k=k)


def decision_tree() -> ClassifierFamilySpec:
    return ClassifierFamilySpec("decision_tree")


def kernel(kernel_kind: str = "rbf", sigma: float = 1.0, lam: float = 0.0) -> ClassifierFamilySpec:
    return ClassifierFamilySpec("kernel", kernel_kind=kernel_kind, sigma=sigma, lam=lam)


# ---------------------------------------------------------------- models


class TrainedClassifier:
    """Base class; subclasses implement ``predict(X, rng)`` on a batch."""

    spec: ClassifierFamilySpec
    K: int
    d: int
    interpolating: bool = True

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None] if self.d == 1 else X[None, :]
        if X.ndim != 2 or X.shape[1] != self.d:
            raise ValidationError(f"expected points of dimension {self.d}, got shape {X.shape}")
        return X

    def predict(self, X, rng=None) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


class NearestNeighborModel(TrainedClassifier):
    def __init__(self, spec, data: LabeledDataset):
        self.spec = spec
        self.X = data.features
        self.y = data.labels
        self.K = data.K
        self.d = data.d

    def neighbors(self, X, k: int) -> np.ndarray:
        """Indices of the ``k`` nearest train points, nearest first, ties by index."""
        X = self._check(X)
        k = min(k, len(self.y))
        out = np.empty((len(X), k), dtype=np.int64)
        for lo in range(0, len(X), _CHUNK):
            D = cdist(X[lo:lo + _CHUNK], self.X, "sqeuclidean")
            if k == 1:
                out[lo:lo + _CHUNK, 0] = np.argmin(D, axis=1)
            else:
                out[lo:lo + _CHUNK] = np.argsort(D, axis=1, kind="stable")[:, :k]
        return out

    def predict(self, X, rng=None) -> np.ndarray:
        kind, k = self.spec.kind, self.spec.k
        if kind == "one_nn" or k == 1:
            return self.y[self.neighbors(X, 1)[:, 0]]
        nb = self.neighbors(X, k)
        if kind == "k_nn":
            votes = np.zeros((len(nb), self.K), dtype=np.int64)
            np.add.at(votes, (np.repeat(np.arange(len(nb)), nb.shape[1]), self.y[nb].ravel()), 1)
            return np.argmax(votes, axis=1)
        rng = as_generator(rng)
        pick = rng.integers(nb.shape[1], size=len(nb))
        return self.y[nb[np.arange(len(nb)), pick]]

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "K": self.K, "d": self.d,
                "train_features": self.X.tolist(), "train_labels": self.y.tolist()}


class TreeModel(TrainedClassifier):
    """Binary tree in flat arrays; ``feature == -1`` marks a leaf."""

    def __init__(self, spec, K, d, feature, threshold, left, right, value, interpolating):
        self.spec = spec
        self.K = K
        self.d = d
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.int64)
        self.interpolating = interpolating

    @property
    def depth(self) -> int:
        depth = np.zeros(len(self.feature), dtype=np.int64)
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X) -> np.ndarray:
        X = self._check(X)
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            nd = node[active]
            go_left = X[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict(self, X, rng=None) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "K": self.K, "d": self.d,
                "interpolating": self.interpolating,
                "nodes": {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                          "left": self.left.tolist(), "right": self.right.tolist(),
                          "value": self.value.tolist()}}


class KernelModel(TrainedClassifier):
    def __init__(self, spec, X, alpha, K):
        self.spec = spec
        self.X = X
        self.alpha = alpha
        self.K = K
        self.d = X.shape[1]
        self.sigma_tilde = spec.sigma * math.sqrt(self.d)

    def _log_kernel(self, X) -> np.ndarray:
        if self.spec.kernel_kind == "rbf":
            return -cdist(X, self.X, "sqeuclidean") / (2.0 * self.sigma_tilde**2)
        return -cdist(X, self.X, "euclidean") / self.sigma_tilde

    def decision_function(self, X, normalized: bool = False) -> np.ndarray:
        """Class scores ``g(x) = sum_i alpha_i k(x_i, x)``.

        With ``normalized=True`` each row is divided by the largest kernel
        weight of that row, which leaves the argmax unchanged and avoids
        underflow far from the train set.
        """
        X = self._check(X)
        out = np.empty((len(X), self.K))
        for lo in range(0, len(X), _CHUNK):
            logk = self._log_kernel(X[lo:lo + _CHUNK])
            if normalized:
                logk -= logk.max(axis=1, keepdims=True)
            out[lo:lo + _CHUNK] = np.exp(logk) @ self.alpha
        return out

    def predict(self, X, rng=None) -> np.ndarray:
        return argmax_smallest(self.decision_function(X, normalized=True), SCORE_TIE_TOL)

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "K": self.K, "d": self.d,
                "sigma_tilde": self.sigma_tilde,
                "support": self.X.tolist(), "alpha": self.alpha.tolist()}


def argmax_smallest(scores: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Row-wise argmax; classes within ``tol`` of the maximum tie, smallest index wins."""
    scores = np.atleast_2d(scores)
    best = scores.max(axis=1, keepdims=True)
    return np.argmax(scores >= best - tol, axis=1)


# ---------------------------------------------------------------- training


def kernel_eval(kind: str, sigma: float, d: int, x1, x2) -> float:
    """``exp(-|x1-x2|^2 / (2 s^2))`` (rbf) or ``exp(-|x1-x2| / s)`` (laplace), ``s = sigma sqrt(d)``."""
    x1 = np.asarray(x1, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x1.shape != (d,) or x2.shape != (d,):
        raise ValidationError(f"vectors must have dimension {d}")
    s = sigma * math.sqrt(d)
    dist = float(np.linalg.norm(x1 - x2))
    if kind == "rbf":
        return math.exp(-dist * dist / (2.0 * s * s))
    if kind == "laplace":
        return math.exp(-dist / s)
    raise ValidationError(f"unknown kernel {kind!r}")


def kernel_matrix(kind: str, sigma: float, A, B) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    s = sigma * math.sqrt(A.shape[1])
    if kind == "rbf":
        return np.exp(-cdist(A, B, "sqeuclidean") / (2.0 * s * s))
    return np.exp(-cdist(A, B, "euclidean") / s)


def one_hot(labels, K: int) -> np.ndarray:
    Y = np.zeros((len(labels), K))
    Y[np.arange(len(labels)), labels] = 1.0
    return Y


def _train_kernel(spec, data: LabeledDataset) -> KernelModel:
    X = data.features
    n = len(X)
    if spec.lam == 0 and len(np.unique(X, axis=0)) < n:
        raise DuplicatePointsError("duplicate points under interpolation")
    G = kernel_matrix(spec.kernel_kind, spec.sigma, X, X)
    A = G + spec.lam * np.eye(n)
    Y = one_hot(data.labels, data.K)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            alpha = scipy.linalg.solve(A, Y, assume_a="sym")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularSystemError(f"kernel system is singular: {exc}",
                                  condition=float(np.linalg.cond(A))) from exc
    resid = float(np.max(np.abs(A @ alpha - Y)))
    if not np.isfinite(resid) or resid > 1e-8 * n:
        cond = float(np.linalg.cond(A))
        raise SingularSystemError(
            f"kernel solve residual {resid:.3g} exceeds {1e-8 * n:.3g} (condition number {cond:.3g})",
            condition=cond)
    return KernelModel(spec, X, alpha, data.K)


def _gini_split(xs: np.ndarray, ys: np.ndarray, K: int):
    """Best midpoint split of one feature: (weighted impurity, threshold) or None."""
    order = np.argsort(xs, kind="stable")
    xs = xs[order]
    valid = xs[1:] > xs[:-1]
    if not valid.any():
        return None
    m = len(xs)
    cum = np.cumsum(one_hot(ys[order], K), axis=0)[:-1]
    total = cum[-1] + (ys[order[-1]] == np.arange(K))
    n_left = np.arange(1, m, dtype=float)
    n_right = m - n_left
    right = total - cum
    gini_left = 1.0 - ((cum / n_left[:, None]) ** 2).sum(axis=1)
    gini_right = 1.0 - ((right / n_right[:, None]) ** 2).sum(axis=1)
    impurity = (n_left * gini_left + n_right * gini_right) / m
    impurity[~valid] = np.inf
    i = int(np.argmin(impurity))
    thr = 0.5 * (xs[i] + xs[i + 1])
    if thr >= xs[i + 1]:  # midpoint rounded up onto the right value
        thr = xs[i]
    return float(impurity[i]), float(thr)


def gini(labels, K: int) -> float:
    p = np.bincount(np.asarray(labels), minlength=K) / len(labels)
    return float(1.0 - (p**2).sum())


def _train_tree(spec, data: LabeledDataset, rng) -> TreeModel:
    rng = as_generator(rng)
    X, y, K, d = data.features, data.labels, data.K, data.d
    max_features = max(1, int(math.isqrt(d)))
    feature, threshold, left, right, value = [], [], [], [], []
    interpolating = True

    def new_node():
        for arr, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (value, 0)):
            arr.append(v)
        return len(feature) - 1

    stack = [(new_node(), np.arange(len(y)))]
    while stack:
        node, idx = stack.pop()
        ys = y[idx]
        counts = np.bincount(ys, minlength=K)
        value[node] = int(np.argmax(counts))
        if counts[value[node]] == len(idx):
            continue
        # Draw features in random order; like the usual random-forest rule we
        # keep scanning past the first max_features only while none can split.
        best = None
        for tried, j in enumerate(rng.permutation(d)):
            if tried >= max_features and best is not None:
                break
            split = _gini_split(X[idx, j], ys, K)
            if split is not None and (best is None or split[0] < best[0]):
                best = (split[0], int(j), split[1])
        if best is None:
            interpolating = False
            continue
        _, j, thr = best
        mask = X[idx, j] <= thr
        l, r = new_node(), new_node()
        feature[node], threshold[node], left[node], right[node] = j, thr, l, r
        stack.append((r, idx[~mask]))
        stack.append((l, idx[mask]))
    return TreeModel(spec, K, d, feature, threshold, left, right, value, interpolating)


def train(spec: ClassifierFamilySpec, data: LabeledDataset, rng=None) -> TrainedClassifier:
    """Fit ``spec`` on ``data``. ``rng`` is only consumed by the tree's feature sampling."""
    if data.n < 1:
        raise ValidationError("cannot train on an empty dataset")
    if spec.kind in ("one_nn", "k_nn", "randomized_k_nn"):
        return NearestNeighborModel(spec, data)
    if spec.kind == "decision_tree":
        return _train_tree(spec, data, rng if rng is not None else 0)
    return _train_kernel(spec, data)


def predict(model: TrainedClassifier, x, rng=None) -> int:
    """Label of a single point."""
    x = np.asarray(x, dtype=float).ravel()
    if x.shape != (model.d,):
        raise ValidationError(f"expected a point of dimension {model.d}, got {x.shape[0]}")
    return int(model.predict(x[None, :], rng)[0])


def train_error(model: TrainedClassifier, data: LabeledDataset, rng=None) -> float:
    return float(np.mean(model.predict(data.features, rng) != data.labels))


# ---------------------------------------------------------------- ensembles


def ensemble_predict_pmf(models, X, rng=None) -> np.ndarray:
    """Empirical distribution of member predictions, one row per point."""
    if len(models) == 0:
        raise ValidationError("ensemble is empty")
    K = models[0].K
    if any(m.K != K or m.d != models[0].d for m in models):
        raise ValidationError("ensemble members disagree on K or d")
    rng = as_generator(rng) if rng is not None else None
    X = np.atleast_2d(np.asarray(X, dtype=float))
    counts = np.zeros((len(X), K))
    rows = np.arange(len(X))
    for m in models:
        np.add.at(counts, (rows, m.predict(X, rng)), 1.0)
    return counts / len(models)


def plurality_ensemble(models, X, rng=None) -> np.ndarray:
    return argmax_smallest(ensemble_predict_pmf(models, X, rng))
