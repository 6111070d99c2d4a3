"""Label-noise channels ``P(noisy label | clean label)``."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from dg_bench.distributions import LabeledDataset, _frozen
from dg_bench.errors import ValidationError
from dg_bench.seeding import as_generator


@dataclass(frozen=True, eq=False)
class ConfusionChannel:
    """``cond[i, j] = P(noisy = i | clean = j)``; every column is a pmf."""

    cond: np.ndarray

    def __post_init__(self):
        C = np.array(self.cond, dtype=float)
        if C.ndim != 2 or C.shape[0] != C.shape[1] or C.shape[0] < 1:
            raise ValidationError("channel must be a square K x K matrix")
        if np.any(C < 0) or np.any(np.abs(C.sum(axis=0) - 1.0) > 1e-12):
            raise ValidationError("channel columns must be nonnegative and sum to 1")
        object.__setattr__(self, "cond", _frozen(C))

    @property
    def K(self) -> int:
        return self.cond.shape[0]

    def joint(self, clean_marginal) -> np.ndarray:
        """Joint over (clean, noisy) given the clean-label marginal."""
        return (self.cond * np.asarray(clean_marginal, dtype=float)[None, :]).T

    def to_json(self) -> str:
        return json.dumps({"K": self.K, "columns_are_clean_labels": True,
                           "matrix": self.cond.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "ConfusionChannel":
        obj = json.loads(text)
        if obj.get("columns_are_clean_labels") is not True:
            raise ValidationError("channel JSON must declare columns_are_clean_labels: true")
        ch = cls(np.array(obj["matrix"], dtype=float))
        if "K" in obj and obj["K"] != ch.K:
            raise ValidationError("declared K does not match matrix size")
        return ch


def identity_channel(K: int) -> ConfusionChannel:
    return ConfusionChannel(np.eye(K))


def targeted_flip(K: int, source: int, target: int, p: float) -> ConfusionChannel:
    """Relabel class ``source`` as ``target`` with probability ``p``."""
    if source == target:
        raise ValidationError("flip source and target must differ")
    if not (0 <= source < K and 0 <= target < K):
        raise ValidationError("flip classes must lie in [0, K)")
    if not 0.0 <= p <= 1.0:
        raise ValidationError("p must be a probability")
    C = np.eye(K)
    C[source, source] = 1.0 - p
    C[target, source] = p
    return ConfusionChannel(C)


def random_sparse_channel(K: int, rng) -> ConfusionChannel:
    """Keep each class w.p. 0.5; send 0.3 and 0.2 to two distinct random other classes."""
    if K < 3:
        raise ValidationError("random sparse channel needs K >= 3")
    rng = as_generator(rng)
    C = np.zeros((K, K))
    for j in range(K):
        others = np.delete(np.arange(K), j)
        a, b = rng.choice(others, size=2, replace=False)
        C[j, j] = 0.5
        C[a, j] = 0.3
        C[b, j] = 0.2
    return ConfusionChannel(C)


def apply_channel(data: LabeledDataset, C: ConfusionChannel, rng) -> LabeledDataset:
    """Resample each label from its column of ``C``; features are untouched.

    The labels before noising are kept as ``metadata["clean_labels"]`` (the
    first clean labels survive repeated noising).
    """
    if data.K != C.K:
        raise ValidationError(f"dataset has K={data.K} but channel has K={C.K}")
    rng = as_generator(rng)
    cum = np.cumsum(C.cond, axis=0)[:, data.labels]
    u = rng.random(data.n)
    noisy = np.minimum((u[None, :] >= cum).sum(axis=0), C.K - 1)
    # Identity columns must stay exact even if cumsum rounds below 1.
    noisy = np.where(C.cond[data.labels, data.labels] == 1.0, data.labels, noisy)
    clean = data.metadata.get("clean_labels", data.labels)
    return data.relabel(noisy, clean_labels=clean)
