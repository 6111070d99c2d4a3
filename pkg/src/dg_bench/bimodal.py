"""EASY/HARD behavioural model of a classifier family.

Test points are atoms ``0..n_atoms-1`` drawn uniformly; the first
``round(hard_fraction * n_atoms)`` are hard. Labels are deterministic
(``atom % K``). A "trained" model answers easy atoms correctly and gives each
hard atom a label drawn uniformly at training time, independently per model.
Under this model accuracy and agreement both equal ``(1 - h) + h / K``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dg_bench.distributions import LabeledDataset
from dg_bench.errors import ValidationError
from dg_bench.seeding import as_generator


@dataclass(frozen=True)
class BimodalSource:
    hard_fraction: float
    K: int
    n_atoms: int = 200

    def __post_init__(self):
        if not 0.0 <= self.hard_fraction <= 1.0:
            raise ValidationError("hard_fraction must lie in [0, 1]")
        if self.K < 2 or self.n_atoms < 1:
            raise ValidationError("need K >= 2 and at least one atom")

    @property
    def n_hard(self) -> int:
        return int(round(self.hard_fraction * self.n_atoms))

    @property
    def M(self) -> int:
        return self.n_atoms

    def is_hard(self, atoms) -> np.ndarray:
        return np.asarray(atoms) < self.n_hard

    def label_of(self, atoms) -> np.ndarray:
        return np.asarray(atoms, dtype=np.int64) % self.K

    def sample(self, n: int, rng) -> LabeledDataset:
        atoms = as_generator(rng).integers(self.n_atoms, size=n)
        return LabeledDataset(atoms[:, None].astype(float), self.label_of(atoms), self.K, atoms)

    def expected_rate(self) -> float:
        h = self.n_hard / self.n_atoms
        return (1.0 - h) + h / self.K


class BimodalModel:
    def __init__(self, source: BimodalSource, hard_answers: np.ndarray):
        self.source = source
        self.hard_answers = hard_answers
        self.K = source.K
        self.d = 1

    def predict(self, X, rng=None) -> np.ndarray:
        atoms = np.asarray(X, dtype=float).reshape(-1).astype(np.int64)
        out = self.source.label_of(atoms)
        hard = self.source.is_hard(atoms)
        out[hard] = self.hard_answers[atoms[hard]]
        return out


@dataclass(frozen=True)
class BimodalFamily:
    """Family whose members follow the EASY/HARD model; the train set is ignored."""

    source: BimodalSource

    def train(self, data: LabeledDataset, rng) -> BimodalModel:
        answers = as_generator(rng).integers(self.source.K, size=self.source.n_atoms)
        return BimodalModel(self.source, answers)
