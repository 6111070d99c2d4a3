"""Exact 1-nearest-neighbour laws on finite domains, by enumerating train sets.

Everything here derives from the transition matrix
``T[x, a] = P(NN_S(x) = a)`` for ``S ~ D^n``, computed by summing over all
``|atoms|^n`` ordered train sets with their probabilities. Labels are never
sampled: they are integrated through the atoms' label pmfs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dg_bench.distributions import FiniteDomainDistribution
from dg_bench.errors import EnumerationBudgetError, ValidationError
from dg_bench.metrics import DiscreteJoint, Partition, tv_distance, tv_pmf
from dg_bench.seeding import as_generator

THEOREM_TOL = 1e-9


@dataclass(frozen=True)
class EnumerationBudget:
    """``mode='exact'`` enumerates up to ``max_states`` train sets; ``'monte_carlo'`` samples ``trials``."""

    max_states: int = 10**7
    mode: str = "exact"
    trials: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("exact", "monte_carlo"):
            raise ValidationError(f"unknown enumeration mode {self.mode!r}")


def _states(A: int, n: int, budget: EnumerationBudget) -> int:
    count = A**n
    if budget.mode == "exact" and count > budget.max_states:
        raise EnumerationBudgetError(
            f"{A}^{n} = {count} train sets exceed max_states={budget.max_states}; "
            "use EnumerationBudget(mode='monte_carlo')")
    return count


def transition_matrix(source: FiniteDomainDistribution, n: int,
                      budget: EnumerationBudget | None = None) -> np.ndarray:
    """``T[x, a]``: probability that atom ``a`` is the nearest train atom to test atom ``x``."""
    budget = budget or EnumerationBudget()
    if n < 1:
        raise ValidationError("n must be >= 1")
    A, D, p = source.n_atoms, source.pairwise_distance, source.probs
    _states(A, n, budget)
    T = np.zeros((A, A))
    if budget.mode == "exact":
        # Enumerate in blocks over the leading coordinate to bound memory.
        tail = n - 1
        rest = np.indices((A,) * tail).reshape(tail, -1).T if tail else np.zeros((1, 0), int)
        w_rest = np.prod(p[rest], axis=1) if tail else np.ones(1)
        for first in range(A):
            S = np.concatenate([np.full((len(rest), 1), first), rest], axis=1)
            w = p[first] * w_rest
            for x in range(A):
                nn = S[np.arange(len(S)), np.argmin(D[x][S], axis=1)]
                T[x] += np.bincount(nn, weights=w, minlength=A)
        return T
    rng = as_generator(budget.seed)
    S = rng.choice(A, size=(budget.trials, n), p=p)
    x = rng.choice(A, size=budget.trials, p=p)
    nn = S[np.arange(budget.trials), np.argmin(D[x[:, None], S], axis=1)]
    counts = np.zeros((A, A))
    np.add.at(counts, (x, nn), 1.0)
    rows = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, rows, out=np.zeros_like(counts), where=rows > 0)


def nn_pair_law(source, n, budget=None) -> np.ndarray:
    """Joint law ``P[x, a]`` of (test atom, its nearest train atom)."""
    return source.probs[:, None] * transition_matrix(source, n, budget)


def exact_nn_regularity_delta(source: FiniteDomainDistribution, n: int,
                              budget: EnumerationBudget | None = None) -> float:
    """TV between the law of ``NN_S(x)`` and the law of ``x``."""
    P = nn_pair_law(source, n, budget)
    return tv_pmf(P.sum(axis=0), source.probs)


@dataclass(frozen=True)
class FeatureCalibrationCheck:
    tv: float
    eps: float
    delta: float
    joint_true: DiscreteJoint
    joint_nn: DiscreteJoint

    def __iter__(self):
        return iter((self.tv, self.eps, self.delta))


def exact_feature_calibration_tv(source: FiniteDomainDistribution, n: int, L: Partition,
                                 budget: EnumerationBudget | None = None,
                                 check: bool = True) -> FeatureCalibrationCheck:
    """TV between the laws of ``(L(x), y)`` and ``(L(x), NN-prediction)``, with eps and delta.

    ``eps`` is the probability that 1-NN trained on ``L``-labels misclassifies
    ``L(x)``; ``delta`` is the regularity constant. Raises
    :class:`~dg_bench.errors.TheoremViolation` if ``tv > eps + delta``.
    """
    from dg_bench.errors import TheoremViolation

    cells = L.atom_cells(source.n_atoms)
    P = nn_pair_law(source, n, budget)
    pmf = source.label_pmfs
    true = np.zeros((L.M, source.K))
    np.add.at(true, cells, source.probs[:, None] * pmf)
    model = np.zeros((L.M, source.K))
    np.add.at(model, cells, P @ pmf)
    jt, jm = DiscreteJoint(true), DiscreteJoint(model)
    tv = tv_distance(jt, jm)
    eps = float(P[cells[:, None] != cells[None, :]].sum())
    delta = tv_pmf(P.sum(axis=0), source.probs)
    if check and tv > eps + delta + THEOREM_TOL:
        raise TheoremViolation(f"feature calibration bound violated: tv={tv!r} > eps+delta={eps + delta!r}")
    return FeatureCalibrationCheck(tv, eps, min(delta, 1.0), jt, jm)


def coupling_laws(source: FiniteDomainDistribution, n: int, budget=None):
    """The two couplings over atom pairs.

    ``P[x, a]``: test point and its nearest neighbour in one train set;
    ``Q[a, b]``: nearest neighbours of a common test point in two independent train sets.
    """
    T = transition_matrix(source, n, budget)
    p = source.probs
    P = p[:, None] * T
    Q = T.T @ (p[:, None] * T)  # given x the two train sets are independent
    return P, Q


def coupling_delta(source: FiniteDomainDistribution, n: int, budget=None) -> float:
    P, Q = coupling_laws(source, n, budget)
    return tv_pmf(P.ravel(), Q.ravel())


@dataclass(frozen=True)
class AgreementCheck:
    accuracy: float
    agreement: float
    gap: float
    delta: float

    def __iter__(self):
        return iter((self.accuracy, self.agreement, self.gap, self.delta))


def exact_agreement_vs_accuracy(source: FiniteDomainDistribution, n: int,
                                budget: EnumerationBudget | None = None,
                                check: bool = True) -> AgreementCheck:
    """Exact 1-NN test accuracy and two-model agreement; raises if ``|gap| > delta``."""
    from dg_bench.errors import TheoremViolation

    P, Q = coupling_laws(source, n, budget)
    same = source.label_pmfs @ source.label_pmfs.T  # P(y_a == y_b) for independent labels
    acc = float((P * same).sum())
    agr = float((Q * same).sum())
    gap = abs(acc - agr)
    delta = tv_pmf(P.ravel(), Q.ravel())
    if check and gap > delta + THEOREM_TOL:
        raise TheoremViolation(f"agreement bound violated: |acc-agr|={gap!r} > delta={delta!r}")
    return AgreementCheck(acc, agr, gap, delta)


def closed_form_transition(source: FiniteDomainDistribution, n: int) -> np.ndarray:
    """``T`` via order statistics: with atoms sorted by distance from ``x``,
    ``P(NN = j-th) = (1 - F_j)^n - (1 - F_{j+1})^n`` where ``F_j`` is the mass of
    the ``j`` closest atoms. Independent of the enumeration; used as a cross-check.
    """
    A, D, p = source.n_atoms, source.pairwise_distance, source.probs
    T = np.zeros((A, A))
    for x in range(A):
        order = np.argsort(D[x], kind="stable")
        F = np.concatenate([[0.0], np.cumsum(p[order])])
        surv = np.clip(1.0 - F, 0.0, 1.0) ** n
        T[x, order] = surv[:-1] - surv[1:]
    return T


def random_instance(rng, n_atoms: int, K: int, d: int = 2, n_cells: int | None = None,
                    concentration: float = 1.0):
    """Random finite domain (atoms at Gaussian points) plus a random atom partition."""
    from dg_bench.metrics import atom_map_partition

    rng = as_generator(rng)
    while True:
        feats = rng.standard_normal((n_atoms, d))
        try:
            probs = rng.dirichlet(np.full(n_atoms, concentration))
            pmfs = rng.dirichlet(np.full(K, concentration), size=n_atoms)
            src = FiniteDomainDistribution(probs / probs.sum(), pmfs / pmfs.sum(axis=1, keepdims=True),
                                           atom_features=feats)
            break
        except ValidationError:
            continue
    M = n_cells or int(rng.integers(1, n_atoms + 1))
    cells = rng.integers(M, size=n_atoms)
    return src, atom_map_partition(cells, M)
