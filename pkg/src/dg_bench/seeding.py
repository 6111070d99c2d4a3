"""Counter-based seeding and order-independent trial execution.

Every trial draws from its own stream keyed by ``(master seed, purpose tag,
trial index)``, so results do not depend on how trials are scheduled.
"""
from __future__ import annotations

import zlib
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

import numpy as np

_SEED_BITS = 63


def master_seed(rng) -> int:
    """Reduce an int seed or a Generator to a plain integer master seed."""
    if rng is None:
        raise ValueError("a seed or Generator is required")
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(2**_SEED_BITS))
    if isinstance(rng, (int, np.integer)):
        if rng < 0:
            raise ValueError("seed must be nonnegative")
        return int(rng)
    raise TypeError(f"expected int seed or numpy Generator, got {type(rng).__name__}")


def tag_id(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(master_seed(rng))


def trial_rng(seed: int, tag: str, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, tag_id(tag), index]))


def _run_one(args):
    fn, seed, tag, index = args
    return fn(index, trial_rng(seed, tag, index))


def run_trials(
    fn: Callable[[int, np.random.Generator], object],
    trials: int,
    seed: int,
    tag: str,
    workers: int = 1,
) -> list:
    """Evaluate ``fn(i, rng_i)`` for ``i in range(trials)``; results in index order.

    With ``workers > 1`` trials run in a process pool, so ``fn`` must be
    picklable (a module-level function or a ``functools.partial`` of one).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    jobs = [(fn, seed, tag, i) for i in range(trials)]
    if workers <= 1 or trials == 1:
        return [_run_one(job) for job in jobs]
    chunk = max(1, trials // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs, chunksize=chunk))


def sum_arrays(records: Sequence[np.ndarray]) -> np.ndarray:
    """Sum integer count arrays in index order (exact, hence order-independent)."""
    return np.sum(np.stack(records), axis=0)
