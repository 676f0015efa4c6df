"""Seed derivation and an order-preserving worker pool for Monte-Carlo trials."""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")


def stream_key(name: str) -> int:
    """Stable 32-bit integer naming an independent random stream."""
    return zlib.crc32(name.encode("utf-8"))


def trial_seed_sequence(master_seed: int, *key: int) -> np.random.SeedSequence:
    """Child seed sequence keyed on integers such as ``(stream, trial)``.

    The result depends only on ``master_seed`` and ``key``, never on the order
    in which trials are scheduled.
    """
    return np.random.SeedSequence(master_seed, spawn_key=tuple(int(k) for k in key))


def trial_rng(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(trial_seed_sequence(master_seed, *key))


def trial_noise_seed(master_seed: int, *key: int) -> int:
    """64-bit seed for the counter-based noise generator of one trial."""
    ss = trial_seed_sequence(master_seed, *key, stream_key("noise"))
    return int(ss.generate_state(1, np.uint64)[0])


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> list[R]:
    """``[fn(x) for x in items]``, optionally on a thread pool.

    Results come back in input order, so any reduction over them is
    independent of the worker count.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
