"""Deterministic chunked Monte Carlo execution.

Samples are split into fixed-size chunks; chunk ``c`` always draws from
substream ``c`` of the seed, and results are concatenated in chunk
order. The output therefore depends on (seed, n_samples, chunk) only,
not on the number of workers.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

from .spectral import rng_stream

DEFAULT_CHUNK = 256


def chunk_sizes(n_samples: int, chunk: int = DEFAULT_CHUNK) -> list[int]:
    full, rest = divmod(int(n_samples), int(chunk))
    return [chunk] * full + ([rest] if rest else [])


def map_chunks(fn: Callable[[np.random.Generator, int, int], np.ndarray], n_samples: int,
               seed: int, workers: int = 1, chunk: int = DEFAULT_CHUNK) -> np.ndarray:
    """Concatenate ``fn(rng, size, chunk_id)`` over all chunks along axis 0."""
    sizes = chunk_sizes(n_samples, chunk)
    jobs = [(rng_stream(seed, i), n, i) for i, n in enumerate(sizes)]
    if workers <= 1 or len(jobs) == 1:
        parts = [fn(*job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda job: fn(*job), jobs))
    return np.concatenate(parts, axis=0)


def mean_and_stderr(values: np.ndarray, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    v = np.asarray(values, dtype=float)
    n = v.shape[axis]
    mean = np.mean(v, axis=axis)
    err = np.std(v, axis=axis, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, err
