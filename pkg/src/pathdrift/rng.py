"""Seeded random streams, Brownian paths and path containers.

Every stream is a PCG64 generator keyed by ``SeedSequence(master_seed,
spawn_key=(stream_index, *sub_keys))``. Gaussian variates always come from
the inverse normal CDF applied to uniforms on (0, 1), so that independent
reimplementations can reproduce the distributions exactly.

Monte Carlo work is cut into fixed-size blocks; block ``b`` consumes
sub-stream ``b`` and partial results are reduced in ascending block order,
which makes every estimate independent of the number of workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtri

from ._validation import check_grid, check_positive
from .exceptions import DomainError

DEFAULT_BLOCK_SIZE = 8192
_TINY = 2.0 ** -60


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    stream_index: int = 0

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2 ** 64:
            raise DomainError("master_seed must be a 64-bit unsigned integer")
        if int(self.stream_index) < 0:
            raise DomainError("stream_index must be nonnegative")

    def generator(self, *sub_keys: int) -> np.random.Generator:
        seq = np.random.SeedSequence(
            int(self.master_seed), spawn_key=(int(self.stream_index),) + tuple(int(k) for k in sub_keys)
        )
        return np.random.Generator(np.random.PCG64(seq))

    def stream(self, index: int) -> "SeedSpec":
        return SeedSpec(self.master_seed, index)


def as_seed(seed) -> SeedSpec:
    if isinstance(seed, SeedSpec):
        return seed
    if seed is None:
        return SeedSpec(0)
    return SeedSpec(int(seed))


def normals(rng: np.random.Generator, size) -> np.ndarray:
    """Standard normal draws via the inverse CDF."""
    u = rng.random(size)
    np.maximum(u, _TINY, out=u)
    return ndtri(u)


@dataclass(frozen=True)
class DiscretePath:
    """Time grid, states and (optionally) driving Brownian increments.

    ``states`` has shape ``(K, d)`` for one path or ``(N, K, d)`` for a batch;
    ``increments`` then has shape ``(K-1, d)`` or ``(N, K-1, d)``.
    """

    grid: np.ndarray
    states: np.ndarray
    increments: Optional[np.ndarray] = None

    def __post_init__(self):
        grid = check_grid(self.grid)
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if states.ndim not in (2, 3) or states.shape[-2] != grid.size:
            raise DomainError(
                f"states shape {states.shape} does not match grid of length {grid.size}"
            )
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "states", states)
        if self.increments is not None:
            inc = np.asarray(self.increments, dtype=float)
            if inc.ndim == 1:
                inc = inc[:, None]
            expected = states.shape[:-2] + (grid.size - 1, states.shape[-1])
            if inc.shape != expected:
                raise DomainError(f"increments shape {inc.shape}, expected {expected}")
            object.__setattr__(self, "increments", inc)

    @property
    def dim(self) -> int:
        return self.states.shape[-1]

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    @property
    def is_batch(self) -> bool:
        return self.states.ndim == 3

    @property
    def n_paths(self) -> int:
        return self.states.shape[0] if self.is_batch else 1

    @property
    def terminal(self) -> np.ndarray:
        return self.states[..., -1, :]

    def batch_states(self) -> np.ndarray:
        return self.states if self.is_batch else self.states[None]

    def batch_increments(self):
        if self.increments is None:
            return None
        return self.increments if self.is_batch else self.increments[None]


def uniform_grid(T: float, n: int) -> np.ndarray:
    """Nodes ``kT/n`` for ``k = 0..n``."""
    T = check_positive("T", T)
    if int(n) != n or n < 1:
        raise DomainError(f"number of steps must be a positive integer, got {n!r}")
    grid = np.arange(int(n) + 1, dtype=float) * (T / int(n))
    grid[-1] = T
    return grid


def eta_floor(grid, t: float, tol: float = 1e-12) -> float:
    """Largest grid node not exceeding ``t``."""
    grid = np.asarray(grid, dtype=float)
    idx = int(np.searchsorted(grid, t + tol * max(1.0, abs(t)), side="right")) - 1
    if idx < 0:
        raise DomainError(f"t={t!r} precedes the grid")
    return float(grid[idx])


def merge_grids(*grids, tol: float = 1e-12) -> np.ndarray:
    """Sorted union of several grids, collapsing nodes closer than ``tol``."""
    merged = np.sort(np.concatenate([np.asarray(g, dtype=float).ravel() for g in grids]))
    keep = np.concatenate([[True], np.diff(merged) > tol])
    return merged[keep]


def gaussian_increments(rng, grid, n_paths: int, dim: int) -> np.ndarray:
    """Brownian increments of shape ``(n_paths, K-1, dim)`` in step-major draw order."""
    dt = np.diff(grid)
    z = normals(rng, (dt.size, n_paths, dim))
    z *= np.sqrt(dt)[:, None, None]
    return np.ascontiguousarray(np.swapaxes(z, 0, 1))


def brownian_path(dim: int, grid, seed, n_paths: Optional[int] = None) -> DiscretePath:
    """Standard Brownian motion sampled on ``grid`` (``W_0 = 0``)."""
    grid = check_grid(grid)
    if int(dim) < 1:
        raise DomainError("dim must be positive")
    rng = as_seed(seed).generator()
    n = 1 if n_paths is None else int(n_paths)
    inc = gaussian_increments(rng, grid, n, int(dim))
    states = np.zeros((n, grid.size, int(dim)))
    np.cumsum(inc, axis=1, out=states[:, 1:, :])
    if n_paths is None:
        return DiscretePath(grid, states[0], inc[0])
    return DiscretePath(grid, states, inc)


def block_sizes(n_total: int, block_size: int = DEFAULT_BLOCK_SIZE) -> list[int]:
    if int(n_total) < 1:
        raise DomainError("number of samples must be positive")
    n_total, block_size = int(n_total), int(block_size)
    full, rest = divmod(n_total, block_size)
    return [block_size] * full + ([rest] if rest else [])


def run_blocks(
    task: Callable[[int, int, np.random.Generator], object],
    n_total: int,
    seed,
    workers: int = 1,
    block_size: int = DEFAULT_BLOCK_SIZE,
    sub_key: Sequence[int] = (),
) -> list:
    """Run ``task(block_index, block_n, rng)`` over fixed blocks.

    Results come back in block order whatever the worker count.
    """
    seed = as_seed(seed)
    sizes = block_sizes(n_total, block_size)
    jobs = [(b, n, seed.generator(b, *sub_key)) for b, n in enumerate(sizes)]

    def call(job):
        return task(*job)

    workers = max(1, int(workers or 1))
    if workers == 1 or len(jobs) == 1:
        return [call(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(call, jobs))


def default_workers() -> int:
    import os

    return os.cpu_count() or 1


def steps_for(T: float, per_unit: int) -> int:
    return max(1, int(math.ceil(T * per_unit - 1e-9)))
