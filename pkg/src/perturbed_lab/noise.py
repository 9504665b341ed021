"""Brownian increments on uniform grids, Cameron-Martin shifts and H-pairings.

Path ``i`` of a Monte Carlo batch always uses the seed ``base_seed + i``, so a
batch is the same whatever the chunking or worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence, TypeVar

import numpy as np

__all__ = [
    "TimeGrid",
    "BrownianGrid",
    "CameronMartinShift",
    "sample",
    "sample_batch",
    "shift",
    "pair_h",
    "chunk_ranges",
    "map_chunks",
    "worker_count",
]

T = TypeVar("T")


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if not (self.horizon > 0 and np.isfinite(self.horizon)):
            raise ValueError(f"horizon must be positive and finite, got {self.horizon}")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        # k*dt rather than linspace so that times[k] == k*dt everywhere
        return np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True)
class BrownianGrid:
    """Increments ``dB[..., k] = B(t_{k+1}) - B(t_k)``.

    ``increments`` has shape ``(n,)`` for one path or ``(paths, n)`` for a batch.
    """

    grid: TimeGrid
    increments: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.shape[-1] != self.grid.n_steps:
            raise ValueError(
                f"increments have {inc.shape[-1]} steps, grid has {self.grid.n_steps}"
            )
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def n_paths(self) -> int:
        return 1 if self.increments.ndim == 1 else self.increments.shape[0]

    def path(self) -> np.ndarray:
        """Brownian path ``B(t_k)`` with ``B(0) = 0``."""
        out = np.zeros(self.increments.shape[:-1] + (self.grid.n_steps + 1,))
        np.cumsum(self.increments, axis=-1, out=out[..., 1:])
        return out

    def __getitem__(self, i: int) -> "BrownianGrid":
        """Single path ``i`` of a batch."""
        if self.increments.ndim == 1:
            raise IndexError("not a batch")
        seed = None if self.seed is None else self.seed + i
        return BrownianGrid(self.grid, self.increments[i], seed)


@dataclass(frozen=True)
class CameronMartinShift:
    """Direction ``h`` (one value per increment) of a shift ``eps * int_0^t h``."""

    grid: TimeGrid
    h: np.ndarray = field(repr=False)

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        if h.shape != (self.grid.n_steps,):
            raise ValueError(f"h must have shape ({self.grid.n_steps},), got {h.shape}")
        if not np.all(np.isfinite(h)):
            raise ValueError("h has non-finite entries")
        object.__setattr__(self, "h", h)

    @property
    def norm_squared(self) -> float:
        return float(np.sum(self.h**2) * self.grid.dt)

    @classmethod
    def from_function(cls, grid: TimeGrid, fn: Callable[[np.ndarray], np.ndarray]):
        return cls(grid, np.asarray(fn(grid.times[:-1]), dtype=float))


def _draw(grid: TimeGrid, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal(grid.n_steps) * np.sqrt(grid.dt)


def sample(grid: TimeGrid, seed: int) -> BrownianGrid:
    return BrownianGrid(grid, _draw(grid, seed), seed)


def sample_batch(grid: TimeGrid, base_seed: int, n_paths: int, start: int = 0) -> BrownianGrid:
    """Paths ``start .. start+n_paths-1`` of the batch rooted at ``base_seed``."""
    inc = np.empty((n_paths, grid.n_steps))
    for i in range(n_paths):
        inc[i] = _draw(grid, base_seed + start + i)
    return BrownianGrid(grid, inc, base_seed + start)


def shift(w: BrownianGrid, h: CameronMartinShift, eps: float) -> BrownianGrid:
    if h.grid != w.grid:
        raise ValueError(f"grid mismatch: noise on {w.grid}, shift on {h.grid}")
    return BrownianGrid(w.grid, w.increments + eps * h.h * w.grid.dt, w.seed)


def pair_h(u: np.ndarray, h: CameronMartinShift | np.ndarray, dt: float | None = None) -> float:
    """Left-endpoint quadrature of the H inner product, ``sum_k u_k h_k dt``."""
    if isinstance(h, CameronMartinShift):
        hv, dt = h.h, h.grid.dt
    else:
        hv = np.asarray(h, dtype=float)
        if dt is None:
            raise ValueError("dt is required when h is a plain array")
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != hv.shape[-1]:
        raise ValueError(f"length mismatch: u has {u.shape[-1]}, h has {hv.shape[-1]}")
    return float(np.dot(u, hv) * dt)


def worker_count() -> int:
    env = os.environ.get("PERTURBED_LAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"PERTURBED_LAB_THREADS must be an integer, got {env!r}") from None
    return 1


def chunk_ranges(n_paths: int, chunk: int) -> Iterator[tuple[int, int]]:
    for start in range(0, n_paths, chunk):
        yield start, min(chunk, n_paths - start)


def map_chunks(
    fn: Callable[[int, int], T], n_paths: int, chunk: int = 2048, workers: int | None = None
) -> list[T]:
    """Apply ``fn(start, count)`` to consecutive path chunks, results in path order."""
    ranges: Sequence[tuple[int, int]] = list(chunk_ranges(n_paths, chunk))
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(ranges) == 1:
        return [fn(s, c) for s, c in ranges]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda sc: fn(*sc), ranges))
