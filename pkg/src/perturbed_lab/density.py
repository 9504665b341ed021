"""Density, CDF and atom diagnostics for Monte Carlo samples."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import ndtr

from .export import write_csv

__all__ = [
    "DensityEstimate",
    "silverman_bandwidth",
    "kde",
    "atom_scan",
    "boundary_mass",
    "mass_scaling_slope",
    "ks_distance",
    "normal_cdf",
]


@dataclass(frozen=True)
class DensityEstimate:
    grid_points: np.ndarray
    values: np.ndarray
    bandwidth: float
    n_samples: int

    @property
    def integral(self) -> float:
        return float(np.trapezoid(self.values, self.grid_points))

    def to_csv(self, path: str | Path, timestamp: bool = False) -> Path:
        return write_csv(path, {"grid_point": self.grid_points, "density": self.values}, timestamp)


def silverman_bandwidth(samples: np.ndarray) -> float:
    samples = np.asarray(samples, dtype=float)
    return 1.06 * float(np.std(samples, ddof=1)) * samples.size ** (-0.2)


def kde(
    samples: np.ndarray,
    bandwidth: float | str = "auto",
    grid_points: int = 512,
    block: int = 1 << 16,
) -> DensityEstimate:
    """Gaussian-kernel estimate on an equispaced grid over ``[min - 3h, max + 3h]``."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("kde needs at least two samples")
    if bandwidth == "auto":
        if np.all(x == x[0]):
            raise ValueError(
                f"all {x.size} samples equal {x[0]!r}: the law has an atom, no density to estimate"
            )
        h = silverman_bandwidth(x)
    else:
        h = float(bandwidth)
        if not h > 0:
            raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    grid = np.linspace(x.min() - 3 * h, x.max() + 3 * h, grid_points)
    dens = np.zeros(grid_points)
    for start in range(0, x.size, block):
        z = (grid[:, None] - x[None, start : start + block]) / h
        dens += np.exp(-0.5 * z * z).sum(axis=1)
    dens /= x.size * h * np.sqrt(2 * np.pi)
    return DensityEstimate(grid, dens, h, x.size)


def atom_scan(samples: np.ndarray, deltas) -> np.ndarray:
    """Largest fraction of samples in one cell of the partition ``[k delta, (k+1) delta)``.

    For an absolutely continuous law this shrinks like delta; an atom of mass
    ``p`` keeps it at or above ``p``.
    """
    x = np.asarray(samples, dtype=float).ravel()
    deltas = np.asarray(deltas, dtype=float)
    if np.any(deltas <= 0):
        raise ValueError("deltas must be positive")
    out = np.empty(deltas.size)
    for i, d in enumerate(deltas):
        _, counts = np.unique(np.floor(x / d), return_counts=True)
        out[i] = counts.max() / x.size
    return out


def boundary_mass(samples: np.ndarray, deltas, boundary: float = 0.0) -> np.ndarray:
    """Fraction of samples in ``[boundary, boundary + delta]`` for each delta."""
    x = np.asarray(samples, dtype=float).ravel()
    return np.array([np.mean((x >= boundary) & (x <= boundary + d)) for d in np.atleast_1d(deltas)])


def mass_scaling_slope(deltas, masses) -> float:
    """Least-squares slope of log(mass) against log(delta); 1 means no atom."""
    return float(np.polyfit(np.log(deltas), np.log(masses), 1)[0])


def normal_cdf(mean: float = 0.0, var: float = 1.0) -> Callable[[np.ndarray], np.ndarray]:
    sd = np.sqrt(var)
    return lambda x: ndtr((np.asarray(x) - mean) / sd)


def ks_distance(samples: np.ndarray, reference_cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """Kolmogorov-Smirnov sup distance between the empirical CDF and ``reference_cdf``."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise ValueError("ks_distance needs at least one sample")
    F = np.asarray(reference_cdf(x), dtype=float)
    upper = np.arange(1, n + 1) / n - F
    lower = F - np.arange(n) / n
    return float(max(upper.max(), lower.max()))
