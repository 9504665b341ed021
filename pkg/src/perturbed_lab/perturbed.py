"""Solvers for the max-perturbed SDE

    Y_t = y0 + int_0^t sigma(Y) dB + int_0^t b(Y) ds + alpha * max_{s<=t} Y_s,   alpha < 1.

Writing C for the cumulative integrator (stochastic plus drift integral) and
F for its running maximum, the solution on the grid is

    Y = y0/(1-alpha) + C + alpha/(1-alpha) * F,

which removes the implicit coupling through the maximum. Every solver accepts
a single path or a batch (leading axis = paths).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coefficients import CoefficientField
from .errors import ConvergenceError, NumericalError
from .export import write_csv
from .noise import BrownianGrid, TimeGrid

__all__ = [
    "PerturbedSpec",
    "ProcessPath",
    "solve_closed_form",
    "solve_fixed_point_oracle",
    "solve_picard",
    "euler_reference",
    "last_argmax",
    "check_path",
]


@dataclass(frozen=True)
class PerturbedSpec:
    y0: float
    alpha: float
    coeffs: CoefficientField

    def __post_init__(self):
        if not self.alpha < 1:
            raise ValueError(f"alpha must satisfy alpha < 1, got {self.alpha}")

    @property
    def start(self) -> float:
        return self.y0 / (1 - self.alpha)

    @property
    def kappa(self) -> float:
        return self.alpha / (1 - self.alpha)


@dataclass(frozen=True)
class ProcessPath:
    grid: TimeGrid
    y: np.ndarray
    cumulative: np.ndarray
    running_max_cum: np.ndarray
    argmax_index: np.ndarray
    m: np.ndarray
    iterations: int | None = field(default=None, compare=False)

    @property
    def t(self) -> np.ndarray:
        return self.grid.times

    def __getitem__(self, i: int) -> "ProcessPath":
        if self.y.ndim == 1:
            raise IndexError("not a batch")
        return ProcessPath(
            self.grid,
            self.y[i],
            self.cumulative[i],
            self.running_max_cum[i],
            self.argmax_index[i],
            self.m[i],
            self.iterations,
        )

    def columns(self) -> dict[str, np.ndarray]:
        if self.y.ndim != 1:
            raise ValueError("CSV export needs a single path")
        return {
            "t": self.t,
            "y": self.y,
            "C": self.cumulative,
            "F": self.running_max_cum,
            "m": self.m,
            "theta": self.argmax_index,
        }

    def to_csv(self, path: str | Path, timestamp: bool = False) -> Path:
        return write_csv(path, self.columns(), timestamp)


def last_argmax(values: np.ndarray) -> np.ndarray:
    """Index of the last running-maximum attainment, per position along the last axis."""
    running = np.maximum.accumulate(values, axis=-1)
    idx = np.arange(values.shape[-1])
    return np.maximum.accumulate(np.where(values == running, idx, 0), axis=-1)


def _check_finite(arr: np.ndarray, what: str):
    bad = ~np.isfinite(arr)
    if bad.any():
        step = int(np.argmax(bad.reshape(-1, arr.shape[-1]).any(axis=0)))
        raise NumericalError(f"non-finite {what} at step {step}", where=step)


def _from_cumulative(grid: TimeGrid, spec: PerturbedSpec, C: np.ndarray) -> ProcessPath:
    F = np.maximum.accumulate(C, axis=-1)
    y = (spec.start + C) + spec.kappa * F
    _check_finite(y, "state")
    return ProcessPath(grid, y, C, F, last_argmax(C), np.maximum.accumulate(y, axis=-1))


def _integrator(coeffs: CoefficientField, y: np.ndarray, dB: np.ndarray, dt: float) -> np.ndarray:
    """Cumulative Euler integrator with coefficients frozen at ``y[..., :-1]``."""
    left = y[..., :-1]
    inc = coeffs.sigma(left) * dB + coeffs.b(left) * dt
    C = np.zeros(y.shape)
    np.cumsum(inc, axis=-1, out=C[..., 1:])
    return C


def solve_closed_form(spec: PerturbedSpec, w: BrownianGrid) -> ProcessPath:
    """Euler stepping of the cumulative integrator with the explicit max formula."""
    dB, dt = w.increments, w.grid.dt
    n = w.grid.n_steps
    shape = dB.shape[:-1] + (n + 1,)
    C = np.zeros(shape)
    F = np.zeros(shape)
    y = np.empty(shape)
    y[..., 0] = spec.start
    sigma, b = spec.coeffs.sigma, spec.coeffs.b
    base, kappa = spec.start, spec.kappa
    # overflow is reported once, with its step, by _check_finite
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            yk = y[..., k]
            C[..., k + 1] = C[..., k] + (sigma(yk) * dB[..., k] + b(yk) * dt)
            F[..., k + 1] = np.maximum(F[..., k], C[..., k + 1])
            y[..., k + 1] = (base + C[..., k + 1]) + kappa * F[..., k + 1]
    _check_finite(y, "state")
    return ProcessPath(w.grid, y, C, F, last_argmax(C), np.maximum.accumulate(y, axis=-1))


def euler_reference(y0: float, coeffs: CoefficientField, w: BrownianGrid) -> np.ndarray:
    """Plain Euler-Maruyama path of dY = sigma(Y) dB + b(Y) dt (no max term)."""
    dB, dt = w.increments, w.grid.dt
    n = w.grid.n_steps
    C = np.zeros(dB.shape[:-1] + (n + 1,))
    y = np.empty_like(C)
    y[..., 0] = y0
    for k in range(n):
        yk = y[..., k]
        C[..., k + 1] = C[..., k] + (coeffs.sigma(yk) * dB[..., k] + coeffs.b(yk) * dt)
        y[..., k + 1] = y0 + C[..., k + 1]
    return y


def solve_fixed_point_oracle(
    spec: PerturbedSpec, w: BrownianGrid, tol: float = 1e-13, max_iter: int = 10_000
) -> ProcessPath:
    """Solve ``y = y0 + C(y) + alpha * runmax(y)`` on the grid by whole-path iteration.

    Starts from the alpha = 0 Euler path and never uses the explicit max formula,
    so it is an independent check on :func:`solve_closed_form`.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    dB, dt = w.increments, w.grid.dt
    y = euler_reference(spec.y0, spec.coeffs, w)
    for it in range(1, max_iter + 1):
        C = _integrator(spec.coeffs, y, dB, dt)
        y_new = spec.y0 + C + spec.alpha * np.maximum.accumulate(y, axis=-1)
        _check_finite(y_new, "oracle iterate")
        change = float(np.max(np.abs(y_new - y)))
        y = y_new
        if change < tol:
            break
    else:
        raise ConvergenceError(
            f"fixed-point oracle did not reach tol={tol} in {max_iter} iterations "
            f"(last change {change:.3e})",
            iterations=max_iter,
        )
    C = _integrator(spec.coeffs, y, dB, dt)
    F = np.maximum.accumulate(C, axis=-1)
    return ProcessPath(
        w.grid, y, C, F, last_argmax(C), np.maximum.accumulate(y, axis=-1), iterations=it
    )


def solve_picard(spec: PerturbedSpec, w: BrownianGrid, n_iter: int) -> list[ProcessPath]:
    """Picard iterates 0..n_iter; iterate m+1 freezes the coefficients at iterate m."""
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    dB, dt = w.increments, w.grid.dt
    shape = dB.shape[:-1] + (w.grid.n_steps + 1,)
    iterates = [_from_cumulative(w.grid, spec, np.zeros(shape))]
    for _ in range(n_iter):
        C = _integrator(spec.coeffs, iterates[-1].y, dB, dt)
        iterates.append(_from_cumulative(w.grid, spec, C))
    return iterates


def check_path(path: ProcessPath, spec: PerturbedSpec) -> dict[str, float]:
    """Largest violation of each grid identity (all should be ~0)."""
    y, C, F, m = path.y, path.cumulative, path.running_max_cum, path.m
    n = y.shape[-1]
    closed = (spec.start + C) + spec.kappa * F
    scale = 1 + np.abs(y)
    theta = path.argmax_index
    return {
        "start": float(np.max(np.abs(y[..., 0] - spec.start))),
        "F0": float(np.max(np.abs(F[..., 0]))),
        "F_decrease": float(max(0.0, np.max(-np.diff(F, axis=-1), initial=0.0))),
        "theta_exceeds_k": float(np.max(theta - np.arange(n))),
        "theta_not_argmax": float(
            np.max(np.abs(np.take_along_axis(C, theta, axis=-1) - F))
        ),
        "closed_form": float(np.max(np.abs(y - closed) / scale)),
        "max_identity": float(
            np.max(np.abs(np.maximum.accumulate(y, axis=-1) - (spec.y0 + F) / (1 - spec.alpha)) / scale)
        ),
        "residual": float(np.max(np.abs(y - (spec.y0 + C + spec.alpha * m)) / scale)),
    }
