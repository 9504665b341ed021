"""Malliavin derivatives ``D_r Y_t`` propagated along simulated paths.

Row ``i`` of a field is the perturbation time ``r = t_i``, column ``j`` the
observation time ``t_j``; entries with ``j < i`` are zero (adaptedness).
The derivative of a running maximum is taken at its last argmax.

Quadrature in ``r``: cell ``(t_{k}, t_{k+1}]`` (increment ``k``) is represented
by row ``k + 1``, so ``||D F_{t_j}||_H^2 = sum_{i=1..j} U[i, j]^2 dt``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import NumericalError
from .export import write_csv
from .noise import BrownianGrid, CameronMartinShift, TimeGrid, map_chunks, pair_h, sample_batch
from .perturbed import PerturbedSpec, ProcessPath, solve_closed_form
from .reflected import ReflectedPath, ReflectedSpec, solve_stepwise

__all__ = [
    "DerivativeField",
    "HNormStat",
    "NondegeneracyReport",
    "propagate_perturbed",
    "propagate_reflected",
    "terminal_derivative",
    "directional_fd",
    "h_norm_squared",
    "h_norm_terminal",
    "nondegeneracy_report",
    "terminal_value",
]


@dataclass(frozen=True)
class DerivativeField:
    grid: TimeGrid
    U: np.ndarray
    # derivative of the cumulative integrator (C for the perturbed case, G for the reflected one)
    V: np.ndarray
    DM: np.ndarray | None = None
    DL: np.ndarray | None = None

    def row(self, t_index: int) -> np.ndarray:
        """``D_{t_i} F_{t}`` for ``i = 0..t_index``."""
        return self.U[: t_index + 1, t_index]

    def cells(self, t_index: int | None = None) -> np.ndarray:
        """One derivative value per increment cell up to ``t_index`` (default: terminal)."""
        t_index = self.grid.n_steps if t_index is None else t_index
        return self.U[1 : t_index + 1, t_index]

    def to_csv(self, path: str | Path, timestamp: bool = False) -> Path:
        i, j = np.triu_indices(self.U.shape[0])
        return write_csv(path, {"i": i, "j": j, "U": self.U[i, j]}, timestamp)

    def terminal_to_csv(self, path: str | Path, timestamp: bool = False) -> Path:
        n = self.grid.n_steps
        return write_csv(
            path, {"i": np.arange(n + 1), "r": self.grid.times, "U": self.row(n)}, timestamp
        )


@dataclass(frozen=True)
class HNormStat:
    value: float
    min_over_paths: float | None = None
    quantiles: dict[str, float] | None = None


@dataclass(frozen=True)
class NondegeneracyReport:
    n_paths: int
    min: float
    q01: float
    q50: float
    fraction_zero: float
    zero_threshold: float
    # paths whose terminal state sits exactly on the reflecting boundary
    fraction_terminal_at_zero: float = 0.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _bad(arr, j):
    raise NumericalError(f"non-finite derivative at step {j}", where=j)


def _perturbed_core(path: ProcessPath, spec: PerturbedSpec, dB: np.ndarray, full: bool):
    c = spec.coeffs
    y = np.atleast_2d(path.y)
    theta = np.atleast_2d(path.argmax_index)
    dB = np.atleast_2d(dB)
    P, n1 = y.shape
    n, dt, kappa = n1 - 1, path.grid.dt, spec.kappa
    Vc = np.zeros((P, n1))
    Vth = np.zeros((P, n1))
    if full:
        U_all, V_all = np.zeros((n1, n1)), np.zeros((n1, n1))
    for j in range(n1):
        Vc[:, j] = c.sigma(y[:, j])
        sl = slice(0, j + 1)
        renew = theta[:, j] == j
        if renew.any():
            Vth[:, sl] = np.where(renew[:, None], Vc[:, sl], Vth[:, sl])
        Uj = Vc[:, sl] + kappa * Vth[:, sl]
        if full:
            U_all[sl, j] = Uj[0]
            V_all[sl, j] = Vc[0, sl]
        if j < n:
            rate = c.sigma_prime(y[:, j]) * dB[:, j] + c.b_prime(y[:, j]) * dt
            Vc[:, sl] += rate[:, None] * Uj
            if not np.isfinite(rate).all() or not np.isfinite(Vc[:, sl]).all():
                _bad(Vc, j)
    if full:
        return DerivativeField(path.grid, U_all, V_all)
    return Uj


def _reflected_core(path: ReflectedPath, spec: ReflectedSpec, dB: np.ndarray, full: bool):
    c, alpha = spec.coeffs, spec.alpha
    x = np.atleast_2d(path.x)
    ax, av, v = (np.atleast_2d(a) for a in (path.argmax_x, path.argmax_v, path.v))
    dB = np.atleast_2d(dB)
    P, n1 = x.shape
    n, dt = n1 - 1, path.grid.dt
    Wc, DM, DL = np.zeros((P, n1)), np.zeros((P, n1)), np.zeros((P, n1))
    if full:
        U_all, W_all, DM_all, DL_all = (np.zeros((n1, n1)) for _ in range(4))
    for j in range(n1):
        Wc[:, j] = c.sigma(x[:, j])
        sl = slice(0, j + 1)
        W, dm, dl = Wc[:, sl], DM[:, sl], DL[:, sl]
        rx = (ax[:, j] == j)[:, None]
        rv = ((av[:, j] == j) & (v[:, j] > 0))[:, None]
        # x-max renewed alone: DX = W + alpha*DX + DL  =>  DX = (W + DL) / (1 - alpha)
        # L renewed (alone or jointly): DX = 0, DL = -(W + alpha*DM) with DM = 0 if joint
        dx = np.where(rx, (W + dl) / (1 - alpha), W + alpha * dm + dl)
        dx = np.where(rv, 0.0, dx)
        dm_new = np.where(rx, dx, dm)
        dl_new = np.where(rv, -(W + alpha * dm_new), dl)
        DM[:, sl], DL[:, sl] = dm_new, dl_new
        if full:
            U_all[sl, j], W_all[sl, j] = dx[0], W[0]
            DM_all[sl, j], DL_all[sl, j] = dm_new[0], dl_new[0]
        if j < n:
            rate = c.sigma_prime(x[:, j]) * dB[:, j] + c.b_prime(x[:, j]) * dt
            Wc[:, sl] += rate[:, None] * dx
            if not np.isfinite(rate).all() or not np.isfinite(Wc[:, sl]).all():
                _bad(Wc, j)
    if full:
        return DerivativeField(path.grid, U_all, W_all, DM_all, DL_all)
    return dx


def propagate_perturbed(path: ProcessPath, spec: PerturbedSpec, w: BrownianGrid) -> DerivativeField:
    """Full lower-triangular field for one perturbed path (O(n^2) memory)."""
    if path.y.ndim != 1:
        raise ValueError("full fields are built for a single path; use terminal_derivative")
    return _perturbed_core(path, spec, w.increments, full=True)


def propagate_reflected(path: ReflectedPath, spec: ReflectedSpec, w: BrownianGrid) -> DerivativeField:
    """Full field for one reflected path, with the max and local-time derivatives."""
    if path.x.ndim != 1:
        raise ValueError("full fields are built for a single path; use terminal_derivative")
    return _reflected_core(path, spec, w.increments, full=True)


def terminal_derivative(path, spec, w: BrownianGrid) -> np.ndarray:
    """Terminal column ``D_{t_i} F_T``, ``i = 0..n``, for one path or a batch (O(n) memory per path)."""
    if isinstance(spec, PerturbedSpec):
        out = _perturbed_core(path, spec, w.increments, full=False)
    else:
        out = _reflected_core(path, spec, w.increments, full=False)
    return out[0] if w.increments.ndim == 1 else out


def terminal_value(path) -> np.ndarray:
    return path.y[..., -1] if isinstance(path, ProcessPath) else path.x[..., -1]


def directional_fd(
    solve: Callable, spec, w: BrownianGrid, h: CameronMartinShift, eps: float = 1e-4
) -> float:
    """Central difference of the terminal value along the shift ``eps * int h``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    from .noise import shift

    up = terminal_value(solve(spec, shift(w, h, eps)))
    down = terminal_value(solve(spec, shift(w, h, -eps)))
    return float((up - down) / (2 * eps))


def h_norm_squared(field: DerivativeField, t_index: int | None = None) -> HNormStat:
    t_index = field.grid.n_steps if t_index is None else t_index
    if not 0 <= t_index <= field.grid.n_steps:
        raise ValueError(f"t_index {t_index} outside 0..{field.grid.n_steps}")
    cells = field.cells(t_index)
    return HNormStat(float(np.sum(cells**2) * field.grid.dt))


def h_norm_terminal(column: np.ndarray, dt: float) -> np.ndarray:
    """``||D F_T||_H^2`` from terminal columns (rows ``0..n`` on the last axis)."""
    return np.sum(column[..., 1:] ** 2, axis=-1) * dt


def nondegeneracy_report(
    spec,
    n_paths: int,
    base_seed: int = 0,
    grid: TimeGrid = TimeGrid(1.0, 256),
    chunk: int = 500,
    zero_threshold: float = 1e-10,
) -> NondegeneracyReport:
    """Monte Carlo distribution of ``||D F_T||_H^2`` over independent paths."""
    if not spec.coeffs.uniformly_elliptic:
        raise ValueError("nondegeneracy_report needs uniformly elliptic coefficients")
    reflected = isinstance(spec, ReflectedSpec)
    solve = solve_stepwise if reflected else solve_closed_form

    def run(start, count):
        w = sample_batch(grid, base_seed, count, start)
        path = solve(spec, w)
        col = terminal_derivative(path, spec, w)
        at_zero = (path.x[:, -1] == 0) if reflected else np.zeros(count, bool)
        return h_norm_terminal(col, grid.dt), at_zero

    parts = map_chunks(run, n_paths, chunk)
    vals = np.concatenate([p[0] for p in parts])
    at_zero = np.concatenate([p[1] for p in parts])
    return NondegeneracyReport(
        n_paths=n_paths,
        min=float(vals.min()),
        q01=float(np.quantile(vals, 0.01)),
        q50=float(np.quantile(vals, 0.5)),
        fraction_zero=float(np.mean(vals < zero_threshold)),
        zero_threshold=zero_threshold,
        fraction_terminal_at_zero=float(np.mean(at_zero)),
    )
