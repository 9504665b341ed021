"""Solvers for the max-perturbed SDE reflected at zero

    X_t = G_t + alpha * max_{s<=t} X_s + L_t,    X >= 0,   X_0 = 0,   0 <= alpha < 1/2,

where G_t = int sigma(X) dB + int b(X) ds and L is the local time at zero. The
local time is the running maximum of V_s = (-(G_s + alpha * M_s)) v 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coefficients import CoefficientField
from .errors import ConvergenceError, NumericalError
from .export import write_csv
from .noise import BrownianGrid, TimeGrid
from .perturbed import _check_finite, last_argmax

__all__ = [
    "ReflectedSpec",
    "ReflectedPath",
    "skorokhod_map",
    "solve_stepwise",
    "solve_picard_reflected",
    "check_path",
    "complementarity_tolerance",
]


@dataclass(frozen=True)
class ReflectedSpec:
    alpha: float
    coeffs: CoefficientField

    def __post_init__(self):
        if not 0 <= self.alpha < 0.5:
            raise ValueError(f"alpha must satisfy 0 <= alpha < 1/2, got {self.alpha}")


@dataclass(frozen=True)
class ReflectedPath:
    grid: TimeGrid
    x: np.ndarray
    g: np.ndarray
    m: np.ndarray
    l: np.ndarray
    v: np.ndarray
    argmax_x: np.ndarray
    argmax_v: np.ndarray
    # max entering the alpha-term when it is not this path's own (Picard iterates)
    lagged_max: np.ndarray | None = field(default=None, repr=False)

    @property
    def t(self) -> np.ndarray:
        return self.grid.times

    def __getitem__(self, i: int) -> "ReflectedPath":
        if self.x.ndim == 1:
            raise IndexError("not a batch")
        lag = None if self.lagged_max is None else self.lagged_max[i]
        return ReflectedPath(
            self.grid, self.x[i], self.g[i], self.m[i], self.l[i], self.v[i],
            self.argmax_x[i], self.argmax_v[i], lag,
        )

    def columns(self) -> dict[str, np.ndarray]:
        if self.x.ndim != 1:
            raise ValueError("CSV export needs a single path")
        return {"t": self.t, "x": self.x, "g": self.g, "m": self.m, "l": self.l, "v": self.v}

    def to_csv(self, path: str | Path, timestamp: bool = False) -> Path:
        return write_csv(path, self.columns(), timestamp)


def skorokhod_map(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Classical one-sided reflection at zero: ``l = runmax((-g) v 0)``, ``x = g + l``."""
    g = np.asarray(g, dtype=float)
    if np.any(g[..., 0] != 0):
        raise ValueError("skorokhod_map expects g[0] == 0")
    l = np.maximum.accumulate(np.maximum(-g, 0.0), axis=-1)
    return g + l, l


def _assemble(grid, x, g, m, l, v, lagged=None) -> ReflectedPath:
    _check_finite(x, "state")
    return ReflectedPath(grid, x, g, m, l, v, last_argmax(x), last_argmax(v), lagged)


def solve_stepwise(
    spec: ReflectedSpec, w: BrownianGrid, tol: float = 1e-13, max_inner: int = 200
) -> ReflectedPath:
    """Euler step for G, then a per-step fixed point for the pair (M, L).

    The inner map contracts with factor about alpha. It starts from the
    explicit renewal-case solution, so one sweep normally confirms ``tol``
    (relative to 1 + |M|); only unconverged paths are iterated further.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    dB, dt = w.increments, w.grid.dt
    n = w.grid.n_steps
    shape = dB.shape[:-1] + (n + 1,)
    x, g, m, l, v = (np.zeros(shape) for _ in range(5))
    sigma, b, alpha = spec.coeffs.sigma, spec.coeffs.b, spec.alpha

    # non-finite values are reported, with their step, by the inner loop
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            xk = x[..., k]
            gk = g[..., k] + (sigma(xk) * dB[..., k] + b(xk) * dt)
            mp, lp = m[..., k], l[..., k]
            mk, lk = _inner_fixed_point(gk, mp, lp, alpha, tol, max_inner, k)
            vk = np.maximum(-(gk + alpha * mk), 0.0)
            lk = np.maximum(lp, vk)
            g[..., k + 1] = gk
            m[..., k + 1] = mk
            v[..., k + 1] = vk
            l[..., k + 1] = lk
            x[..., k + 1] = (gk + alpha * mk) + lk
    return _assemble(w.grid, x, g, m, l, v)


def _renewal_start(gk, mp, lp, alpha):
    """Explicit solution of the step equations, case by case.

    Either l is pushed (x = 0, m frozen), or m may renew alone with
    m = (g + l) / (1 - alpha). The sweeps below confirm it to ``tol``.
    """
    push = -(gk + alpha * mp)
    pushed = push > lp
    m = np.where(pushed, mp, np.maximum(mp, (gk + lp) / (1 - alpha)))
    l = np.where(pushed, push, lp)
    return m, l


def _inner_fixed_point(gk, mp, lp, alpha, tol, max_inner, step):
    gk, mp, lp = np.atleast_1d(gk, mp, lp)
    m, l = _renewal_start(gk, mp, lp, alpha)
    todo = np.arange(m.size)
    for _ in range(max_inner):
        g_, mp_, lp_ = gk[todo], mp[todo], lp[todo]
        m_new = np.maximum(mp_, g_ + alpha * m[todo] + l[todo])
        l_new = np.maximum(lp_, np.maximum(-(g_ + alpha * m_new), 0.0))
        change = np.maximum(np.abs(m_new - m[todo]), np.abs(l_new - l[todo]))
        m[todo], l[todo] = m_new, l_new
        if not np.all(np.isfinite(change)):
            raise NumericalError(f"non-finite inner iterate at step {step}", where=step)
        todo = todo[change > tol * (1 + np.abs(m_new))]
        if todo.size == 0:
            break
    else:
        raise ConvergenceError(
            f"(M, L) fixed point did not converge within {max_inner} sweeps at step {step}; "
            "is alpha < 1/2?",
            iterations=max_inner,
        )
    return m.reshape(np.shape(gk)), l.reshape(np.shape(gk))


def solve_picard_reflected(spec: ReflectedSpec, w: BrownianGrid, n_iter: int) -> list[ReflectedPath]:
    """Path-level Picard iterates 0..n_iter.

    Iterate n+1 uses sigma(X^n), b(X^n) in G and the running max of X^n in the
    alpha-term; the local time comes from the reflection formula.
    """
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    dB, dt = w.increments, w.grid.dt
    shape = dB.shape[:-1] + (w.grid.n_steps + 1,)
    zero = np.zeros(shape)
    iterates = [_assemble(w.grid, zero, zero, zero, zero, zero, zero)]
    for _ in range(n_iter):
        prev = iterates[-1]
        left = prev.x[..., :-1]
        g = np.zeros(shape)
        np.cumsum(spec.coeffs.sigma(left) * dB + spec.coeffs.b(left) * dt, axis=-1, out=g[..., 1:])
        lag = prev.m
        v = np.maximum(-(g + spec.alpha * lag), 0.0)
        l = np.maximum.accumulate(v, axis=-1)
        x = (g + spec.alpha * lag) + l
        iterates.append(_assemble(w.grid, x, g, np.maximum.accumulate(x, axis=-1), l, v, lag))
    return iterates


def complementarity_tolerance(path: ReflectedPath) -> np.ndarray:
    """Per-path allowance ``10 * dt * max|x|`` for the left-point complementarity sum."""
    return 10 * path.grid.dt * np.max(np.abs(path.x), axis=-1)


def check_path(path: ReflectedPath, spec: ReflectedSpec) -> dict[str, float]:
    """Largest violation of each defining property (all should be ~0 or below tolerance)."""
    x, g, m, l, v = path.x, path.g, path.m, path.l, path.v
    used = m if path.lagged_max is None else path.lagged_max
    dl = np.diff(l, axis=-1)
    scale = 1 + np.abs(x)
    comp = np.sum(x[..., :-1] * dl, axis=-1)
    return {
        "negativity": float(max(0.0, -np.min(x))),
        "l0": float(np.max(np.abs(l[..., 0]))),
        "l_decrease": float(max(0.0, -np.min(dl, initial=0.0))),
        "complementarity": float(np.max(comp)),
        "complementarity_excess": float(np.max(comp - complementarity_tolerance(path))),
        "complementarity_right": float(np.max(np.sum(x[..., 1:] * dl, axis=-1))),
        "reflection_identity": float(np.max(np.abs(l - np.maximum.accumulate(v, axis=-1)))),
        "v_definition": float(np.max(np.abs(v - np.maximum(-(g + spec.alpha * used), 0.0)))),
        "running_max": float(np.max(np.abs(m - np.maximum.accumulate(x, axis=-1)) / scale)),
        "residual": float(np.max(np.abs(x - (g + spec.alpha * used + l)) / scale)),
    }
