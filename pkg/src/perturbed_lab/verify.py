"""Monte Carlo experiments that check the theoretical claims path by path.

* comparison: the reflected diffusion never exceeds its max-perturbed version
  under the same noise;
* Picard convergence of both iteration schemes on frozen noise;
* zero-hit probability of the perturbed reflected process (no atom at 0).

Every report is a deterministic function of its inputs and ``base_seed``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .coefficients import CoefficientField
from .noise import BrownianGrid, TimeGrid, map_chunks, sample_batch
from .perturbed import PerturbedSpec, solve_closed_form, solve_picard
from .reflected import ReflectedSpec, solve_picard_reflected, solve_stepwise

__all__ = [
    "ComparisonReport",
    "PicardReport",
    "ZeroHitReport",
    "comparison_test",
    "picard_convergence_report",
    "zero_hit_probability",
    "exp_series_iterates",
]

VIOLATION_TOL = 1e-9


@dataclass(frozen=True)
class ComparisonReport:
    alpha: float
    n_paths: int
    max_violation: float
    terminal_violation: float
    n_violating_paths: int
    tolerance: float = VIOLATION_TOL

    @property
    def passed(self) -> bool:
        return self.n_violating_paths == 0

    def to_dict(self) -> dict:
        return {**asdict(self), "passed": self.passed}


def comparison_test(
    coeffs: CoefficientField,
    alpha: float,
    n_paths: int,
    grid: TimeGrid,
    base_seed: int = 0,
    chunk: int = 1000,
) -> ComparisonReport:
    """Solve the unperturbed and the alpha-perturbed reflected equations on shared noise."""
    plain = ReflectedSpec(0.0, coeffs)
    perturbed = ReflectedSpec(alpha, coeffs)

    def run(start, count):
        w = sample_batch(grid, base_seed, count, start)
        gap = solve_stepwise(plain, w).x - solve_stepwise(perturbed, w).x
        return gap.max(axis=-1), gap[:, -1]

    parts = map_chunks(run, n_paths, chunk)
    worst = np.concatenate([p[0] for p in parts])
    terminal = np.concatenate([p[1] for p in parts])
    return ComparisonReport(
        alpha=alpha,
        n_paths=n_paths,
        max_violation=float(worst.max()),
        terminal_violation=float(terminal.max()),
        n_violating_paths=int(np.sum(worst > VIOLATION_TOL)),
    )


@dataclass(frozen=True)
class PicardReport:
    # distances[..., m-1] = sup_t |iterate m - direct solution|, m = 1..n_iter
    distances: np.ndarray
    ratios: np.ndarray

    def ratio(self, hi: int, lo: int) -> np.ndarray:
        """``d_hi / d_lo`` (1-based iterate numbers), per path."""
        d = self.distances
        return _safe_ratio(d[..., hi - 1], d[..., lo - 1])

    def to_dict(self) -> dict:
        return {"distances": self.distances, "ratios": self.ratios}


def _safe_ratio(num, den):
    num, den = np.asarray(num, float), np.asarray(den, float)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def picard_convergence_report(spec, w: BrownianGrid, n_iter: int) -> PicardReport:
    """Sup distance of each Picard iterate to the direct solver on the same noise."""
    if n_iter < 2:
        raise ValueError("n_iter must be >= 2")
    if isinstance(spec, PerturbedSpec):
        target = solve_closed_form(spec, w).y
        iterates = [p.y for p in solve_picard(spec, w, n_iter)[1:]]
    else:
        target = solve_stepwise(spec, w).x
        iterates = [p.x for p in solve_picard_reflected(spec, w, n_iter)[1:]]
    d = np.stack([np.max(np.abs(it - target), axis=-1) for it in iterates], axis=-1)
    return PicardReport(d, _safe_ratio(d[..., 1:], d[..., :-1]))


def exp_series_iterates(y0: float, rate: float, grid: TimeGrid, n_iter: int) -> np.ndarray:
    """Exact Picard iterates of the left-point scheme for y' = rate*y at the terminal time.

    Iterate m of ``y_k = y0 (1 + rate dt sum_{j<k} ...)`` is the truncated binomial
    series ``y0 * sum_{i<=m} C(n, i) (rate dt)^i``, the grid counterpart of the
    exponential series ``sum_{i<=m} (rate T)^i / i!``.
    """
    n, h = grid.n_steps, rate * grid.dt
    terms = [1.0]
    for i in range(1, n_iter + 1):
        terms.append(terms[-1] * (n - i + 1) / i * h if i <= n else 0.0)
    return y0 * np.cumsum(terms)


@dataclass(frozen=True)
class ZeroHitReport:
    t: float
    delta: float
    n_paths: int
    fraction: float
    fraction_half: float
    fraction_at_zero: float

    @property
    def halving_ratio(self) -> float:
        return self.fraction_half / self.fraction if self.fraction > 0 else float("nan")

    def to_dict(self) -> dict:
        return {**asdict(self), "halving_ratio": self.halving_ratio}


def zero_hit_probability(
    spec: ReflectedSpec,
    t: float,
    delta: float,
    n_paths: int,
    base_seed: int = 0,
    n_steps: int = 4096,
    chunk: int = 2000,
) -> ZeroHitReport:
    """Fraction of paths with ``X_t <= delta`` (and ``<= delta/2``)."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    grid = TimeGrid(t, n_steps)

    def run(start, count):
        return solve_stepwise(spec, sample_batch(grid, base_seed, count, start)).x[:, -1]

    xt = np.concatenate(map_chunks(run, n_paths, chunk))
    return ZeroHitReport(
        t=t,
        delta=delta,
        n_paths=n_paths,
        fraction=float(np.mean(xt <= delta)),
        fraction_half=float(np.mean(xt <= delta / 2)),
        fraction_at_zero=float(np.mean(xt == 0)),
    )
