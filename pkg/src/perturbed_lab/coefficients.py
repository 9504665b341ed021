"""Coefficient fields (diffusion ``sigma`` and drift ``b``) for the solvers.

All callables are expected to accept and return numpy arrays elementwise, so a
single field can drive one path or a batch of paths.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

Func = Callable[[np.ndarray], np.ndarray]

__all__ = [
    "CoefficientField",
    "RegularityReport",
    "BUILTINS",
    "make_builtin",
    "parse_coeffs",
    "check_regularity",
]


@dataclass(frozen=True)
class CoefficientField:
    sigma: Func
    b: Func
    sigma_prime: Func
    b_prime: Func
    lipschitz_bound: float
    uniformly_elliptic: bool
    name: str = "custom"
    params: tuple[float, ...] = ()
    drift: tuple[float, float] = (0.0, 0.0)

    @property
    def state_free(self) -> bool:
        """True when neither coefficient depends on the state."""
        if self.drift[1] != 0.0:
            return False
        return self.name == "constant" or (self.name == "affine" and self.params[1] == 0.0)

    def label(self) -> str:
        body = ",".join(repr(float(p)) for p in self.params)
        return f"{self.name}:{body} drift={self.drift[0]!r},{self.drift[1]!r}"


def _const(c: float) -> Func:
    return lambda x: np.full(np.shape(x), c, dtype=float)


# name -> sigma-parameter arity
BUILTINS = {"constant": 1, "affine": 2, "sin_perturbed": 2, "tanh_bounded": 2}


def make_builtin(
    name: str, params: Sequence[float], drift: Sequence[float] = (0.0, 0.0)
) -> CoefficientField:
    """Build one of the named coefficient families.

    ``params`` parametrise the diffusion coefficient:

    * ``constant [c]``: sigma = c
    * ``affine [a, c]``: sigma = a + c*x
    * ``sin_perturbed [c0, c1]``: sigma = c0 + c1*sin(x), requires |c1| < c0
    * ``tanh_bounded [c0, c1]``: sigma = c0 + c1*tanh(x), requires |c1| < c0

    The drift is always affine, b = drift[0] + drift[1]*x.
    """
    if name not in BUILTINS:
        raise ValueError(f"unknown coefficient builtin {name!r}; choose from {sorted(BUILTINS)}")
    params = tuple(float(p) for p in params)
    if len(params) != BUILTINS[name]:
        raise ValueError(
            f"builtin {name!r} takes {BUILTINS[name]} parameter(s), got {len(params)}"
        )
    drift = tuple(float(d) for d in drift)
    if len(drift) != 2:
        raise ValueError(f"drift takes 2 parameters (b0, b1), got {len(drift)}")
    b0, b1 = drift

    if name == "constant":
        (c,) = params
        sigma, sigma_prime = _const(c), _const(0.0)
        lip_sigma, elliptic = 0.0, c != 0.0
    elif name == "affine":
        a, c = params
        sigma = lambda x: a + c * np.asarray(x, dtype=float)
        sigma_prime = _const(c)
        lip_sigma, elliptic = abs(c), c == 0.0 and a != 0.0
    else:
        c0, c1 = params
        if not abs(c1) < c0:
            raise ValueError(
                f"{name} needs |c1| < c0 for uniform ellipticity, got c0={c0}, c1={c1}"
            )
        lip_sigma, elliptic = abs(c1), True
        if name == "sin_perturbed":
            sigma = lambda x: c0 + c1 * np.sin(x)
            sigma_prime = lambda x: c1 * np.cos(x)
        else:
            sigma = lambda x: c0 + c1 * np.tanh(x)
            sigma_prime = lambda x: c1 / np.cosh(x) ** 2

    b = lambda x: b0 + b1 * np.asarray(x, dtype=float)
    return CoefficientField(
        sigma=sigma,
        b=b,
        sigma_prime=sigma_prime,
        b_prime=_const(b1),
        lipschitz_bound=max(lip_sigma, abs(b1)),
        uniformly_elliptic=elliptic,
        name=name,
        params=params,
        drift=(b0, b1),
    )


def parse_coeffs(text: str, drift: str | None = None) -> CoefficientField:
    """Parse ``name:p1,p2`` (and optionally ``b0,b1``) into a builtin field."""
    name, _, body = text.partition(":")
    try:
        params = [float(p) for p in body.split(",")] if body else []
        drift_vals = [float(p) for p in drift.split(",")] if drift else [0.0, 0.0]
    except ValueError as exc:
        raise ValueError(f"cannot parse coefficient spec {text!r}: {exc}") from None
    if len(drift_vals) == 1:
        drift_vals.append(0.0)
    return make_builtin(name.strip(), params, drift_vals)


@dataclass(frozen=True)
class RegularityReport:
    max_lipschitz_ratio: float
    min_abs_sigma: float
    max_derivative_error: float
    lipschitz_violated: bool
    ellipticity_violated: bool

    @property
    def ok(self) -> bool:
        return not (self.lipschitz_violated or self.ellipticity_violated)


def check_regularity(
    f: CoefficientField, box: tuple[float, float], n_samples: int, h: float = 1e-4
) -> RegularityReport:
    """Sample ``f`` on an equispaced grid over ``box`` and check its declared regularity.

    On an equispaced grid the largest pairwise difference quotient is attained
    by neighbours (triangle inequality), so only adjacent pairs are scanned.
    """
    lo, hi = box
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    if not hi > lo:
        raise ValueError(f"degenerate box {box}")
    x = np.linspace(lo, hi, n_samples)
    dx = np.diff(x)
    ratio = slack = 0.0
    for g in (f.sigma, f.b):
        gx = np.asarray(g(x), dtype=float)
        ratio = max(ratio, float(np.max(np.abs(np.diff(gx)) / dx)))
        # rounding in g(x) alone moves a quotient by a few ulps of |g| over dx
        slack = max(slack, 4 * float(np.max(np.spacing(np.abs(gx)))) / float(dx.min()))

    deriv_err = 0.0
    for g, gp in ((f.sigma, f.sigma_prime), (f.b, f.b_prime)):
        fd = (np.asarray(g(x + h)) - np.asarray(g(x - h))) / (2 * h)
        deriv_err = max(deriv_err, float(np.max(np.abs(np.asarray(gp(x)) - fd))))

    min_sigma = float(np.min(np.abs(f.sigma(x))))
    return RegularityReport(
        max_lipschitz_ratio=ratio,
        min_abs_sigma=min_sigma,
        max_derivative_error=deriv_err,
        lipschitz_violated=ratio > f.lipschitz_bound * (1 + 1e-9) + slack,
        ellipticity_violated=f.uniformly_elliptic and not min_sigma > 0.0,
    )
