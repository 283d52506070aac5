"""Cubic B-spline expansion of continuous covariates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .errors import DomainError

DEGREE = 3


@dataclass(frozen=True)
class SplineBasis:
    """Fitted basis: knot vector plus the column means removed by centering."""

    knots: np.ndarray
    center: np.ndarray

    @property
    def n_columns(self) -> int:
        return self.center.size

    def full(self, x) -> np.ndarray:
        """All ``K + 4`` B-spline columns (rows sum to one inside the boundary)."""
        x = np.clip(np.asarray(x, dtype=float), self.knots[0], self.knots[-1])
        return BSpline.design_matrix(x, self.knots, DEGREE).toarray()

    def __call__(self, x) -> np.ndarray:
        return self.full(x)[:, 1:] - self.center


def fit_spline_basis(x, knots: int) -> SplineBasis:
    """Cubic B-spline basis with ``knots`` interior knots at empirical quantiles.

    The first column is dropped (the intercept lives elsewhere) and the
    remaining ``knots + 3`` columns are centered on the sample.
    """
    x = np.asarray(x, dtype=float).ravel()
    knots = int(knots)
    if knots < 0:
        raise DomainError("knot count must be >= 0")
    if not np.all(np.isfinite(x)):
        raise DomainError("spline covariate has non-finite values")
    n_distinct = np.unique(x).size
    if n_distinct < knots + 4:
        raise DomainError(
            f"spline covariate needs at least {knots + 4} distinct values, has {n_distinct}"
        )
    lo, hi = float(x.min()), float(x.max())
    inner = np.quantile(x, np.linspace(0, 1, knots + 2)[1:-1]) if knots else np.empty(0)
    t = np.concatenate([np.full(DEGREE + 1, lo), inner, np.full(DEGREE + 1, hi)])
    full = BSpline.design_matrix(x, t, DEGREE).toarray()
    block = full[:, 1:]
    return SplineBasis(knots=t, center=block.mean(axis=0))


def spline_basis(x, knots: int) -> np.ndarray:
    """Centered design block ``S`` with ``knots + 3`` columns."""
    basis = fit_spline_basis(x, knots)
    return basis(x)
