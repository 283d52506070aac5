import numpy as np
import pytest
from scipy.interpolate import BSpline

from rssgh.errors import DomainError
from rssgh.splines import fit_spline_basis, spline_basis


def test_zero_knots_gives_three_columns():
    x = np.random.default_rng(0).uniform(20, 90, 100)
    S = spline_basis(x, 0)
    assert S.shape == (100, 3)
    np.testing.assert_allclose(S.mean(axis=0), 0, atol=1e-13)


def test_knot_count_sets_width():
    x = np.random.default_rng(1).normal(size=300)
    for k in (1, 2, 5):
        assert spline_basis(x, k).shape == (300, k + 3)


def test_constant_column_rejected():
    with pytest.raises(DomainError, match="distinct"):
        spline_basis(np.full(50, 3.0), 1)
    with pytest.raises(DomainError):
        spline_basis([0.0, 1.0, np.nan, 2.0, 3.0], 0)
    with pytest.raises(DomainError):
        spline_basis(np.arange(10.0), -1)


def test_partition_of_unity_and_reference_evaluation():
    x = np.random.default_rng(2).uniform(0, 10, 200)
    basis = fit_spline_basis(x, 3)
    full = basis.full(x)
    np.testing.assert_allclose(full.sum(axis=1), 1.0, atol=1e-12)
    # column j against an independent single-function evaluation
    for j in range(full.shape[1]):
        b = BSpline.basis_element(basis.knots[j:j + 5], extrapolate=False)
        ref = np.nan_to_num(b(x))
        inside = (x > basis.knots[j]) & (x < basis.knots[j + 4])
        np.testing.assert_allclose(full[inside, j], ref[inside], atol=1e-12)
    # new points are clipped to the fitted range
    np.testing.assert_allclose(basis(np.array([-5.0])), basis(np.array([x.min()])))
