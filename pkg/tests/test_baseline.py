import mpmath as mp
import numpy as np
import pytest

from rssgh.baseline import (
    BaselineFamily,
    BaselineParams,
    baseline_terms,
    cdf,
    cum_hazard,
    hazard,
    inverse_cum_hazard,
    log_density,
    log_hazard,
    log_survival,
    quantile,
    survival,
)
from rssgh.errors import DomainError

mp.mp.dps = 40

FAMILIES = list(BaselineFamily)
EXAMPLE_PARAMS = {
    BaselineFamily.LN: (0.65, 1.15),
    BaselineFamily.LL: (0.2, 0.8),
    BaselineFamily.PGW: (0.5, 3.75, 8.0),
    BaselineFamily.GAM: (1.3, 2.4),
    BaselineFamily.GG: (1.7, 2.2, 0.9),
}


def mp_log_survival(fam, th, t):
    t = mp.mpf(t)
    if fam is BaselineFamily.LN:
        mu, s = map(mp.mpf, th)
        return mp.log(mp.ncdf(-(mp.log(t) - mu) / s))
    if fam is BaselineFamily.LL:
        mu, s = map(mp.mpf, th)
        return -mp.log1p(mp.exp((mp.log(t) - mu) / s))
    if fam is BaselineFamily.PGW:
        eta, nu, kap = map(mp.mpf, th)
        return 1 - (1 + (t / eta) ** nu) ** (1 / kap)
    if fam is BaselineFamily.GAM:
        eta, nu = map(mp.mpf, th)
        return mp.log(mp.gammainc(nu, t / eta, mp.inf, regularized=True))
    eta, nu, kap = map(mp.mpf, th)
    return mp.log(mp.gammainc(nu / kap, (t / eta) ** kap, mp.inf, regularized=True))


def mp_log_density(fam, th, t):
    t = mp.mpf(t)
    if fam is BaselineFamily.LN:
        mu, s = map(mp.mpf, th)
        z = (mp.log(t) - mu) / s
        return -z * z / 2 - mp.log(s * t * mp.sqrt(2 * mp.pi))
    if fam is BaselineFamily.LL:
        mu, s = map(mp.mpf, th)
        z = (mp.log(t) - mu) / s
        return z - mp.log(s * t) - 2 * mp.log1p(mp.exp(z))
    if fam is BaselineFamily.PGW:
        eta, nu, kap = map(mp.mpf, th)
        r = (t / eta) ** nu
        return (mp.log(nu / kap) + (nu - 1) * mp.log(t) - nu * mp.log(eta)
                + (1 / kap - 1) * mp.log1p(r) + 1 - (1 + r) ** (1 / kap))
    if fam is BaselineFamily.GAM:
        eta, nu = map(mp.mpf, th)
        return (nu - 1) * mp.log(t) - t / eta - nu * mp.log(eta) - mp.loggamma(nu)
    eta, nu, kap = map(mp.mpf, th)
    return (mp.log(kap) - mp.loggamma(nu / kap) + (nu - 1) * mp.log(t) - nu * mp.log(eta)
            - (t / eta) ** kap)


@pytest.mark.parametrize("fam", FAMILIES)
def test_log_density_and_survival_match_high_precision(fam):
    th = EXAMPLE_PARAMS[fam]
    for t in (0.05, 0.4, 1.0, 2.7, 9.0):
        ls_ref = float(mp_log_survival(fam, th, t))
        lf_ref = float(mp_log_density(fam, th, t))
        assert log_survival(fam, th, t) == pytest.approx(ls_ref, rel=1e-10, abs=1e-13)
        assert log_density(fam, th, t) == pytest.approx(lf_ref, rel=1e-10, abs=1e-12)


def test_ln_density_at_one():
    ref = float(mp_log_density(BaselineFamily.LN, (0.65, 1.15), 1.0))
    assert log_density("LN", (0.65, 1.15), 1.0) == pytest.approx(ref, rel=1e-13)


def test_pgw_appendix_survival_at_one():
    ref = float(mp.exp(mp_log_survival(BaselineFamily.PGW, (0.5, 3.75, 8.0), 1.0)))
    assert survival("PGW", (0.5, 3.75, 8.0), 1.0) == pytest.approx(ref, rel=1e-13)


def test_trivial_values():
    assert log_density("GAM", (1, 1), 2.0) == pytest.approx(-2.0, abs=1e-14)
    assert log_density("PGW", (1, 1, 1), 1.0) == pytest.approx(-1.0, abs=1e-14)
    assert cum_hazard("PGW", (1, 1, 1), 3.0) == pytest.approx(3.0, abs=1e-14)
    assert cum_hazard("GG", (2, 1, 1), 2.0) == pytest.approx(1.0, abs=1e-14)
    for fam in FAMILIES:
        assert cum_hazard(fam, EXAMPLE_PARAMS[fam], 0.0) == 0.0
        assert survival(fam, EXAMPLE_PARAMS[fam], 0.0) == 1.0
    t = np.array([0.1, 1.0, 5.0])
    np.testing.assert_allclose(log_hazard("PGW", (1, 1, 1), t), 0.0, atol=1e-14)
    np.testing.assert_allclose(log_hazard("GAM", (2.5, 1), t), -np.log(2.5), atol=1e-13)
    assert survival("LN", (0.65, 1.15), np.exp(0.65)) == pytest.approx(0.5, abs=1e-15)
    assert quantile("GAM", (1, 1), 1 - np.exp(-1)) == pytest.approx(1.0, rel=1e-12)
    assert quantile("LL", (0, 1), 0.5) == pytest.approx(1.0, rel=1e-14)


def test_ll_log_hazard_identity():
    lf = float(mp_log_density(BaselineFamily.LL, (0, 1), 1.0))
    ls = float(mp_log_survival(BaselineFamily.LL, (0, 1), 1.0))
    assert log_hazard("LL", (0, 1), 1.0) == pytest.approx(lf - ls, rel=1e-14)


def test_exponential_special_cases_agree():
    t = np.linspace(0.01, 20, 500)
    ref = t / 1.7
    np.testing.assert_allclose(cum_hazard("PGW", (1.7, 1, 1), t), ref, rtol=1e-12)
    np.testing.assert_allclose(cum_hazard("GAM", (1.7, 1), t), ref, rtol=1e-12)
    np.testing.assert_allclose(cum_hazard("GG", (1.7, 1, 1), t), ref, rtol=1e-12)


def test_pgw_quantile_against_bisection():
    th = (0.5, 3.75, 8.0)
    lo, hi = mp.mpf("1e-8"), mp.mpf(100)
    for _ in range(200):
        mid = (lo + hi) / 2
        if 1 - mp.exp(mp_log_survival(BaselineFamily.PGW, th, mid)) < mp.mpf("0.3"):
            lo = mid
        else:
            hi = mid
    q = quantile("PGW", th, 0.3)
    assert q == pytest.approx(float(lo), rel=1e-12)
    assert cdf("PGW", th, q) == pytest.approx(0.3, abs=1e-14)


@pytest.mark.parametrize("fam", FAMILIES)
def test_quantile_roundtrip_grid(fam):
    th = EXAMPLE_PARAMS[fam]
    p = np.concatenate([[1e-4], np.linspace(0.01, 0.99, 99), [1 - 1e-4]])
    q = quantile(fam, th, p)
    assert np.all(np.diff(q) > 0)
    np.testing.assert_allclose(cdf(fam, th, q), p, atol=1e-10, rtol=0)


@pytest.mark.parametrize("fam", FAMILIES)
def test_monotone(fam):
    th = EXAMPLE_PARAMS[fam]
    t = np.linspace(0, 30, 400)
    h = cum_hazard(fam, th, t)
    assert np.all(np.diff(h) >= 0)
    assert np.all(np.diff(survival(fam, th, t)) <= 0)


@pytest.mark.parametrize("fam", FAMILIES)
def test_parameter_gradients_against_finite_differences(fam):
    th = np.array(EXAMPLE_PARAMS[fam])
    y = np.array([0.2, 0.9, 2.5])
    p = BaselineParams(fam, th)
    z = p.unconstrained()
    terms = baseline_terms(fam, th, y, grad=True)
    eps = 1e-6
    for k in range(z.size):
        zp, zm = z.copy(), z.copy()
        zp[k] += eps
        zm[k] -= eps
        tp = baseline_terms(fam, BaselineParams.from_unconstrained(fam, zp).values, y)
        tm = baseline_terms(fam, BaselineParams.from_unconstrained(fam, zm).values, y)
        np.testing.assert_allclose(terms.dlogh_dtheta[k], (tp.log_h - tm.log_h) / (2 * eps), rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(terms.dcumh_dtheta[k], (tp.cum_h - tm.cum_h) / (2 * eps), rtol=1e-6, atol=1e-8)
    ly = np.log(y)
    up = baseline_terms(fam, th, np.exp(ly + eps))
    dn = baseline_terms(fam, th, np.exp(ly - eps))
    np.testing.assert_allclose(terms.dlogh_dlogy, (up.log_h - dn.log_h) / (2 * eps), rtol=1e-6, atol=1e-8)


def test_inverse_cum_hazard_far_tail():
    for fam in FAMILIES:
        th = EXAMPLE_PARAMS[fam]
        h = np.array([1e-12, 1e-3, 1.0, 30.0, 200.0])
        t = inverse_cum_hazard(fam, th, h)
        np.testing.assert_allclose(cum_hazard(fam, th, t), h, rtol=1e-9)


def test_errors():
    with pytest.raises(DomainError):
        BaselineParams("PGW", (1.0, 1.0))
    with pytest.raises(DomainError):
        BaselineParams("GAM", (-1.0, 1.0))
    with pytest.raises(DomainError):
        BaselineFamily.parse("Weibull")
    with pytest.raises(DomainError):
        log_density("LN", (0, 1), 0.0)
    with pytest.raises(DomainError):
        cum_hazard("LN", (0, 1), -1.0)
    with pytest.raises(DomainError):
        quantile("LN", (0, 1), 1.0)
    with pytest.raises(DomainError):
        quantile("LN", (0, 1), 0.0)


def test_family_aliases():
    assert BaselineFamily.parse("PowerGeneralizedWeibull") is BaselineFamily.PGW
    assert BaselineFamily.parse("LogNormal") is BaselineFamily.LN
    assert BaselineFamily.parse("generalized gamma") is BaselineFamily.GG
    assert BaselineParams("LN", (0.1, 2.0))["sigma"] == 2.0
    assert np.isclose(hazard("GAM", (1, 1), 3.0), 1.0)
