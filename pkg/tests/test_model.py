import math

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import quad

from conftest import fd_grad, make_model, random_state
from rssgh.baseline import BaselineFamily, BaselineParams, hazard
from rssgh.errors import DomainError, ModelSpecError, NumericalError
from rssgh.lifetable import LifeTable
from rssgh.model import (
    HyperConfig,
    ModelSpec,
    ParamState,
    PatientRecord,
    RSSGHModel,
    Submodel,
    SurvivalData,
    cum_excess_hazard,
    excess_hazard,
    g_prior_factor,
)
from rssgh.spatial import EffectStructure, icar_scaling_factor

THETAS = {
    "LN": (0.65, 1.15),
    "LL": (0.1, 0.7),
    "PGW": (0.5, 3.75, 8.0),
    "GAM": (1.2, 1.8),
    "GG": (1.4, 1.6, 1.3),
}


def state(family, alpha=(), beta=(), ut=None, u=None, r=3):
    return ParamState(BaselineParams(family, THETAS[family] if family in THETAS else (1, 1)),
                      np.asarray(alpha, float), np.asarray(beta, float), np.zeros(0), np.zeros(0),
                      np.zeros(r) if ut is None else np.asarray(ut, float),
                      np.zeros(r) if u is None else np.asarray(u, float))


def test_excess_hazard_all_effects_off_is_baseline():
    st = state("LN", alpha=[0.0], beta=[0.0, 0.0])
    rec = PatientRecord(1.3, 1, 60.0, 2, {"a": 0.4, "b": -1.0})
    t = np.array([0.2, 1.0, 3.3])
    np.testing.assert_allclose(excess_hazard(st, rec, t, ("a", "b"), ("a",)), hazard("LN", THETAS["LN"], t),
                               rtol=1e-14)
    assert cum_excess_hazard(st, rec, 0.0, ("a", "b"), ("a",)) == 0.0


def test_gamma_ph_scaling_constant_hazard():
    st = ParamState(BaselineParams("GAM", (1, 1)), np.zeros(0), np.array([np.log(2.0)]), np.zeros(0),
                    np.zeros(0), np.zeros(3), np.zeros(3))
    rec = PatientRecord(1.0, 1, 60.0, 1, {"x": 1.0})
    np.testing.assert_allclose(excess_hazard(st, rec, np.array([0.1, 2.0, 9.0]), ("x",)), 2.0, rtol=1e-14)


def test_ln_record_against_direct_formula():
    alpha, beta = np.array([1.0]), np.array([1.0, -1.0, -1.0, -1.0, -1.0, 2.0])
    ut = np.array([0.3, -0.2, 0.1])
    u = np.array([-0.4, 0.25, 0.15])
    st = ParamState(BaselineParams("LN", (0.65, 1.15)), alpha, beta, np.zeros(0), np.zeros(0), ut, u)
    names = ("age_std", "dep2", "dep3", "dep4", "dep5", "sex")
    cov = dict(zip(names, (0.35, 0.0, 1.0, 0.0, 0.0, 1.0)))
    rec = PatientRecord(2.0, 1, 77.0, 2, cov)
    t = 1.7
    a = 0.35 * 1.0 + ut[1]
    b = -1.0 + 2.0 + 0.35 + u[1]
    y = t * math.exp(a)
    dist = stats.lognorm(s=1.15, scale=math.exp(0.65))
    h_ref = dist.pdf(y) / dist.sf(y) * math.exp(b)
    H_ref = -dist.logsf(y) * math.exp(b - a)
    assert excess_hazard(st, rec, t, names, ("age_std",)) == pytest.approx(h_ref, rel=1e-12)
    assert cum_excess_hazard(st, rec, t, names, ("age_std",)) == pytest.approx(H_ref, rel=1e-12)


@pytest.mark.parametrize("family", list(THETAS))
def test_cum_excess_matches_quadrature(family):
    rng = np.random.default_rng(11)
    names = ("x1", "x2")
    for _ in range(20):
        st = state(family, alpha=rng.normal(0, 0.5, 1), beta=rng.normal(0, 0.5, 2), ut=rng.normal(0, 0.3, 3),
                   u=rng.normal(0, 0.3, 3))
        rec = PatientRecord(1.0, 1, 60.0, int(rng.integers(1, 4)), dict(zip(names, rng.normal(size=2))))
        t = float(rng.uniform(0.3, 4.0))
        f = lambda s: float(excess_hazard(st, rec, s, names, ("x1",)))  # noqa: E731
        ref, _ = quad(f, 0.0, t, epsabs=0, epsrel=1e-12, limit=200)
        assert cum_excess_hazard(st, rec, t, names, ("x1",)) == pytest.approx(ref, rel=1e-6)


def test_g_prior_factor():
    assert g_prior_factor(100, 100, 10) == 10
    assert g_prior_factor(100, 50, 5) == 15
    with pytest.raises(DomainError):
        g_prior_factor(10, 5, 0)


def _toy_data(n=20, seed=0, with_table=True):
    rng = np.random.default_rng(seed)
    cols = {
        "time": rng.uniform(0.05, 4.0, n),
        "status": rng.integers(0, 2, n),
        "age": rng.uniform(40, 90, n),
        "region": rng.integers(1, 4, n),
        "year": np.full(n, 2001.5),
        "x1": rng.normal(size=n),
        "x2": rng.integers(0, 2, n).astype(float),
        "sex": rng.integers(0, 2, n),
    }
    ages = np.arange(0, 111)
    rates = np.array([[0.0005 * np.exp(0.08 * (ages - 40)) * (1.2 if s else 1.0)] for s in (0, 1)])
    tab = LifeTable(("sex",), [(0,), (1,)], ages, [2000], rates) if with_table else None
    return cols, tab


def _naive_ln_loglik(cols, tab, theta, alpha, beta, ut, u):
    mu, sig = theta
    total = 0.0
    for i in range(len(cols["time"])):
        t = cols["time"][i]
        reg = cols["region"][i] - 1
        x = [cols["x1"][i], cols["x2"][i]]
        a = x[0] * alpha[0] + ut[reg]
        b = x[0] * beta[0] + x[1] * beta[1] + u[reg]
        y = t * math.exp(a)
        z = (math.log(y) - mu) / sig
        surv = 0.5 * math.erfc(z / math.sqrt(2))
        dens = math.exp(-0.5 * z * z) / (sig * y * math.sqrt(2 * math.pi))
        h_e = dens / surv * math.exp(b)
        cum_e = -math.log(surv) * math.exp(b - a)
        attained = cols["age"][i] + t
        h_p = 0.0
        if tab is not None:
            s = int(cols["sex"][i])
            h_p = 0.0005 * math.exp(0.08 * (math.floor(attained) - 40)) * (1.2 if s else 1.0)
        total += (math.log(h_p + h_e) if cols["status"][i] else 0.0) - cum_e
    return total


def test_loglik_matches_naive_loop(graph):
    cols, tab = _toy_data()
    from rssgh.spatial import RegionGraph

    g3 = RegionGraph(3, [(0, 1), (1, 2)])
    spec = ModelSpec("LN", "RS-SGH", "IID", "IID", hazard_covariates=("x1", "x2"), time_covariates=("x1",))
    data = SurvivalData.from_columns(cols, spec, tab, n_regions=3)
    m = RSSGHModel(spec, data, g3)
    rng = np.random.default_rng(4)
    for _ in range(5):
        z = rng.normal(0, 0.4, m.dim)
        st = m.unpack(z)
        ref = _naive_ln_loglik(cols, tab, st.theta.values, st.alpha, st.beta, st.u_tilde, st.u)
        assert m.log_likelihood(z) == pytest.approx(ref, rel=1e-12)
        assert m.pointwise_loglik(z).sum() == pytest.approx(m.log_likelihood(z), rel=1e-14)


def test_overall_survival_equals_zero_table():
    cols, _ = _toy_data(with_table=False)
    zero = LifeTable.constant(0.0, ("sex",), [(0,), (1,)], range(0, 111), [2000])
    spec_os = ModelSpec("PGW", "RS-GH", hazard_covariates=("x1", "x2"), time_covariates=("x1",),
                        overall_survival=True)
    spec = ModelSpec("PGW", "RS-GH", hazard_covariates=("x1", "x2"), time_covariates=("x1",))
    m_os = RSSGHModel(spec_os, SurvivalData.from_columns(cols, spec_os, None, n_regions=3))
    m_zero = RSSGHModel(spec, SurvivalData.from_columns(cols, spec, zero, n_regions=3))
    z = np.random.default_rng(1).normal(0, 0.3, m_os.dim)
    assert m_os.log_likelihood(z) == m_zero.log_likelihood(z)


def test_single_record_cases():
    spec = ModelSpec("GAM", "RS-PH", hazard_covariates=())
    # censored: -H_E
    d = SurvivalData([2.0], [0], [0], n_regions=1)
    m = RSSGHModel(spec, d)
    z = np.log([1.0, 1.0])
    assert m.log_likelihood(z) == pytest.approx(-2.0)
    # death, h_P = 0, constant excess hazard 1/eta
    d = SurvivalData([2.0], [1], [0], n_regions=1)
    m = RSSGHModel(spec, d)
    lam = 1 / 0.5
    assert m.log_likelihood(np.log([0.5, 1.0])) == pytest.approx(math.log(lam) - lam * 2.0, rel=1e-13)


def test_prior_component_sum_oracle(graph, small_sim, table):
    hp = HyperConfig()
    cols = dict(small_sim.columns)
    for structure in ("IID", "ICAR", "BYM2"):
        spec = ModelSpec("PGW", "RS-SGH", structure, structure, hazard_covariates=("dep2", "sex"),
                         time_covariates=(), spline_covariates=(("age_std", 2),))
        data = SurvivalData.from_columns(cols, spec, table, n_regions=9)
        m = RSSGHModel(spec, data, graph)
        z = np.random.default_rng(3).normal(0, 0.4, m.dim)
        st = m.unpack(z)
        eta, nu, kap = st.theta.values
        ref = (stats.halfcauchy.logpdf(eta, scale=2.5) + np.log(eta)
               + stats.halfcauchy.logpdf(nu, scale=2.5) + np.log(nu)
               + stats.gamma.logpdf(kap, 0.65, scale=1 / 1.83) + np.log(kap)
               + stats.norm.logpdf(st.beta, scale=10).sum())
        # g-prior on the spline block
        S = data.S
        g = g_prior_factor(data.n, data.n_obs, S.shape[1])
        s2 = st.sigma2_gamma[0]
        cov = s2 * g * np.linalg.inv(S.T @ S)
        ref += stats.multivariate_normal(np.zeros(S.shape[1]), cov).logpdf(st.gamma)
        ref += stats.halfcauchy.logpdf(s2, scale=2.5) + np.log(s2)
        for name, vec in (("ut", st.u_tilde), ("u", st.u)):
            hy = st.hyper[name]
            if structure == "IID":
                sig = hy["sigma"]
                tau = sig ** -2
                ref += stats.norm.logpdf(vec, scale=sig).sum()
                ref += stats.gamma.logpdf(tau, hp.theta_tau, scale=1 / hp.theta_tau) + np.log(2 * tau)
            elif structure == "ICAR":
                tau = hy["tau"]
                pw = sum((vec[k] - vec[l]) ** 2 for k, l in graph.edges)
                ref += 4 * np.log(tau) - 0.5 * tau * pw
                ref += stats.norm.logpdf(vec.sum(), scale=0.001 * 9)
                ref += stats.gamma.logpdf(tau, 0.01, scale=100.0) + np.log(tau)
            else:
                lat = st.latent[name]
                c = icar_scaling_factor(graph)
                s = lat["sstar"]
                pw = sum((s[k] - s[l]) ** 2 for k, l in graph.edges)
                ref += stats.norm.logpdf(lat["vstar"]).sum()
                ref += 4 * np.log(c) - 0.5 * c * pw + stats.norm.logpdf(s.sum(), scale=0.009)
                sig, rho = hy["sigma"], hy["rho"]
                ref += stats.halfnorm.logpdf(sig) + np.log(sig)
                ref += stats.beta.logpdf(rho, 0.5, 0.5) + np.log(rho * (1 - rho))
                np.testing.assert_allclose(vec, sig * (np.sqrt(1 - rho) * lat["vstar"] + np.sqrt(rho) * s))
        assert m.log_prior(z) == pytest.approx(ref, rel=1e-11), structure


@pytest.mark.parametrize("family", ["LN", "LL", "PGW", "GAM", "GG"])
@pytest.mark.parametrize("structure", ["None", "IID", "ICAR", "BYM2"])
def test_gradient_spot_check(family, structure, graph, small_sim, table):
    m = make_model(small_sim, graph, table, family, "RS-SGH", structure, spline_covariates=(("age", 1),))
    z = random_state(m, np.random.default_rng(7))
    g = m.grad_log_posterior(z)
    fd = fd_grad(m.log_posterior, z)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-5 * max(1.0, np.abs(g).max()))


def test_empty_data_posterior_is_prior(graph):
    spec = ModelSpec("LN", "RS-SGH", "ICAR", "ICAR", hazard_covariates=("x",), time_covariates=("x",))
    d = SurvivalData(np.zeros(0), np.zeros(0), np.zeros(0, int), np.zeros((0, 1)), ("x",), [0], n_regions=9)
    m = RSSGHModel(spec, d, graph)
    z = np.random.default_rng(0).normal(size=m.dim)
    assert m.log_posterior(z) == m.log_prior(z)
    g_prior = m._prior(z, m.unpack(z), True)[1]
    np.testing.assert_array_equal(m.grad_log_posterior(z), g_prior)


def test_saft_tied_gradient_is_sum_of_roles(small_sim, graph, table):
    cov = ("age_std", "sex")
    spec_aft = ModelSpec("LN", "RS-AFT", hazard_covariates=cov)
    spec_gh = ModelSpec("LN", "RS-GH", hazard_covariates=cov, time_covariates=cov)
    d_aft = SurvivalData.from_columns(small_sim.columns, spec_aft, table, n_regions=9)
    d_gh = SurvivalData.from_columns(small_sim.columns, spec_gh, table, n_regions=9)
    aft, gh = RSSGHModel(spec_aft, d_aft), RSSGHModel(spec_gh, d_gh)
    z_aft = np.array([0.5, 0.1, 0.3, -0.4])
    z_gh = np.array([0.5, 0.1, 0.3, -0.4, 0.3, -0.4])

    def lik_grad(m, z):
        return m.grad_log_posterior(z) - m._prior(z, m.unpack(z), True)[1]

    g_aft = lik_grad(aft, z_aft)
    g_gh = lik_grad(gh, z_gh)
    np.testing.assert_allclose(g_aft[2:], g_gh[2:4] + g_gh[4:6], rtol=1e-12)
    fd = fd_grad(aft.log_likelihood, z_aft)
    np.testing.assert_allclose(g_aft, fd, rtol=1e-6)


def test_ph_hazard_ratio_is_time_free():
    st = ParamState(BaselineParams("PGW", (0.5, 3.75, 8.0)), np.zeros(0), np.array([0.7]), np.zeros(0),
                    np.zeros(0), np.zeros(2), np.array([0.2, -0.2]))
    rec = PatientRecord(1.0, 1, 50.0, 1, {"x": 1.3})
    t = np.array([0.1, 0.5, 2.0, 6.0])
    ratio = excess_hazard(st, rec, t, ("x",)) / hazard("PGW", (0.5, 3.75, 8.0), t)
    np.testing.assert_allclose(ratio, np.exp(0.7 * 1.3 + 0.2), rtol=1e-12)


def test_submodel_lattice():
    assert Submodel.parse("sph") is Submodel.SPH
    spec = ModelSpec.with_structure("LN", "RS-SPH", "ICAR", hazard_covariates=("x",))
    assert spec.time_structure is EffectStructure.NONE and spec.time_covariates == ()
    d = SurvivalData([1.0, 2.0], [1, 0], [0, 1], np.array([[0.1], [0.2]]), ("x",), n_regions=2)
    from rssgh.spatial import RegionGraph

    g = RegionGraph(2, [(0, 1)])
    m = RSSGHModel(spec, d, g)
    st = m.unpack(np.zeros(m.dim))
    assert st.alpha.size == 0 and np.all(st.u_tilde == 0)
    spec2 = ModelSpec.with_structure("LN", "RS-SGH-II", "IID", hazard_covariates=("x",))
    m2 = RSSGHModel(spec2, d, g)
    assert list(m2.slots) == ["shared"]
    st2 = m2.unpack(np.arange(m2.dim) * 0.1)
    np.testing.assert_array_equal(st2.u, st2.u_tilde)
    with pytest.raises(ModelSpecError):
        ModelSpec.with_structure("LN", "RS-AH", "ICAR")
    with pytest.raises(ModelSpecError):
        ModelSpec("LN", "RS-SAFT", "ICAR", "IID")
    with pytest.raises(ModelSpecError):
        ModelSpec("LN", "RS-SGH", hazard_covariates=("x",), time_covariates=("y",))
    with pytest.raises(ModelSpecError):
        ModelSpec("LN", "RS-PH", "None", "ICAR")


def test_numerical_error_carries_index():
    spec = ModelSpec("LN", "RS-PH", hazard_covariates=("x",))
    x = np.array([[0.0], [0.0], [1.0]])
    d = SurvivalData([1.0, 1.0, 1.0], [1, 0, 0], [0, 0, 0], x, ("x",), n_regions=1)
    m = RSSGHModel(spec, d)
    with pytest.raises(NumericalError) as e:
        m.log_likelihood(np.array([0.0, 0.0, 800.0]))
    assert e.value.index == 2


def test_constrained_roundtrip(small_sim, graph, table):
    for structure in ("IID", "ICAR", "BYM2"):
        m = make_model(small_sim, graph, table, "GG", "RS-SGH", structure)
        z = random_state(m, np.random.default_rng(2))
        np.testing.assert_allclose(m.from_constrained(m.constrained(z)), z, atol=1e-12)
        np.testing.assert_allclose(m.pack(m.unpack(z)), z, atol=1e-12)
        assert len(m.constrained_names) == m.constrained(z).size


def test_data_validation():
    with pytest.raises(DomainError):
        SurvivalData([-1.0], [0], [0])
    with pytest.raises(DomainError):
        SurvivalData([1.0], [2], [0])
    with pytest.raises(DomainError):
        SurvivalData([0.0], [1], [0])
    with pytest.raises(DomainError, match="missing declared"):
        SurvivalData.from_columns({"time": [1.0], "status": [0], "age": [50.0], "region": [1]},
                                  ModelSpec("LN", hazard_covariates=("x",)))


def test_standardize_records_scaling():
    cols, tab = _toy_data()
    spec = ModelSpec("LN", "RS-PH", hazard_covariates=("x1",))
    d = SurvivalData.from_columns(cols, spec, tab, n_regions=3, standardize=("x1",))
    m, s = d.scaling["x1"]
    assert m == pytest.approx(cols["x1"].mean())
    np.testing.assert_allclose(d.X[:, 0], (cols["x1"] - m) / s)
    assert BaselineFamily.parse("ln") is spec.family
