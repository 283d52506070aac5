import numpy as np
import pytest
from scipy.stats import kstest

from rssgh.baseline import BaselineParams, cum_hazard
from rssgh.errors import DomainError
from rssgh.lifetable import LifeTable
from rssgh.simulate import (
    SimConfig,
    net_survival_at,
    simulate_dataset,
    simulate_excess_time,
    true_region_net_survival,
)


def test_probability_integral_roundtrip():
    rng = np.random.default_rng(0)
    for fam, th in (("LN", (0.65, 1.15)), ("PGW", (0.5, 3.75, 8.0)), ("GG", (1.3, 2.0, 0.8))):
        p = BaselineParams(fam, th)
        a, b = rng.normal(0, 0.5, 500), rng.normal(0, 0.5, 500)
        z = rng.uniform(size=500)
        t = simulate_excess_time(p, a, b, z)
        resid = 1.0 - net_survival_at(p, a, b, t) - z
        assert np.max(np.abs(resid)) < 1e-8


def test_dataset_is_deterministic(graph, table):
    a = simulate_dataset(SimConfig(n=100, seed=9), graph, table)
    b = simulate_dataset(SimConfig(n=100, seed=9), graph, table)
    c = simulate_dataset(SimConfig(n=100, seed=10), graph, table)
    for k in a.columns:
        np.testing.assert_array_equal(a.columns[k], b.columns[k])
    assert not np.array_equal(a.columns["time"], c.columns["time"])


def test_no_censoring_gives_all_events(graph):
    tab = LifeTable.constant(0.0, ("sex",), [(0,), (1,)], range(0, 111), [2010])
    cfg = SimConfig(n=300, seed=2, horizon=1e9, dropout_rate=0.0)
    sim = simulate_dataset(cfg, graph, tab)
    assert np.all(sim.columns["status"] == 1)
    np.testing.assert_array_equal(sim.columns["time"], sim.truth["latent"]["t_excess"])


def test_constant_hazard_with_shift_is_exponential(graph):
    # GAM(1, 1) has unit hazard; only sex enters, shifting log hazard by 0.7
    tab = LifeTable.constant(0.0, ("sex",), [(0,), (1,)], range(0, 111), [2010])
    cfg = SimConfig(n=4000, family="GAM", theta=(1.0, 1.0), alpha=(0.0,), beta=(0, 0, 0, 0, 0, 0.7),
                    effects="none", horizon=1e9, dropout_rate=0.0, seed=3)
    sim = simulate_dataset(cfg, graph, tab)
    sex = sim.columns["sex"]
    t = sim.columns["time"]
    assert kstest(t[sex == 0], "expon").pvalue > 0.01
    assert kstest(t[sex == 1], "expon", args=(0, np.exp(-0.7))).pvalue > 0.01


def test_censoring_fraction_and_truth(small_sim):
    cols = small_sim.columns
    assert small_sim.truth["censoring_fraction"] == pytest.approx(1 - cols["status"].mean())
    assert np.all(cols["time"] <= 4.0)
    assert set(np.unique(cols["region"])) <= set(range(1, 10))
    assert abs(sum(small_sim.truth["u"])) < 1e-10


def test_true_region_curve_oracle(small_sim):
    truth = small_sim.truth
    th = BaselineParams("LN", list(truth["theta"].values()))
    times = np.array([0.0, 1.0, 2.5])
    curve = true_region_net_survival(small_sim, times, 9)
    np.testing.assert_allclose(curve[:, 0], 1.0)
    reg = small_sim.columns["region"]
    a, b = truth["latent"]["a"], truth["latent"]["b"]
    i = 4
    m = reg == i + 1
    ref = np.mean([np.exp(-cum_hazard("LN", th.values, 2.5 * np.exp(ai)) * np.exp(bi - ai))
                   for ai, bi in zip(a[m], b[m])])
    assert curve[i, 2] == pytest.approx(ref, rel=1e-12)


def test_config_errors():
    with pytest.raises(DomainError):
        SimConfig(n=0)
    with pytest.raises(DomainError):
        SimConfig(family="GG")
    with pytest.raises(DomainError):
        SimConfig(effects="fixed", u=(0,) * 9)
    with pytest.raises(DomainError):
        simulate_dataset(SimConfig(n=5, effects="fixed", u=(0,) * 4, u_tilde=(0,) * 4))
    with pytest.raises(DomainError):
        SimConfig(beta=(1.0,))


def test_empirical_net_survival_tracks_analytic_curve(graph, table):
    sim = simulate_dataset(SimConfig(n=2000, seed=31), graph, table)
    lat = sim.truth["latent"]
    t_exc = lat["t_excess"]
    th = BaselineParams("LN", list(sim.truth["theta"].values()))
    for t in (0.5, 1.0, 2.0, 4.0):
        analytic = net_survival_at(th, lat["a"], lat["b"], t).mean()
        empirical = np.mean(t_exc > t)
        se = np.sqrt(analytic * (1 - analytic) / t_exc.size)
        assert abs(empirical - analytic) < 4 * se
