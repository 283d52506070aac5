import numpy as np
import pytest

from rssgh.lifetable import synthetic_lifetable
from rssgh.model import ModelSpec, RSSGHModel, SurvivalData
from rssgh.simulate import HAZARD_COVARIATES, TIME_COVARIATES, SimConfig, simulate_dataset
from rssgh.spatial import england_gor


@pytest.fixture(scope="session")
def graph():
    return england_gor()


@pytest.fixture(scope="session")
def table():
    return synthetic_lifetable()


@pytest.fixture(scope="session")
def small_sim(graph, table):
    return simulate_dataset(SimConfig(n=200, seed=5), graph, table)


def make_model(sim, graph, table, family="LN", submodel="RS-SGH", structure="ICAR", **kw):
    spec = ModelSpec.with_structure(family, submodel, structure, hazard_covariates=HAZARD_COVARIATES,
                                    time_covariates=None if submodel in ("RS-SAFT", "RS-AFT") else
                                    (() if submodel in ("RS-SPH", "RS-PH") else TIME_COVARIATES), **kw)
    data = SurvivalData.from_columns(sim.columns, spec, table, n_regions=graph.n_regions)
    return RSSGHModel(spec, data, graph)


def random_state(model, rng, scale=0.3):
    """A moderate random point on the unconstrained scale."""
    return rng.normal(0.0, scale, size=model.dim)


def fd_grad(f, z, h=1e-5):
    g = np.empty_like(z)
    for k in range(z.size):
        e = np.zeros_like(z)
        e[k] = h
        g[k] = (f(z + e) - f(z - e)) / (2 * h)
    return g
