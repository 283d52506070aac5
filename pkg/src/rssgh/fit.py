"""Glue between data, model and sampler."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hmc import Diagnostics, SamplerConfig, run_chains
from .lifetable import LifeTable
from .model import HyperConfig, ModelSpec, RSSGHModel, SurvivalData
from .postprocess import pool_draws
from .spatial import RegionGraph


@dataclass
class FitResult:
    model: RSSGHModel
    chains: list
    diagnostics: Diagnostics

    @property
    def draws(self) -> np.ndarray:
        """Pooled unconstrained draws."""
        return pool_draws(self.chains)

    @property
    def constrained(self) -> np.ndarray:
        return np.concatenate([c.draws for c in self.chains], axis=0)

    def summary(self, level: float = 0.95) -> list[dict]:
        x = self.constrained
        lo, hi = (1 - level) / 2, 1 - (1 - level) / 2
        out = []
        for j, name in enumerate(self.model.constrained_names):
            col = x[:, j]
            out.append({
                "parameter": name,
                "mean": float(col.mean()),
                "sd": float(col.std(ddof=1)) if col.size > 1 else 0.0,
                "lower": float(np.quantile(col, lo)),
                "upper": float(np.quantile(col, hi)),
                "rhat": float(self.diagnostics.rhat[j]),
                "ess": float(self.diagnostics.ess[j]),
            })
        return out


def build_model(columns: dict, spec: ModelSpec, graph: RegionGraph, table: LifeTable | None = None,
                hyper: HyperConfig | None = None, standardize=()) -> RSSGHModel:
    """Prepare data and model from named columns (regions 1-based)."""
    tab = None if spec.overall_survival else table
    data = SurvivalData.from_columns(columns, spec, tab, n_regions=graph.n_regions, standardize=standardize)
    return RSSGHModel(spec, data, graph, hyper)


def fit_model(model: RSSGHModel, config: SamplerConfig | None = None) -> FitResult:
    config = config or SamplerConfig()
    chains, diag = run_chains(model.logp_and_grad, model.dim, config, constrain=model.constrained,
                              names=model.constrained_names)
    return FitResult(model, chains, diag)
