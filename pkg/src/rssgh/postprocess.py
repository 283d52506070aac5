"""Posterior summaries: net survival curves, exceedance probabilities,
pointwise log-likelihoods, PSIS-LOO and model comparison."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError
from .model import RSSGHModel, SurvivalData, cum_excess_from_predictors


# ---------------------------------------------------------------------------
# draws


def pool_draws(chains) -> np.ndarray:
    """Stack the unconstrained draws of several chains (or pass an array through)."""
    if isinstance(chains, np.ndarray):
        return np.atleast_2d(chains)
    return np.concatenate([c.unconstrained for c in chains], axis=0)


def thin(draws, max_draws: int | None) -> np.ndarray:
    """Evenly spaced subset of at most ``max_draws`` rows."""
    draws = np.atleast_2d(draws)
    if max_draws is None or draws.shape[0] <= max_draws:
        return draws
    idx = np.round(np.linspace(0, draws.shape[0] - 1, max_draws)).astype(int)
    return draws[idx]


# ---------------------------------------------------------------------------
# net survival


@dataclass
class NetSurvivalCurve:
    times: np.ndarray
    draws: np.ndarray
    level: float = 0.95

    @property
    def mean(self) -> np.ndarray:
        return self.draws.mean(axis=0)

    @property
    def lower(self) -> np.ndarray:
        return np.quantile(self.draws, (1.0 - self.level) / 2.0, axis=0)

    @property
    def upper(self) -> np.ndarray:
        return np.quantile(self.draws, 1.0 - (1.0 - self.level) / 2.0, axis=0)

    def at(self, t):
        """Posterior mean and interval at times on the grid."""
        idx = [int(np.argmin(np.abs(self.times - v))) for v in np.atleast_1d(t)]
        return self.mean[idx], self.lower[idx], self.upper[idx]


def default_grid(data: SurvivalData, steps: int = 200) -> np.ndarray:
    return np.linspace(0.0, float(data.time.max()), steps + 1)


def _check_grid(times):
    times = np.asarray(times, dtype=float).ravel()
    if times.size == 0:
        raise DomainError("empty time grid")
    if np.any(times < 0):
        raise DomainError("time grid must be >= 0")
    return times


def _group_curves(model: RSSGHModel, draws, data: SurvivalData, times, groups, n_groups, level):
    times = _check_grid(times)
    draws = np.atleast_2d(draws)
    counts = np.bincount(groups, minlength=n_groups).astype(float)
    out = np.empty((n_groups, draws.shape[0], times.size))
    for s, z in enumerate(draws):
        st = model.unpack(z)
        a, b = model.predictors(st, data)
        surv = np.exp(-cum_excess_from_predictors(st.theta, a, b, times))
        sums = np.zeros((n_groups, times.size))
        np.add.at(sums, groups, surv)
        with np.errstate(invalid="ignore"):
            out[:, s, :] = sums / counts[:, None]
    return [NetSurvivalCurve(times, out[g], level) for g in range(n_groups)]


def net_survival_individual(model: RSSGHModel, draws, index: int, times, data: SurvivalData | None = None,
                            level: float = 0.95) -> NetSurvivalCurve:
    """Per-draw ``exp(-H_E(t))`` for one record of ``data``."""
    data = data or model.data
    sub = data.subset([int(index)])
    return _group_curves(model, draws, sub, times, np.zeros(1, dtype=np.int64), 1, level)[0]


def net_survival_group(model: RSSGHModel, draws, mask, times, data: SurvivalData | None = None,
                       level: float = 0.95) -> NetSurvivalCurve:
    """Average of individual curves over the records selected by ``mask``."""
    data = data or model.data
    idx = np.nonzero(np.asarray(mask))[0] if np.asarray(mask).dtype == bool else np.asarray(mask)
    if idx.size == 0:
        raise DomainError("no records selected")
    sub = data.subset(idx)
    return _group_curves(model, draws, sub, times, np.zeros(idx.size, dtype=np.int64), 1, level)[0]


def net_survival_region(model: RSSGHModel, draws, region: int, times, data: SurvivalData | None = None,
                        level: float = 0.95) -> NetSurvivalCurve:
    """Region-averaged net survival for 0-based ``region``, one curve per draw."""
    data = data or model.data
    mask = data.region == int(region)
    if not mask.any():
        raise DomainError(f"region {region + 1} has no records")
    return net_survival_group(model, draws, mask, times, data, level)


def net_survival_regions(model: RSSGHModel, draws, times, data: SurvivalData | None = None,
                         level: float = 0.95) -> list:
    """Curves for every region in one pass; empty regions give ``None``."""
    data = data or model.data
    r = model.r
    curves = _group_curves(model, draws, data, times, data.region, r, level)
    present = np.bincount(data.region, minlength=r) > 0
    return [c if present[i] else None for i, c in enumerate(curves)]


def net_survival_marginal(model: RSSGHModel, draws, times, data: SurvivalData | None = None,
                          level: float = 0.95) -> NetSurvivalCurve:
    data = data or model.data
    return net_survival_group(model, draws, np.ones(data.n, dtype=bool), times, data, level)


def region_average_curve(curves) -> np.ndarray:
    """Equal-weight average of per-region point estimates (skips empty regions)."""
    return np.mean([c.mean for c in curves if c is not None], axis=0)


# ---------------------------------------------------------------------------
# exceedance and error metric


def effect_draws(model: RSSGHModel, draws, selector: str = "u") -> np.ndarray:
    """Per-draw effect vectors; ``selector`` is ``"u"`` (hazard level) or ``"u_tilde"``."""
    if selector not in ("u", "u_tilde"):
        raise DomainError(f"unknown effect selector {selector!r}")
    if selector == "u" and not model.spec.has_hazard_effect:
        raise DomainError("model has no hazard-level effects")
    if selector == "u_tilde" and not model.spec.has_time_effect:
        raise DomainError("model has no time-level effects")
    draws = np.atleast_2d(draws)
    return np.stack([getattr(model.unpack(z), selector) for z in draws])


def exceedance_probability(effects, threshold: float = 0.0) -> np.ndarray:
    """Fraction of draws with effect above ``threshold``, per region.

    ``effects`` is a ``draws x regions`` array (see ``effect_draws``).
    """
    effects = np.atleast_2d(np.asarray(effects, dtype=float))
    return np.mean(effects > threshold, axis=0)


def error_integral(f, f_hat, times, t1: float | None = None, t2: float | None = None) -> float:
    """``int_{t1}^{t2} |f - f_hat| dt`` for curves given on a shared grid.

    Both curves are read as piecewise linear between grid points; the integral
    of the absolute difference is exact for that reading (sign changes inside
    an interval are handled).
    """
    times = np.asarray(times, dtype=float)
    f = np.asarray(f, dtype=float)
    f_hat = np.asarray(f_hat, dtype=float)
    if f.shape != times.shape or f_hat.shape != times.shape:
        raise DomainError("curves and grid must have the same length")
    d = f - f_hat
    if np.any(np.diff(times) <= 0):
        raise DomainError("time grid must be strictly increasing")
    lo = times[0] if t1 is None else float(t1)
    hi = times[-1] if t2 is None else float(t2)
    if lo < times[0] or hi > times[-1] or lo > hi:
        raise DomainError("integration interval must lie inside the grid")
    inner = (times > lo) & (times < hi)
    tt = np.concatenate([[lo], times[inner], [hi]])
    dd = np.interp(tt, times, d)
    h = np.diff(tt)
    d0, d1 = dd[:-1], dd[1:]
    same = d0 * d1 >= 0
    area_same = 0.5 * h * (np.abs(d0) + np.abs(d1))
    denom = np.abs(d0) + np.abs(d1)
    with np.errstate(invalid="ignore", divide="ignore"):
        area_cross = 0.5 * h * (d0 * d0 + d1 * d1) / np.where(denom > 0, denom, 1.0)
    return float(np.sum(np.where(same, area_same, area_cross)))


# ---------------------------------------------------------------------------
# PSIS-LOO


def pointwise_loglik(model: RSSGHModel, draws) -> np.ndarray:
    """``draws x observations`` matrix of per-record log-likelihood terms."""
    draws = np.atleast_2d(draws)
    return np.stack([model.pointwise_loglik(z) for z in draws])


def _gpd_fit(x):
    """Zhang-Stephens generalized Pareto fit with weak shape regularization.

    ``x`` are positive exceedances sorted ascending.  Returns ``(k, sigma)``.
    """
    n = x.size
    prior = 3.0
    m = 30 + int(np.sqrt(n))
    bs = 1.0 - np.sqrt(m / (np.arange(1, m + 1) - 0.5))
    quart = x[int(n / 4 + 0.5) - 1]
    if quart <= 0:
        # ties at the cutoff (repeated draws) leave zero exceedances in the lower quarter
        quart = x[x > 0].min()
    bs /= prior * quart
    bs += 1.0 / x[-1]
    ks = -bs
    temp = ks[:, None] * x
    ks = np.log1p(temp).mean(axis=1)
    log_lik = n * (np.log(-bs / ks) - ks - 1.0)
    weights = np.exp(log_lik - logsumexp(log_lik))
    real = weights >= 10 * np.finfo(float).eps
    weights = weights[real] / weights[real].sum()
    bdivk = np.sum(bs[real] * weights)
    k = np.log1p(-bdivk * x).mean()
    sigma = -k / bdivk
    # shrink towards 0.5 as in the usual PSIS implementation
    k = (n * k + 10 * 0.5) / (n + 10)
    return k, sigma


def _gpd_quantile(p, k, sigma):
    if k == 0:
        return -sigma * np.log1p(-p)
    return sigma * np.expm1(-k * np.log1p(-p)) / k


def psis_smooth(log_ratios):
    """Pareto-smooth one vector of log importance ratios.

    Returns ``(log_weights, k_hat)``; ``k_hat = -inf`` flags a degenerate tail
    (all tail ratios equal), in which case the raw ratios are returned.
    """
    lw = np.asarray(log_ratios, dtype=float).copy()
    s = lw.size
    lw -= lw.max()
    m = int(np.ceil(min(0.2 * s, 3.0 * np.sqrt(s))))
    order = np.argsort(lw, kind="stable")
    cut = lw[order[s - m - 1]]
    tail_idx = order[s - m:]
    tail = np.exp(lw[tail_idx])
    exp_cut = np.exp(cut)
    exceed = tail - exp_cut
    if m < 5 or not np.all(np.isfinite(exceed)) or exceed.max() <= 0 or np.all(exceed == exceed[0]):
        return lw, -np.inf
    k, sigma = _gpd_fit(exceed)
    if not np.isfinite(k):
        return lw, -np.inf
    p = (np.arange(1, m + 1) - 0.5) / m
    smoothed = np.log(exp_cut + _gpd_quantile(p, k, sigma))
    lw[tail_idx] = smoothed
    lw = np.minimum(lw, 0.0)  # cap at the largest raw ratio
    return lw, float(k)


@dataclass
class LooResult:
    elpd: float
    se: float
    pointwise: np.ndarray
    k_hat: np.ndarray
    name: str = ""

    @property
    def n(self) -> int:
        return self.pointwise.size

    def k_counts(self) -> dict:
        k = self.k_hat
        return {
            "good(<=0.5)": int(np.sum(k <= 0.5)),
            "ok(0.5-0.7)": int(np.sum((k > 0.5) & (k <= 0.7))),
            "bad(>0.7)": int(np.sum(k > 0.7)),
        }

    def to_dict(self) -> dict:
        k = [None if not np.isfinite(v) else float(v) for v in self.k_hat]
        return {
            "name": self.name,
            "elpd_loo": self.elpd,
            "se": self.se,
            "pointwise": self.pointwise.tolist(),
            "pareto_k": k,
            "pareto_k_counts": self.k_counts(),
        }

    @classmethod
    def from_dict(cls, d) -> "LooResult":
        k = np.array([-np.inf if v is None else v for v in d["pareto_k"]], dtype=float)
        return cls(float(d["elpd_loo"]), float(d["se"]), np.asarray(d["pointwise"], dtype=float), k,
                   d.get("name", ""))


def psis_loo(loglik, name: str = "") -> LooResult:
    """PSIS-LOO from a ``draws x observations`` log-likelihood matrix."""
    ll = np.asarray(loglik, dtype=float)
    if ll.ndim != 2:
        raise DomainError("log-likelihood matrix must be 2-D")
    s, n = ll.shape
    if s < 100:
        raise DomainError("PSIS-LOO needs at least 100 draws")
    elpd_i = np.empty(n)
    k_hat = np.empty(n)
    for i in range(n):
        col = ll[:, i]
        lw, k = psis_smooth(-col)
        k_hat[i] = k
        elpd_i[i] = logsumexp(lw + col) - logsumexp(lw)
    se = float(np.std(elpd_i, ddof=1) * np.sqrt(n)) if n > 1 else 0.0
    return LooResult(float(elpd_i.sum()), se, elpd_i, k_hat, name)


@dataclass
class ComparisonReport:
    names: list
    elpd: np.ndarray
    se: np.ndarray
    elpd_diff: np.ndarray
    se_diff: np.ndarray
    k_hat: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "models": [
                {"name": n, "elpd_loo": float(e), "se": float(s), "elpd_diff": float(d), "se_diff": float(sd)}
                for n, e, s, d, sd in zip(self.names, self.elpd, self.se, self.elpd_diff, self.se_diff)
            ]
        }

    def rows(self):
        for n, e, s, d, sd in zip(self.names, self.elpd, self.se, self.elpd_diff, self.se_diff):
            yield {"model": n, "elpd_loo": e, "se": s, "elpd_diff": d, "se_diff": sd}


def compare_models(results) -> ComparisonReport:
    """Rank models by elpd; differences and their SEs are relative to the best.

    ``results`` is a list of ``LooResult`` (or a ``{name: LooResult}`` dict).
    """
    if isinstance(results, dict):
        results = [LooResult(r.elpd, r.se, r.pointwise, r.k_hat, name) for name, r in results.items()]
    results = list(results)
    if not results:
        raise DomainError("nothing to compare")
    n = results[0].n
    if any(r.n != n for r in results):
        raise DomainError("models were scored on different numbers of observations")
    order = sorted(range(len(results)), key=lambda i: -results[i].elpd)
    best = results[order[0]]
    names, elpd, se, diff, se_diff = [], [], [], [], []
    for i in order:
        r = results[i]
        names.append(r.name or f"model{i + 1}")
        elpd.append(r.elpd)
        se.append(r.se)
        d = r.pointwise - best.pointwise
        diff.append(float(d.sum()))
        se_diff.append(float(np.std(d, ddof=1) * np.sqrt(n)) if n > 1 else 0.0)
    return ComparisonReport(names, np.array(elpd), np.array(se), np.array(diff), np.array(se_diff),
                            {nm: results[i].k_hat for nm, i in zip(names, order)})
