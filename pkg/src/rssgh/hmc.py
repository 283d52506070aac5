"""Static-trajectory Hamiltonian Monte Carlo with windowed adaptation.

Each transition integrates a leapfrog trajectory whose length is drawn
uniformly from ``1..max_leapfrog``.  During warmup the step size is tuned by
dual averaging and a diagonal inverse metric is estimated from a sequence of
doubling windows; both are frozen afterwards.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, SamplerError

log = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1000.0


@dataclass
class SamplerConfig:
    chains: int = 4
    iterations: int = 4000
    warmup: int = 2000
    target_accept: float = 0.8
    max_leapfrog: int = 32
    seed: int = 1
    init_radius: float = 1.0
    max_divergent_fraction: float = 0.5
    workers: int = 1

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.iterations < 0 or self.warmup < 0:
            raise ValueError("iterations and warmup must be >= 0")
        if self.iterations > 0 and self.warmup >= self.iterations:
            raise ValueError("warmup must be smaller than iterations")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_leapfrog < 1:
            raise ValueError("max_leapfrog must be >= 1")

    @property
    def kept(self) -> int:
        return max(self.iterations - self.warmup, 0)


@dataclass
class ChainDraws:
    """Post-warmup output of one chain."""

    draws: np.ndarray
    unconstrained: np.ndarray
    logp: np.ndarray
    accept_stat: np.ndarray
    n_leapfrog: np.ndarray
    divergent: np.ndarray
    step_size: float
    inv_metric: np.ndarray
    names: list = field(default_factory=list)
    warmup_divergences: int = 0
    chain: int = 0

    @property
    def n_divergent(self) -> int:
        return int(self.divergent.sum())


class _Target:
    """Wraps a ``logp_and_grad`` callable; errors and non-finite values map to -inf."""

    def __init__(self, fn):
        self.fn = fn

    def __call__(self, q):
        try:
            with np.errstate(all="ignore"):
                lp, g = self.fn(q)
        except (NumericalError, FloatingPointError, ArithmeticError, ValueError):
            return -np.inf, None
        lp = float(np.sum(lp))
        g = np.asarray(g, dtype=float)
        if not np.isfinite(lp) or not np.all(np.isfinite(g)):
            return -np.inf, None
        return lp, g


def leapfrog(target, q, p, grad, step_size, n_steps, inv_metric):
    """Integrate ``n_steps`` leapfrog steps; returns ``(q, p, logp, grad)``.

    ``target`` maps position to ``(logp, grad)``.  Stops early, returning
    ``logp = -inf``, if the density becomes non-finite.
    """
    q = np.array(q, dtype=float)
    p = np.array(p, dtype=float)
    g = grad
    lp = None
    for _ in range(n_steps):
        p = p + 0.5 * step_size * g
        q = q + step_size * inv_metric * p
        lp, g = target(q)
        if g is None:
            return q, p, -np.inf, None
        p = p + 0.5 * step_size * g
    return q, p, lp, g


def _kinetic(p, inv_metric):
    # an exploding trajectory gives inf here and is flagged divergent
    with np.errstate(over="ignore", invalid="ignore"):
        return 0.5 * float(np.sum(inv_metric * p * p))


class _DualAveraging:
    def __init__(self, step_size, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.target = target
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.restart(step_size)

    def restart(self, step_size):
        self.mu = np.log(10.0 * step_size)
        self.hbar = 0.0
        self.log_eps = np.log(step_size)
        self.log_eps_bar = 0.0
        self.m = 0

    def update(self, accept):
        self.m += 1
        m = self.m
        w = 1.0 / (m + self.t0)
        self.hbar = (1.0 - w) * self.hbar + w * (self.target - accept)
        self.log_eps = self.mu - np.sqrt(m) / self.gamma * self.hbar
        eta = m ** (-self.kappa)
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar
        return float(np.exp(self.log_eps))

    @property
    def final(self):
        return float(np.exp(self.log_eps_bar))


def _windows(warmup: int):
    """Metric-window end points (exclusive) for a given warmup length."""
    if warmup < 20:
        return []
    init = int(0.15 * warmup)
    term = int(0.1 * warmup)
    start = init
    end_all = warmup - term
    ends = []
    size = 25 if end_all - init >= 50 else end_all - init
    while start < end_all:
        end = start + size
        if end_all - end < 2 * size:
            end = end_all
        ends.append(end)
        start = end
        size *= 2
    return [(init if i == 0 else ends[i - 1], e) for i, e in enumerate(ends)]


def _find_step_size(target, q, lp, g, inv_metric, rng, step=0.1):
    p = rng.standard_normal(q.size) / np.sqrt(inv_metric)
    h0 = lp - _kinetic(p, inv_metric)

    def accept_log(eps):
        _, p1, lp1, _ = leapfrog(target, q, p, g, eps, 1, inv_metric)
        if not np.isfinite(lp1):
            return -np.inf
        return lp1 - _kinetic(p1, inv_metric) - h0

    a = accept_log(step)
    direction = 1 if a > np.log(0.5) else -1
    for _ in range(60):
        nxt = step * (2.0 ** direction)
        a = accept_log(nxt)
        if (direction == 1 and not a > np.log(0.5)) or (direction == -1 and a > np.log(0.5)):
            return nxt if direction == -1 else step
        step = nxt
    return step


def chain_seed(seed: int, chain: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(chain)])


def run_chain(logp_and_grad, dim: int, config: SamplerConfig, chain: int = 0, init=None, constrain=None,
              names=None) -> ChainDraws:
    """Run one chain; see the module docstring for the adaptation scheme.

    Parameters
    ----------
    logp_and_grad : callable returning ``(logp, grad)`` on the unconstrained scale.
    dim : parameter dimension.
    chain : chain index, combined with ``config.seed`` for the RNG stream.
    init : optional starting point; otherwise uniform on ``[-r, r]``.
    constrain : optional map from unconstrained to reported values.
    """
    rng = np.random.default_rng(chain_seed(config.seed, chain))
    target = _Target(logp_and_grad)
    names = list(names) if names is not None else [f"x[{k + 1}]" for k in range(dim)]
    inv_metric = np.ones(dim)

    if config.iterations == 0:
        width = len(names) if constrain is not None else dim
        return ChainDraws(np.empty((0, width)), np.empty((0, dim)), np.empty(0), np.empty(0),
                          np.empty(0, dtype=np.int64), np.empty(0, dtype=bool), np.nan, inv_metric, names,
                          0, chain)

    for attempt in range(100):
        q = (np.asarray(init, dtype=float).copy() if init is not None and attempt == 0
             else rng.uniform(-config.init_radius, config.init_radius, size=dim))
        lp, g = target(q)
        if g is not None:
            break
    else:
        raise SamplerError("no finite starting point found in 100 attempts", chain=chain)

    step = _find_step_size(target, q, lp, g, inv_metric, rng)
    da = _DualAveraging(step, config.target_accept)
    windows = _windows(config.warmup)
    win_iter = iter(windows)
    cur_win = next(win_iter, None)
    w_n, w_mean, w_m2 = 0, np.zeros(dim), np.zeros(dim)

    kept = config.kept
    width = len(names) if constrain is not None else dim
    out_q = np.empty((kept, dim))
    out_c = np.empty((kept, width))
    out_lp = np.empty(kept)
    out_acc = np.empty(kept)
    out_nl = np.empty(kept, dtype=np.int64)
    out_div = np.zeros(kept, dtype=bool)
    warm_div = 0

    for it in range(config.iterations):
        warm = it < config.warmup
        n_steps = int(rng.integers(1, config.max_leapfrog + 1))
        p0 = rng.standard_normal(dim) / np.sqrt(inv_metric)
        h0 = lp - _kinetic(p0, inv_metric)
        q1, p1, lp1, g1 = leapfrog(target, q, p0, g, step, n_steps, inv_metric)
        if g1 is None:
            delta = np.inf
        else:
            delta = h0 - (lp1 - _kinetic(p1, inv_metric))
        divergent = not np.isfinite(delta) or delta > DIVERGENCE_THRESHOLD
        accept = 0.0 if divergent else float(np.exp(min(0.0, -delta)))
        if not divergent and rng.uniform() < accept:
            q, lp, g = q1, lp1, g1

        if warm:
            warm_div += divergent
            if warm_div > config.max_divergent_fraction * config.warmup:
                raise SamplerError(
                    f"{warm_div} divergent transitions in {it + 1} warmup iterations",
                    chain=chain, diagnostics={"step_size": step, "warmup_divergences": warm_div},
                )
            step = da.update(accept)
            if cur_win is not None and cur_win[0] <= it < cur_win[1]:
                w_n += 1
                d = q - w_mean
                w_mean += d / w_n
                w_m2 += d * (q - w_mean)
                if it == cur_win[1] - 1:
                    var = w_m2 / max(w_n - 1, 1)
                    inv_metric = (w_n / (w_n + 5.0)) * var + 1e-3 * (5.0 / (w_n + 5.0))
                    w_n, w_mean, w_m2 = 0, np.zeros(dim), np.zeros(dim)
                    step = _find_step_size(target, q, lp, g, inv_metric, rng, step)
                    da.restart(step)
                    cur_win = next(win_iter, None)
            if it == config.warmup - 1:
                step = da.final
        else:
            k = it - config.warmup
            out_q[k] = q
            out_c[k] = constrain(q) if constrain is not None else q
            out_lp[k] = lp
            out_acc[k] = accept
            out_nl[k] = n_steps
            out_div[k] = divergent

    return ChainDraws(out_c, out_q, out_lp, out_acc, out_nl, out_div, float(step), inv_metric, names,
                      warm_div, chain)


def _run_one(args):
    fn, dim, config, chain, init, constrain, names = args
    return run_chain(fn, dim, config, chain, init, constrain, names)


def run_chains(logp_and_grad, dim: int, config: SamplerConfig, inits=None, constrain=None, names=None):
    """Run ``config.chains`` chains; returns ``(chains, Diagnostics)``.

    Chains are independent given their seeds, so results do not depend on
    ``config.workers``.
    """
    inits = inits if inits is not None else [None] * config.chains
    jobs = [(logp_and_grad, dim, config, c, inits[c], constrain, names) for c in range(config.chains)]
    if config.workers > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as ex:
            futures = [ex.submit(_run_one, j) for j in jobs]
            chains = [f.result() for f in futures]
    else:
        chains = [_run_one(j) for j in jobs]
    return chains, diagnose(chains)


# ---------------------------------------------------------------------------
# diagnostics


def split_rhat(x) -> float:
    """Split-chain potential scale reduction for one coordinate.

    ``x`` has shape ``(chains, draws)``.  Returns ``inf`` when the within-chain
    variance is zero, and is floored at 1.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    n = x.shape[1] // 2
    if n < 2:
        return np.nan
    halves = np.concatenate([x[:, :n], x[:, x.shape[1] - n:]], axis=0)
    means = halves.mean(axis=1)
    w = halves.var(axis=1, ddof=1).mean()
    b = n * means.var(ddof=1)
    if not w > 0:
        return np.inf
    var_plus = (n - 1) / n * w + b / n
    return float(max(1.0, np.sqrt(var_plus / w)))


def _autocov(x):
    n = x.size
    m = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x - x.mean(), m)
    ac = np.fft.irfft(f * np.conj(f), m)[:n]
    return ac / n


def ess(x) -> float:
    """Multi-chain effective sample size (Geyer initial positive sequence)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    m, n = x.shape
    if n < 4:
        return np.nan
    acov = np.array([_autocov(c) for c in x])
    chain_var = acov[:, 0] * n / (n - 1.0)
    w = chain_var.mean()
    if not w > 0:
        return np.nan
    var_plus = w * (n - 1.0) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # sum adjacent pairs while positive, enforcing monotone decrease
    total = 0.0
    prev = np.inf
    t = 0
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        pair = min(pair, prev)
        total += pair
        prev = pair
        t += 2
    tau = -1.0 + 2.0 * total
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)


@dataclass
class Diagnostics:
    names: list
    rhat: np.ndarray
    ess: np.ndarray
    divergences: list
    step_sizes: list

    def to_dict(self) -> dict:
        def clean(v):
            v = float(v)
            return v if np.isfinite(v) else (None if np.isnan(v) else ("inf" if v > 0 else "-inf"))

        return {
            "parameters": {
                n: {"rhat": clean(r), "ess": clean(e)} for n, r, e in zip(self.names, self.rhat, self.ess)
            },
            "divergences": [int(d) for d in self.divergences],
            "step_sizes": [float(s) for s in self.step_sizes],
            "max_rhat": clean(np.nanmax(self.rhat)) if self.rhat.size else None,
            "min_ess": clean(np.nanmin(self.ess)) if self.ess.size else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Diagnostics":
        def back(v):
            return np.nan if v is None else float(v)

        names = list(d["parameters"])
        return cls(
            names,
            np.array([back(d["parameters"][n]["rhat"]) for n in names]),
            np.array([back(d["parameters"][n]["ess"]) for n in names]),
            list(d["divergences"]),
            list(d.get("step_sizes", [])),
        )


def diagnose(chains) -> Diagnostics:
    names = chains[0].names
    arr = np.stack([c.draws for c in chains])  # chains x draws x params
    k = arr.shape[2]
    rh = np.array([split_rhat(arr[:, :, j]) for j in range(k)]) if arr.shape[1] else np.full(k, np.nan)
    es = np.array([ess(arr[:, :, j]) for j in range(k)]) if arr.shape[1] else np.full(k, np.nan)
    return Diagnostics(list(names), rh, es, [c.n_divergent for c in chains], [c.step_size for c in chains])
