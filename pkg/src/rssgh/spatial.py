"""Region adjacency graphs and random-effect log-priors (IID, ICAR, BYM2)."""
from __future__ import annotations

from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DomainError, GraphError

LOG_2PI = np.log(2.0 * np.pi)

#: default standard deviation of the soft sum-to-zero penalty on mean(u)
SUM_TO_ZERO_SD = 0.001


class EffectStructure(str, Enum):
    NONE = "None"
    IID = "IID"
    ICAR = "ICAR"
    BYM2 = "BYM2"

    @classmethod
    def parse(cls, tag) -> "EffectStructure":
        if tag is None:
            return cls.NONE
        if isinstance(tag, cls):
            return tag
        key = str(tag).strip().upper()
        for member in cls:
            if member.value.upper() == key:
                return member
        raise DomainError(f"unknown effect structure {tag!r}")

    @property
    def hyper_names(self) -> tuple[str, ...]:
        return {
            EffectStructure.NONE: (),
            EffectStructure.IID: ("sigma",),
            EffectStructure.ICAR: ("tau",),
            EffectStructure.BYM2: ("sigma", "rho"),
        }[self]


class RegionGraph:
    """Undirected, connected region adjacency graph with 0-based node labels.

    Parameters
    ----------
    n_regions : int
    edges : iterable of (k, l) pairs, 0-based. Duplicates and either
        orientation are accepted; self-loops are rejected.
    names : optional region names, used in messages and reports.
    """

    def __init__(self, n_regions: int, edges, names=None):
        r = int(n_regions)
        if r < 1:
            raise GraphError("graph needs at least one region")
        pairs = set()
        for k, l in edges:
            k, l = int(k), int(l)
            if k == l:
                raise GraphError(f"self-loop on region {k + 1}")
            if not (0 <= k < r and 0 <= l < r):
                raise GraphError(f"edge ({k + 1}, {l + 1}) outside 1..{r}")
            pairs.add((min(k, l), max(k, l)))
        self.n_regions = r
        self.edges = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
        self.names = tuple(names) if names is not None else tuple(f"R{i + 1}" for i in range(r))
        if len(self.names) != r:
            raise GraphError("names must have one entry per region")
        self.neighbors = tuple(
            tuple(sorted(set(self.edges[self.edges[:, 0] == k, 1]) | set(self.edges[self.edges[:, 1] == k, 0])))
            for k in range(r)
        )
        comps = self.components()
        if len(comps) > 1:
            desc = "; ".join("{" + ", ".join(self.names[i] for i in c) + "}" for c in comps)
            raise GraphError(f"adjacency graph is disconnected: components {desc}")

    def __repr__(self):
        return f"RegionGraph(n_regions={self.n_regions}, n_edges={len(self.edges)})"

    def __eq__(self, other):
        return (
            isinstance(other, RegionGraph)
            and self.n_regions == other.n_regions
            and np.array_equal(self.edges, other.edges)
        )

    def components(self) -> list[list[int]]:
        seen = np.zeros(self.n_regions, dtype=bool)
        comps = []
        for start in range(self.n_regions):
            if seen[start]:
                continue
            stack, comp = [start], []
            seen[start] = True
            while stack:
                k = stack.pop()
                comp.append(k)
                for l in self.neighbors[k]:
                    if not seen[l]:
                        seen[l] = True
                        stack.append(l)
            comps.append(sorted(comp))
        return comps

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(nb) for nb in self.neighbors], dtype=np.int64)

    @property
    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_regions, self.n_regions))
        a[self.edges[:, 0], self.edges[:, 1]] = 1.0
        a[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return a

    @property
    def laplacian(self) -> np.ndarray:
        """``D - A``."""
        return np.diag(self.degrees.astype(float)) - self.adjacency

    def pairwise_sq(self, u) -> float:
        """Sum of squared differences over unordered edges."""
        u = np.asarray(u, dtype=float)
        d = u[self.edges[:, 0]] - u[self.edges[:, 1]]
        return float(d @ d)

    def laplacian_dot(self, u) -> np.ndarray:
        """``(D - A) u`` without forming the matrix."""
        u = np.asarray(u, dtype=float)
        d = u[self.edges[:, 0]] - u[self.edges[:, 1]]
        out = np.zeros(self.n_regions)
        np.add.at(out, self.edges[:, 0], d)
        np.add.at(out, self.edges[:, 1], -d)
        return out


def load_adjacency(path, n_regions: int | None = None, names=None) -> RegionGraph:
    """Read an edge list with one ``k l`` pair per line (1-based).

    Blank lines and ``#`` comments are ignored.  The region count is the
    largest label seen unless ``n_regions`` is given.
    """
    edges = []
    top = 0
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise GraphError(f"{path}:{lineno}: expected 'k l', got {raw!r}")
        try:
            k, l = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphError(f"{path}:{lineno}: non-integer region label in {raw!r}") from None
        if k < 1 or l < 1:
            raise GraphError(f"{path}:{lineno}: region labels are 1-based")
        if k == l:
            raise GraphError(f"{path}:{lineno}: self-loop on region {k}")
        edges.append((k - 1, l - 1))
        top = max(top, k, l)
    r = top if n_regions is None else int(n_regions)
    return RegionGraph(r, edges, names=names)


ENGLAND_REGIONS = (
    "North East",
    "North West",
    "Yorkshire and the Humber",
    "East Midlands",
    "West Midlands",
    "East of England",
    "London",
    "South East",
    "South West",
)


def england_gor() -> RegionGraph:
    """The nine English Government Office Regions, ordered north to south."""
    ref = resources.files("rssgh").joinpath("data/england_gor.adj")
    with resources.as_file(ref) as p:
        return load_adjacency(p, n_regions=9, names=ENGLAND_REGIONS)


def icar_scaling_factor(graph: RegionGraph) -> float:
    """Geometric mean of the diagonal of the pseudo-inverse of ``D - A``.

    Dividing an ICAR(τ=1) field by the square root of this value gives
    marginal variances whose geometric mean is one.
    """
    if graph.n_regions < 2:
        raise GraphError("scaling factor needs at least two regions")
    vals, vecs = np.linalg.eigh(graph.laplacian)
    tol = 1e-9 * max(1.0, vals[-1])
    zero = vals < tol
    if zero.sum() != 1:
        raise GraphError(f"laplacian has {int(zero.sum())} null directions, expected 1")
    inv = np.where(zero, 0.0, 1.0 / np.where(zero, 1.0, vals))
    diag = (vecs * vecs) @ inv
    return float(np.exp(np.mean(np.log(diag))))


def sum_zero_basis(r: int) -> np.ndarray:
    """Orthonormal ``r x r`` basis whose first column is ``1/sqrt(r)``.

    Sampling an ICAR field as ``u = B w`` puts the stiff sum-to-zero direction
    on its own axis, where a diagonal mass matrix can scale it.
    """
    m = np.eye(r)
    m[:, 0] = 1.0
    q, _ = np.linalg.qr(m)
    if q[0, 0] < 0:
        q[:, 0] = -q[:, 0]
    return q


def _check_positive(name, value):
    if not (np.isfinite(value) and value > 0):
        raise DomainError(f"{name} must be positive and finite, got {value}")


def iid_log_prior(u, sigma_u: float, grad: bool = False):
    """Sum of independent ``N(0, sigma_u^2)`` log-densities.

    With ``grad=True`` also returns ``d/du`` and ``d/d log sigma_u``.
    """
    _check_positive("sigma_u", sigma_u)
    u = np.asarray(u, dtype=float)
    r = u.size
    ss = float(u @ u)
    val = -0.5 * r * LOG_2PI - r * np.log(sigma_u) - 0.5 * ss / sigma_u**2
    if not grad:
        return val
    return val, -u / sigma_u**2, -r + ss / sigma_u**2


def sum_zero_log_penalty(u, sd: float = SUM_TO_ZERO_SD, grad: bool = False):
    """``log N(sum(u) | 0, (sd * r)^2)``, i.e. ``mean(u) ~ N(0, sd^2)``."""
    u = np.asarray(u, dtype=float)
    r = u.size
    s = float(u.sum())
    scale = sd * r
    val = -0.5 * LOG_2PI - np.log(scale) - 0.5 * (s / scale) ** 2
    if not grad:
        return val
    return val, np.full(r, -s / scale**2)


def icar_log_prior(u, graph: RegionGraph, tau_u: float, sum_zero_sd: float | None = SUM_TO_ZERO_SD,
                   grad: bool = False):
    """Pairwise-difference ICAR log-density with a soft sum-to-zero penalty.

    ``((r-1)/2) log tau - tau/2 * sum_{k~l} (u_k - u_l)^2`` plus
    ``log N(sum u | 0, (sd r)^2)``; each unordered edge is counted once.
    ``sum_zero_sd=None`` drops the penalty.

    With ``grad=True`` returns ``(value, d/du, d/d log tau)``.
    """
    _check_positive("tau_u", tau_u)
    u = np.asarray(u, dtype=float)
    if u.shape != (graph.n_regions,):
        raise DomainError(f"effect vector has shape {u.shape}, graph has {graph.n_regions} regions")
    r = graph.n_regions
    pw = graph.pairwise_sq(u)
    val = 0.5 * (r - 1) * np.log(tau_u) - 0.5 * tau_u * pw
    g_u = None
    if grad:
        g_u = -tau_u * graph.laplacian_dot(u)
    if sum_zero_sd is not None:
        if grad:
            pv, pg = sum_zero_log_penalty(u, sum_zero_sd, grad=True)
            g_u = g_u + pg
        else:
            pv = sum_zero_log_penalty(u, sum_zero_sd)
        val += pv
    if not grad:
        return float(val)
    return float(val), g_u, 0.5 * (r - 1) - 0.5 * tau_u * pw


def bym2_combine(v_star, s_star, sigma: float, rho: float) -> np.ndarray:
    """``u = sigma * (sqrt(1 - rho) v* + sqrt(rho) s*)``."""
    v_star = np.asarray(v_star, dtype=float)
    s_star = np.asarray(s_star, dtype=float)
    if v_star.shape != s_star.shape:
        raise DomainError("v* and s* must have equal length")
    if not (0.0 <= rho <= 1.0):
        raise DomainError(f"rho must lie in [0, 1], got {rho}")
    _check_positive("sigma", sigma)
    return sigma * (np.sqrt(1.0 - rho) * v_star + np.sqrt(rho) * s_star)


def bym2_log_prior(v_star, s_star, sigma: float, rho: float, graph: RegionGraph,
                   scaling: float | None = None, sum_zero_sd: float | None = SUM_TO_ZERO_SD,
                   grad: bool = False):
    """``log N(v* | 0, I)`` plus the scaled-ICAR log-density of ``s*``.

    The scaled field has precision ``c (D - A)`` with ``c`` the ICAR scaling
    factor.  Hyperpriors on ``sigma`` and ``rho`` are added by the model.
    With ``grad=True`` returns ``(value, d/dv*, d/ds*)``.
    """
    if not (0.0 <= rho <= 1.0):
        raise DomainError(f"rho must lie in [0, 1], got {rho}")
    _check_positive("sigma", sigma)
    v_star = np.asarray(v_star, dtype=float)
    c = icar_scaling_factor(graph) if scaling is None else scaling
    res_v = iid_log_prior(v_star, 1.0, grad=grad)
    res_s = icar_log_prior(s_star, graph, c, sum_zero_sd=sum_zero_sd, grad=grad)
    if not grad:
        return res_v + res_s
    return res_v[0] + res_s[0], res_v[1], res_s[1]


def icar_dense_logpdf(u, graph: RegionGraph, tau_u: float) -> float:
    """Degenerate-normal log-density via the dense pseudo-inverse (reference use)."""
    q = tau_u * graph.laplacian
    vals = np.linalg.eigvalsh(q)
    pos = vals[vals > 1e-9 * vals.max()]
    u = np.asarray(u, dtype=float)
    return float(-0.5 * pos.size * LOG_2PI + 0.5 * np.sum(np.log(pos)) - 0.5 * u @ q @ u)
