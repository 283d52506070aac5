"""Spatial general hazard model for excess (relative-survival) mortality.

The excess hazard of patient ``j`` in region ``i`` is

    h_E(t) = h_0(t exp(a) | theta) exp(b),
    a = x_tilde' alpha + u_tilde_i,     (time level)
    b = s' gamma + x' beta + u_i,       (hazard level)

with cumulative excess hazard ``H_0(t exp(a)) exp(b - a)``.  The likelihood
combines it with a known population hazard ``h_P`` from a life table:

    sum_ij  delta_ij log(h_P + h_E) - H_E.

All parameters live on an unconstrained vector (log for positive scalars,
logit for mixing proportions).  ICAR and scaled-ICAR effect vectors are stored
in a rotated orthonormal basis whose first axis is the constant direction, so
that the tight sum-to-zero penalty acts on a single coordinate.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from enum import Enum

import numpy as np
from scipy.special import expit, gammaln, logit

from .baseline import BaselineFamily, BaselineParams, baseline_terms
from .errors import DomainError, ModelSpecError, NumericalError
from .lifetable import LifeTable
from .spatial import (
    LOG_2PI,
    EffectStructure,
    RegionGraph,
    icar_log_prior,
    icar_scaling_factor,
    iid_log_prior,
    sum_zero_basis,
)
from .splines import fit_spline_basis


class Submodel(str, Enum):
    SGH = "RS-SGH"
    SGH_I = "RS-SGH-I"
    SGH_II = "RS-SGH-II"
    SPH = "RS-SPH"
    SAFT = "RS-SAFT"
    GH = "RS-GH"
    PH = "RS-PH"
    AFT = "RS-AFT"
    AH = "RS-AH"

    @classmethod
    def parse(cls, tag) -> "Submodel":
        if isinstance(tag, cls):
            return tag
        key = str(tag).strip().upper().replace("_", "-")
        if not key.startswith("RS-"):
            key = "RS-" + key
        for m in cls:
            if m.value == key:
                return m
        raise ModelSpecError(f"unknown sub-model {tag!r}")

    @property
    def alpha_mode(self) -> str:
        """'free', 'zero' or 'tied' (alpha = beta)."""
        if self in (Submodel.SPH, Submodel.PH):
            return "zero"
        if self in (Submodel.SAFT, Submodel.AFT):
            return "tied"
        return "free"

    @property
    def beta_free(self) -> bool:
        return self is not Submodel.AH

    @property
    def spatial(self) -> bool:
        return self in (Submodel.SGH, Submodel.SGH_I, Submodel.SGH_II, Submodel.SPH, Submodel.SAFT)

    @property
    def time_effect_mode(self) -> str:
        """'free', 'zero' or 'shared' (u_tilde = u)."""
        if self in (Submodel.SGH_II, Submodel.SAFT):
            return "shared"
        if self is Submodel.SGH:
            return "free"
        return "zero"


@dataclass(frozen=True)
class ModelSpec:
    """Model structure: baseline family, sub-model and covariate declarations.

    ``time_covariates=None`` means "same as ``hazard_covariates``".
    ``spline_covariates`` is a sequence of ``(column, interior_knots)``.
    """

    family: BaselineFamily
    submodel: Submodel = Submodel.SGH
    time_structure: EffectStructure = EffectStructure.NONE
    hazard_structure: EffectStructure = EffectStructure.NONE
    hazard_covariates: tuple = ()
    time_covariates: tuple | None = None
    spline_covariates: tuple = ()
    overall_survival: bool = False

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("family", BaselineFamily.parse(self.family))
        sub = Submodel.parse(self.submodel)
        set_("submodel", sub)
        ts = EffectStructure.parse(self.time_structure)
        hs = EffectStructure.parse(self.hazard_structure)
        set_("time_structure", ts)
        set_("hazard_structure", hs)
        hz = tuple(str(c) for c in self.hazard_covariates)
        if len(set(hz)) != len(hz):
            raise ModelSpecError("duplicate hazard covariates")
        set_("hazard_covariates", hz)
        tc = hz if self.time_covariates is None else tuple(str(c) for c in self.time_covariates)
        if sub.alpha_mode == "zero":
            if self.time_covariates:
                raise ModelSpecError(f"{sub.value} has no time-level covariates (alpha = 0)")
            tc = ()
        elif sub.alpha_mode == "tied" and tc != hz:
            raise ModelSpecError(f"{sub.value} ties alpha = beta, so time covariates must equal hazard covariates")
        missing = [c for c in tc if c not in hz]
        if missing:
            raise ModelSpecError(f"time covariates {missing} are not among the hazard covariates")
        set_("time_covariates", tc)
        set_("spline_covariates", tuple((str(c), int(k)) for c, k in self.spline_covariates))

        if not sub.spatial:
            if ts is not EffectStructure.NONE or hs is not EffectStructure.NONE:
                raise ModelSpecError(f"{sub.value} has no random effects; both structures must be None")
        mode = sub.time_effect_mode
        if mode == "zero" and ts is not EffectStructure.NONE:
            raise ModelSpecError(f"{sub.value} fixes u_tilde = 0; time structure must be None")
        if mode == "shared" and ts is not hs:
            raise ModelSpecError(f"{sub.value} shares u_tilde = u; both levels need the same structure")

    @classmethod
    def with_structure(cls, family, submodel, structure=None, **kwargs) -> "ModelSpec":
        """Place a single effect structure on every level the sub-model allows."""
        sub = Submodel.parse(submodel)
        st = EffectStructure.parse(structure)
        if not sub.spatial and st is not EffectStructure.NONE:
            raise ModelSpecError(f"{sub.value} does not admit random effects")
        ts = st if sub.time_effect_mode in ("free", "shared") else EffectStructure.NONE
        return cls(family, sub, ts, st, **kwargs)

    @property
    def has_time_effect(self) -> bool:
        return self.time_structure is not EffectStructure.NONE

    @property
    def has_hazard_effect(self) -> bool:
        return self.hazard_structure is not EffectStructure.NONE

    @property
    def label(self) -> str:
        if self.submodel.spatial:
            return f"{self.submodel.value} {self.family.value} {self.hazard_structure.value}"
        return f"{self.submodel.value} {self.family.value}"


@dataclass
class HyperConfig:
    """Prior hyperparameters (all overridable)."""

    sigma2_alpha: float = 100.0
    sigma2_beta: float = 100.0
    sigma2_mu: float = 100.0
    tau_sigma: float = 2.5
    tau_eta: float = 2.5
    tau_nu: float = 2.5
    tau_sigma_gamma: float = 2.5
    theta_tau: float = 0.01
    kappa_shape: float = 0.65
    kappa_rate: float = 1.83
    bym2_sigma_scale: float = 1.0
    bym2_rho_a: float = 0.5
    bym2_rho_b: float = 0.5
    sum_zero_sd: float = 0.001

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v > 0):
                raise ModelSpecError(f"hyperparameter {f.name} must be positive, got {v}")


@dataclass
class PatientRecord:
    """One patient: follow-up, status and covariates by column name.

    ``region`` is 1-based, as in patient files.
    """

    time: float
    status: int
    age: float
    region: int
    covariates: dict = field(default_factory=dict)
    year: float | None = None
    strata: dict = field(default_factory=dict)


class SurvivalData:
    """Vectorized patient data prepared for a particular ``ModelSpec``.

    Parameters
    ----------
    time, status, region : arrays; ``region`` is 0-based.
    X : hazard-level design (n x p) with column names ``x_names``.
    xt_index : indices of the time-level columns within ``X``.
    S : spline block (n x q), ``spline_groups`` lists ``(name, n_cols)``.
    log_hp : log population hazard at ``age + t`` (``-inf`` for zero rates).
    """

    def __init__(self, time, status, region, X=None, x_names=(), xt_index=(), S=None, spline_groups=(),
                 log_hp=None, n_regions=None, age=None, year=None, strata=None, spline_bases=None,
                 columns=None):
        self.time = np.asarray(time, dtype=float).ravel()
        n = self.time.size
        self.status = np.asarray(status).astype(np.int64).ravel()
        self.region = np.asarray(region, dtype=np.int64).ravel()
        if self.status.size != n or self.region.size != n:
            raise DomainError("time, status and region must have equal length")
        if np.any(~np.isfinite(self.time)) or np.any(self.time < 0):
            raise DomainError("times must be finite and >= 0")
        if np.any((self.status != 0) & (self.status != 1)):
            raise DomainError("status must be 0 or 1")
        if np.any((self.time == 0) & (self.status == 1)):
            raise DomainError("an event at t = 0 has no excess-hazard likelihood")
        self.n_regions = int(n_regions) if n_regions is not None else int(self.region.max(initial=-1) + 1)
        if np.any(self.region < 0) or np.any(self.region >= max(self.n_regions, 1)):
            raise DomainError("region index out of range")
        if X is None:
            self.X = np.zeros((n, 0))
        else:
            X = np.asarray(X, dtype=float)
            self.X = X.reshape(n, X.shape[-1] if X.ndim > 1 else (1 if n else 0))
        self.x_names = tuple(x_names) if x_names else tuple(f"x{k + 1}" for k in range(self.X.shape[1]))
        self.xt_index = np.asarray(xt_index, dtype=np.int64)
        self.S = np.zeros((n, 0)) if S is None else np.asarray(S, dtype=float).reshape(n, np.shape(S)[-1])
        self.spline_groups = tuple((str(a), int(b)) for a, b in spline_groups)
        if sum(b for _, b in self.spline_groups) != self.S.shape[1]:
            raise DomainError("spline groups do not match the spline block width")
        self.log_hp = np.full(n, -np.inf) if log_hp is None else np.asarray(log_hp, dtype=float).ravel()
        self.age = None if age is None else np.asarray(age, dtype=float)
        self.year = None if year is None else np.asarray(year, dtype=float)
        self.strata = None if strata is None else np.asarray(strata, dtype=np.int64)
        self.spline_bases = dict(spline_bases or {})
        self.columns = columns
        self.Xt = self.X[:, self.xt_index] if self.xt_index.size else np.zeros((n, 0))

    @property
    def n(self) -> int:
        return self.time.size

    @property
    def n_obs(self) -> int:
        return int(self.status.sum())

    def subset(self, idx) -> "SurvivalData":
        idx = np.asarray(idx)
        pick = lambda v: None if v is None else v[idx]  # noqa: E731
        return SurvivalData(
            self.time[idx], self.status[idx], self.region[idx], self.X[idx], self.x_names, self.xt_index,
            self.S[idx], self.spline_groups, self.log_hp[idx], self.n_regions, pick(self.age),
            pick(self.year), pick(self.strata), self.spline_bases,
            None if self.columns is None else {k: np.asarray(v)[idx] for k, v in self.columns.items()},
        )

    @classmethod
    def from_columns(cls, columns: dict, spec: ModelSpec, table: LifeTable | None = None, n_regions=None,
                     region_base: int = 1, standardize=()) -> "SurvivalData":
        """Build from named columns (e.g. a loaded CSV).

        Required columns are ``time``, ``status``, ``age`` and ``region``
        (``region_base``-based).  ``year`` defaults to the first life-table
        year.  Life-table key columns are looked up in ``columns``.
        Columns named in ``standardize`` are centered and scaled; the
        (mean, sd) pairs are kept in ``scaling``.
        """
        for need in ("time", "status", "age", "region"):
            if need not in columns:
                raise DomainError(f"missing column {need!r}")
        cols = {k: np.asarray(v) for k, v in columns.items()}
        n = len(cols["time"])
        scaling = {}
        for name in standardize:
            v = cols[name].astype(float)
            m, s = float(v.mean()), float(v.std())
            if s == 0:
                raise DomainError(f"cannot standardize constant column {name!r}")
            cols[name] = (v - m) / s
            scaling[name] = (m, s)
        miss = [c for c in spec.hazard_covariates if c not in cols]
        miss += [c for c, _ in spec.spline_covariates if c not in cols]
        if miss:
            raise DomainError(f"missing declared covariate columns {miss}")
        X = np.column_stack([cols[c].astype(float) for c in spec.hazard_covariates]) if spec.hazard_covariates \
            else np.zeros((n, 0))
        xt_index = [spec.hazard_covariates.index(c) for c in spec.time_covariates]
        blocks, groups, bases = [], [], {}
        for name, knots in spec.spline_covariates:
            basis = fit_spline_basis(cols[name].astype(float), knots)
            bases[name] = basis
            blocks.append(basis(cols[name].astype(float)))
            groups.append((name, basis.n_columns))
        S = np.hstack(blocks) if blocks else np.zeros((n, 0))
        time = cols["time"].astype(float)
        age = cols["age"].astype(float)
        region = cols["region"].astype(np.int64) - region_base
        year = None
        strata = None
        log_hp = np.full(n, -np.inf)
        if table is not None:
            year = cols["year"].astype(float) if "year" in cols else np.full(n, float(table.years[0]))
            missing = [c for c in table.key_columns if c not in cols]
            if missing:
                raise DomainError(f"missing life-table key columns {missing}")
            strata = table.stratum_index({c: cols[c] for c in table.key_columns})
            log_hp = table.log_rate(strata, age + time, year + time)
        out = cls(time, cols["status"], region, X, spec.hazard_covariates, xt_index, S, groups, log_hp,
                  n_regions, age, year, strata, bases, cols)
        out.scaling = scaling
        return out


def g_prior_factor(n: int, n_obs: int, q: int) -> float:
    """Censoring-adjusted g: ``(n - 0.5 (n - n_obs)) / q``."""
    if q <= 0:
        raise DomainError("g-prior needs at least one spline coefficient")
    return (n - 0.5 * (n - n_obs)) / q


# ---------------------------------------------------------------------------
# parameter state


@dataclass
class ParamState:
    """Natural-scale parameters with tied values expanded.

    ``alpha`` has one entry per time-level covariate (zeros when alpha = 0,
    a copy of the matching ``beta`` entries when tied).  ``u_tilde`` and
    ``u`` are length-r vectors (zeros when absent).
    """

    theta: BaselineParams
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    sigma2_gamma: np.ndarray
    u_tilde: np.ndarray
    u: np.ndarray
    hyper: dict = field(default_factory=dict)
    latent: dict = field(default_factory=dict)


_HALF_CAUCHY_NORM = np.log(2.0 / np.pi)


def _half_cauchy_log_jac(x, scale):
    # HalfCauchy(0, scale) density of x plus log|dx/dlog x|, and d/dlog x
    lp = _HALF_CAUCHY_NORM - np.log(scale) - np.log1p((x / scale) ** 2) + np.log(x)
    g = 1.0 - 2.0 * x * x / (scale * scale + x * x)
    return lp, g


class _Slot:
    """One random-effect vector (time level, hazard level, or shared)."""

    def __init__(self, name, structure, r, offset):
        self.name = name
        self.structure = structure
        self.r = r
        self.offset = offset
        if structure is EffectStructure.IID:
            self.size = r + 1
        elif structure is EffectStructure.ICAR:
            self.size = r + 1
        else:
            self.size = 2 * r + 2

    def names(self):
        r = self.r
        if self.structure is EffectStructure.IID:
            return [f"{self.name}[{k + 1}]" for k in range(r)] + [f"log_sigma_{self.name}"]
        if self.structure is EffectStructure.ICAR:
            return [f"w_{self.name}[{k + 1}]" for k in range(r)] + [f"log_tau_{self.name}"]
        return ([f"vstar_{self.name}[{k + 1}]" for k in range(r)] + [f"w_{self.name}[{k + 1}]" for k in range(r)]
                + [f"log_sigma_{self.name}", f"logit_rho_{self.name}"])

    def constrained_names(self):
        r = self.r
        vec = [f"{self.name}[{k + 1}]" for k in range(r)]
        if self.structure is EffectStructure.IID:
            return vec + [f"sigma_{self.name}"]
        if self.structure is EffectStructure.ICAR:
            return vec + [f"tau_{self.name}"]
        return (vec + [f"vstar_{self.name}[{k + 1}]" for k in range(r)]
                + [f"sstar_{self.name}[{k + 1}]" for k in range(r)] + [f"sigma_{self.name}", f"rho_{self.name}"])


class RSSGHModel:
    """Log-posterior and gradient on the unconstrained scale.

    Parameters
    ----------
    spec : ModelSpec
    data : SurvivalData
    graph : RegionGraph, required when the spec has random effects.
    hyper : HyperConfig, defaults if omitted.
    """

    def __init__(self, spec: ModelSpec, data: SurvivalData, graph: RegionGraph | None = None,
                 hyper: HyperConfig | None = None):
        self.spec = spec
        self.data = data
        self.graph = graph
        self.hyper = hyper or HyperConfig()
        self.family = spec.family
        self.n_theta = len(self.family.param_names)
        p = data.X.shape[1]
        if tuple(data.x_names) != tuple(spec.hazard_covariates):
            raise ModelSpecError(
                f"data columns {data.x_names} do not match declared covariates {spec.hazard_covariates}"
            )
        self.p = p
        self.pt = data.xt_index.size
        self.q = data.S.shape[1]
        needs_graph = spec.has_time_effect or spec.has_hazard_effect
        self.r = graph.n_regions if graph is not None else data.n_regions
        if needs_graph:
            if graph is None:
                raise ModelSpecError("random-effect models need a region graph")
            if data.n_regions > graph.n_regions:
                raise ModelSpecError("data reference more regions than the graph has")
        self._region_count = max(self.r, 1)

        names = list(self.family.param_names)
        names = [n if n == "mu" else f"log_{n}" for n in names]
        blocks = {"theta": slice(0, self.n_theta)}
        pos = self.n_theta
        self.alpha_mode = spec.submodel.alpha_mode
        if self.alpha_mode == "free" and self.pt:
            blocks["alpha"] = slice(pos, pos + self.pt)
            names += [f"alpha[{data.x_names[k]}]" for k in data.xt_index]
            pos += self.pt
        if spec.submodel.beta_free and p:
            blocks["beta"] = slice(pos, pos + p)
            names += [f"beta[{c}]" for c in data.x_names]
            pos += p
        elif self.alpha_mode == "tied":
            raise ModelSpecError("tied alpha requires free beta")
        if self.q:
            blocks["gamma"] = slice(pos, pos + self.q)
            for gname, k in data.spline_groups:
                names += [f"gamma[{gname}_{j + 1}]" for j in range(k)]
            pos += self.q
            blocks["log_sigma2_gamma"] = slice(pos, pos + len(data.spline_groups))
            names += [f"log_sigma2_gamma[{gname}]" for gname, _ in data.spline_groups]
            pos += len(data.spline_groups)
        self.slots = {}
        mode = spec.submodel.time_effect_mode
        if spec.has_hazard_effect and mode == "shared":
            self.slots["shared"] = _Slot("u", spec.hazard_structure, self.r, pos)
        else:
            if spec.has_time_effect:
                self.slots["time"] = _Slot("ut", spec.time_structure, self.r, pos)
            if spec.has_hazard_effect:
                self.slots["hazard"] = _Slot("u", spec.hazard_structure, self.r, pos)
        for slot in self.slots.values():
            slot.offset = pos
            names += slot.names()
            pos += slot.size
        self.blocks = blocks
        self.dim = pos
        self.names = names

        self._basis = sum_zero_basis(self.r) if needs_graph else None
        self._scaling = None
        if any(s.structure is EffectStructure.BYM2 for s in self.slots.values()):
            self._scaling = icar_scaling_factor(graph)

        # g-prior precomputation
        self._gram = []
        if self.q:
            self._g = g_prior_factor(data.n, data.n_obs, self.q)
            start = 0
            for gname, k in data.spline_groups:
                sk = data.S[:, start:start + k]
                gram = sk.T @ sk
                sign, logdet = np.linalg.slogdet(gram)
                if sign <= 0 or np.linalg.matrix_rank(gram) < k:
                    raise ModelSpecError(f"spline block {gname!r} has a singular cross-product matrix")
                self._gram.append((slice(start, start + k), gram, logdet))
                start += k

        # data-dependent constants
        d = data
        self._pos = d.time > 0
        self._log_t = np.where(self._pos, np.log(np.where(self._pos, d.time, 1.0)), 0.0)
        self._delta = d.status.astype(float)
        self._log_hp = d.log_hp if not spec.overall_survival else np.full(d.n, -np.inf)
        self._all_pos = bool(self._pos.all())
        self._event = self._delta > 0
        self._lap = graph.laplacian if needs_graph else None

    # -- packing ---------------------------------------------------------------

    @property
    def constrained_names(self) -> list[str]:
        names = list(self.family.param_names)
        for key in ("alpha", "beta", "gamma"):
            if key in self.blocks:
                names += self.names[self.blocks[key]]
        if "log_sigma2_gamma" in self.blocks:
            names += [f"sigma2_gamma[{g}]" for g, _ in self.data.spline_groups]
        for slot in self.slots.values():
            names += slot.constrained_names()
        return names

    def _effect(self, slot: _Slot, z):
        """Return (u, hyper dict, latent dict) for a slot."""
        r = slot.r
        seg = z[slot.offset:slot.offset + slot.size]
        if slot.structure is EffectStructure.IID:
            return seg[:r].copy(), {"sigma": float(np.exp(seg[r]))}, {}
        if slot.structure is EffectStructure.ICAR:
            return self._basis @ seg[:r], {"tau": float(np.exp(seg[r]))}, {}
        v = seg[:r]
        s = self._basis @ seg[r:2 * r]
        sigma = float(np.exp(seg[2 * r]))
        rho = float(expit(seg[2 * r + 1]))
        u = sigma * (np.sqrt(1.0 - rho) * v + np.sqrt(rho) * s)
        return u, {"sigma": sigma, "rho": rho}, {"vstar": v.copy(), "sstar": s}

    def unpack(self, z) -> ParamState:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.dim,):
            raise DomainError(f"parameter vector has shape {z.shape}, expected ({self.dim},)")
        th = z[self.blocks["theta"]]
        theta = BaselineParams.from_unconstrained(self.family, th)
        beta = z[self.blocks["beta"]].copy() if "beta" in self.blocks else np.zeros(self.p)
        if self.alpha_mode == "free":
            alpha = z[self.blocks["alpha"]].copy() if "alpha" in self.blocks else np.zeros(self.pt)
        elif self.alpha_mode == "tied":
            alpha = beta[self.data.xt_index].copy()
        else:
            alpha = np.zeros(self.pt)
        gamma = z[self.blocks["gamma"]].copy() if "gamma" in self.blocks else np.zeros(0)
        s2g = np.exp(z[self.blocks["log_sigma2_gamma"]]) if "log_sigma2_gamma" in self.blocks else np.zeros(0)
        ut = np.zeros(self.r)
        u = np.zeros(self.r)
        hyper, latent = {}, {}
        for key, slot in self.slots.items():
            vec, hy, lat = self._effect(slot, z)
            hyper[slot.name] = hy
            if lat:
                latent[slot.name] = lat
            if key in ("time", "shared"):
                ut = vec
            if key in ("hazard", "shared"):
                u = vec
        return ParamState(theta, alpha, beta, gamma, s2g, ut, u, hyper, latent)

    def constrained(self, z) -> np.ndarray:
        """Natural-scale values in the order of ``constrained_names``."""
        st = self.unpack(z)
        out = list(st.theta.values)
        if "alpha" in self.blocks:
            out += list(st.alpha)
        if "beta" in self.blocks:
            out += list(st.beta)
        out += list(st.gamma) + list(st.sigma2_gamma)
        for key, slot in self.slots.items():
            vec = st.u_tilde if key == "time" else st.u
            hy = st.hyper[slot.name]
            out += list(vec)
            if slot.structure is EffectStructure.IID:
                out.append(hy["sigma"])
            elif slot.structure is EffectStructure.ICAR:
                out.append(hy["tau"])
            else:
                lat = st.latent[slot.name]
                out += list(lat["vstar"]) + list(lat["sstar"]) + [hy["sigma"], hy["rho"]]
        return np.asarray(out, dtype=float)

    def from_constrained(self, values) -> np.ndarray:
        """Inverse of ``constrained`` (derived BYM2 effects are ignored)."""
        values = np.asarray(values, dtype=float)
        names = self.constrained_names
        if values.shape != (len(names),):
            raise DomainError(f"expected {len(names)} constrained values, got {values.shape}")
        val = dict(zip(names, values))
        z = np.empty(self.dim)
        th = [val[n] for n in self.family.param_names]
        z[self.blocks["theta"]] = BaselineParams(self.family, th).unconstrained()
        for key in ("alpha", "beta", "gamma"):
            if key in self.blocks:
                z[self.blocks[key]] = [val[n] for n in self.names[self.blocks[key]]]
        if "log_sigma2_gamma" in self.blocks:
            z[self.blocks["log_sigma2_gamma"]] = np.log([val[f"sigma2_gamma[{g}]"] for g, _ in self.data.spline_groups])
        for slot in self.slots.values():
            r, o, nm = slot.r, slot.offset, slot.name
            if slot.structure is EffectStructure.IID:
                z[o:o + r] = [val[f"{nm}[{k + 1}]"] for k in range(r)]
                z[o + r] = np.log(val[f"sigma_{nm}"])
            elif slot.structure is EffectStructure.ICAR:
                u = np.array([val[f"{nm}[{k + 1}]"] for k in range(r)])
                z[o:o + r] = self._basis.T @ u
                z[o + r] = np.log(val[f"tau_{nm}"])
            else:
                z[o:o + r] = [val[f"vstar_{nm}[{k + 1}]"] for k in range(r)]
                s = np.array([val[f"sstar_{nm}[{k + 1}]"] for k in range(r)])
                z[o + r:o + 2 * r] = self._basis.T @ s
                z[o + 2 * r] = np.log(val[f"sigma_{nm}"])
                z[o + 2 * r + 1] = logit(val[f"rho_{nm}"])
        return z

    def pack(self, state: ParamState) -> np.ndarray:
        """Unconstrained vector for a ``ParamState`` (tied copies must agree)."""
        z = np.empty(self.dim)
        z[self.blocks["theta"]] = state.theta.unconstrained()
        if "alpha" in self.blocks:
            z[self.blocks["alpha"]] = state.alpha
        if "beta" in self.blocks:
            z[self.blocks["beta"]] = state.beta
        if self.alpha_mode == "tied" and not np.allclose(state.alpha, state.beta[self.data.xt_index]):
            raise ModelSpecError("tied sub-model needs alpha equal to beta")
        if "gamma" in self.blocks:
            z[self.blocks["gamma"]] = state.gamma
            z[self.blocks["log_sigma2_gamma"]] = np.log(state.sigma2_gamma)
        for key, slot in self.slots.items():
            r, o = slot.r, slot.offset
            vec = state.u_tilde if key == "time" else state.u
            hy = state.hyper[slot.name]
            if slot.structure is EffectStructure.IID:
                z[o:o + r] = vec
                z[o + r] = np.log(hy["sigma"])
            elif slot.structure is EffectStructure.ICAR:
                z[o:o + r] = self._basis.T @ vec
                z[o + r] = np.log(hy["tau"])
            else:
                lat = state.latent[slot.name]
                z[o:o + r] = lat["vstar"]
                z[o + r:o + 2 * r] = self._basis.T @ lat["sstar"]
                z[o + 2 * r] = np.log(hy["sigma"])
                z[o + 2 * r + 1] = logit(hy["rho"])
        return z

    # -- likelihood ------------------------------------------------------------

    def _predictors(self, st: ParamState, data: SurvivalData):
        a = data.Xt @ st.alpha if self.pt else np.zeros(data.n)
        b = (data.X @ st.beta if self.p else np.zeros(data.n)) + (data.S @ st.gamma if self.q else 0.0)
        if self.spec.has_time_effect:
            a = a + st.u_tilde[data.region]
        if self.spec.has_hazard_effect:
            b = b + st.u[data.region]
        return a, b

    def _loglik_terms(self, st: ParamState, grad: bool):
        d = self.data
        a, b = self._predictors(st, d)
        pos = self._pos
        n = d.n
        log_y = self._log_t + a
        log_h0 = np.zeros(n)
        cum_h0 = np.zeros(n)
        terms = None
        if pos.all():
            terms = baseline_terms(self.family, st.theta.values, np.exp(log_y), grad=grad)
            log_h0, cum_h0 = terms.log_h, terms.cum_h
        elif pos.any():
            terms = baseline_terms(self.family, st.theta.values, np.exp(log_y[pos]), grad=grad)
            log_h0[pos] = terms.log_h
            cum_h0[pos] = terms.cum_h
        log_he = log_h0 + b
        # overflow surfaces as a non-finite term caught by _check
        with np.errstate(over="ignore", invalid="ignore"):
            scale = np.exp(b - a)
            cum_he = cum_h0 * scale if self._all_pos else np.where(pos, cum_h0 * scale, 0.0)
            log_tot = np.logaddexp(self._log_hp, log_he)
        ll = np.where(self._event, log_tot, 0.0) - cum_he
        return ll, a, b, log_he, log_tot, cum_he, scale, log_y, terms

    def _check(self, ll):
        bad = ~np.isfinite(ll)
        if bad.any():
            i = int(np.argmax(bad))
            raise NumericalError(f"non-finite log-likelihood contribution {ll[i]}", index=i)

    def pointwise_loglik(self, z) -> np.ndarray:
        st = self.unpack(z)
        ll = self._loglik_terms(st, grad=False)[0]
        self._check(ll)
        return ll

    def log_likelihood(self, z) -> float:
        return float(np.sum(self.pointwise_loglik(z)))

    def _loglik_grad(self, z, st: ParamState):
        ll, a, b, log_he, log_tot, cum_he, scale, log_y, terms = self._loglik_terms(st, grad=True)
        self._check(ll)
        d = self.data
        pos = self._pos
        delta = self._delta
        w = np.where(self._event, np.exp(log_he - log_tot), 0.0)
        # y h0(y) exp(b - a) = t h_E(t)
        if self._all_pos:
            dlogh_dlogy = terms.dlogh_dlogy
            t_he = np.exp(log_y + log_he - a)
        else:
            dlogh_dlogy = np.zeros(d.n)
            if terms is not None:
                dlogh_dlogy[pos] = terms.dlogh_dlogy
            t_he = np.where(pos, np.exp(np.where(pos, log_y + log_he - a, 0.0)), 0.0)
        g_a = w * dlogh_dlogy - (t_he - cum_he)
        g_b = w - cum_he
        g_theta = np.zeros(self.n_theta)
        if terms is not None:
            wp = w[pos]
            sp = scale[pos]
            g_theta = terms.dlogh_dtheta @ wp - terms.dcumh_dtheta @ sp
        return ll, g_a, g_b, g_theta

    def _chain_grad(self, g_a, g_b, g_theta, st: ParamState, z):
        d = self.data
        grad = np.zeros(self.dim)
        grad[self.blocks["theta"]] = g_theta
        ga_x = d.Xt.T @ g_a if self.pt else np.zeros(0)
        if "alpha" in self.blocks:
            grad[self.blocks["alpha"]] = ga_x
        if "beta" in self.blocks:
            gb = d.X.T @ g_b
            if self.alpha_mode == "tied":
                np.add.at(gb, d.xt_index, ga_x)
            grad[self.blocks["beta"]] = gb
        if "gamma" in self.blocks:
            grad[self.blocks["gamma"]] = d.S.T @ g_b
        r = self._region_count
        gu_t = np.bincount(d.region, weights=g_a, minlength=r)[:self.r] if self.spec.has_time_effect else None
        gu_h = np.bincount(d.region, weights=g_b, minlength=r)[:self.r] if self.spec.has_hazard_effect else None
        for key, slot in self.slots.items():
            if key == "time":
                gu = gu_t
            elif key == "hazard":
                gu = gu_h
            else:
                gu = gu_t + gu_h
            self._effect_grad(slot, z, gu, grad)
        return grad

    def _effect_grad(self, slot: _Slot, z, gu, grad):
        # map d/du into the slot's unconstrained coordinates
        r, o = slot.r, slot.offset
        if slot.structure is EffectStructure.IID:
            grad[o:o + r] += gu
        elif slot.structure is EffectStructure.ICAR:
            grad[o:o + r] += self._basis.T @ gu
        else:
            seg = z[o:o + slot.size]
            v = seg[:r]
            s = self._basis @ seg[r:2 * r]
            sigma = np.exp(seg[2 * r])
            rho = expit(seg[2 * r + 1])
            sq1, sq2 = np.sqrt(1.0 - rho), np.sqrt(rho)
            grad[o:o + r] += sigma * sq1 * gu
            grad[o + r:o + 2 * r] += self._basis.T @ (sigma * sq2 * gu)
            u = sigma * (sq1 * v + sq2 * s)
            grad[o + 2 * r] += gu @ u
            grad[o + 2 * r + 1] += sigma * (gu @ (-v * sq1 * rho / 2.0 + s * sq2 * (1.0 - rho) / 2.0))

    # -- prior -----------------------------------------------------------------

    def _prior(self, z, st: ParamState, want_grad: bool):
        hp = self.hyper
        grad = np.zeros(self.dim)
        lp = 0.0
        th = z[self.blocks["theta"]]
        sl = self.blocks["theta"].start
        for k, name in enumerate(self.family.param_names):
            x = st.theta.values[k]
            if name == "mu":
                lp += -0.5 * (LOG_2PI + np.log(hp.sigma2_mu)) - 0.5 * x * x / hp.sigma2_mu
                grad[sl + k] = -x / hp.sigma2_mu
            elif name == "kappa":
                a, rate = hp.kappa_shape, hp.kappa_rate
                # Gamma(shape, rate) on kappa plus log-Jacobian
                lp += a * np.log(rate) - gammaln(a) + a * th[k] - rate * x
                grad[sl + k] = a - rate * x
            else:
                scale = {"sigma": hp.tau_sigma, "eta": hp.tau_eta, "nu": hp.tau_nu}[name]
                v, g = _half_cauchy_log_jac(x, scale)
                lp += v
                grad[sl + k] = g
        for key, var in (("alpha", hp.sigma2_alpha), ("beta", hp.sigma2_beta)):
            if key in self.blocks:
                x = z[self.blocks[key]]
                lp += -0.5 * x.size * (LOG_2PI + np.log(var)) - 0.5 * (x @ x) / var
                grad[self.blocks[key]] = -x / var
        if "gamma" in self.blocks:
            gam = z[self.blocks["gamma"]]
            g0 = self.blocks["gamma"].start
            s0 = self.blocks["log_sigma2_gamma"].start
            for j, (sl_k, gram, logdet) in enumerate(self._gram):
                gk = gam[sl_k]
                k = gk.size
                s2 = st.sigma2_gamma[j]
                var = s2 * self._g
                quad = gk @ gram @ gk
                lp += -0.5 * k * (LOG_2PI + np.log(var)) + 0.5 * logdet - 0.5 * quad / var
                grad[g0 + sl_k.start:g0 + sl_k.stop] = -(gram @ gk) / var
                v, g = _half_cauchy_log_jac(s2, hp.tau_sigma_gamma)
                lp += v
                grad[s0 + j] = -0.5 * k + 0.5 * quad / var + g
        for slot in self.slots.values():
            lp += self._slot_prior(slot, z, grad)
        return lp, grad

    def _slot_prior(self, slot: _Slot, z, grad):
        hp = self.hyper
        r, o = slot.r, slot.offset
        seg = z[o:o + slot.size]
        if slot.structure is EffectStructure.IID:
            sigma = np.exp(seg[r])
            val, gu, gls = iid_log_prior(seg[:r], sigma, grad=True)
            # precision tau = sigma^-2 ~ Gamma(theta, theta), with Jacobian
            th = hp.theta_tau
            tau = sigma ** -2.0
            val += th * np.log(th) - gammaln(th) + (th - 1.0) * np.log(tau) - th * tau + np.log(2.0 * tau)
            grad[o:o + r] += gu
            grad[o + r] += gls - 2.0 * th + 2.0 * th * tau
            return val
        if slot.structure is EffectStructure.ICAR:
            tau = np.exp(seg[r])
            u = self._basis @ seg[:r]
            val, gu, glt = self._icar(u, tau)
            th = hp.theta_tau
            val += th * np.log(th) - gammaln(th) + th * seg[r] - th * tau
            grad[o:o + r] += self._basis.T @ gu
            grad[o + r] += glt + th - th * tau
            return val
        v = seg[:r]
        s = self._basis @ seg[r:2 * r]
        sigma = np.exp(seg[2 * r])
        lr = seg[2 * r + 1]
        rho = expit(lr)
        val_v, gv, _ = iid_log_prior(v, 1.0, grad=True)
        val_s, gs, _ = self._icar(s, self._scaling)
        sc = hp.bym2_sigma_scale
        # half-normal on sigma with Jacobian
        val_sig = 0.5 * np.log(2.0 / np.pi) - np.log(sc) - 0.5 * (sigma / sc) ** 2 + seg[2 * r]
        ga, gb = hp.bym2_rho_a, hp.bym2_rho_b
        log_rho = -np.logaddexp(0.0, -lr)
        log_1m = -np.logaddexp(0.0, lr)
        val_rho = ga * log_rho + gb * log_1m - (gammaln(ga) + gammaln(gb) - gammaln(ga + gb))
        grad[o:o + r] += gv
        grad[o + r:o + 2 * r] += self._basis.T @ gs
        grad[o + 2 * r] += 1.0 - (sigma / sc) ** 2
        grad[o + 2 * r + 1] += ga * (1.0 - rho) - gb * rho
        return val_v + val_s + val_sig + val_rho

    def _icar(self, u, tau):
        # same value as spatial.icar_log_prior, using the cached dense Laplacian
        r = self.r
        lu = self._lap @ u
        pw = u @ lu
        sd = self.hyper.sum_zero_sd * r
        tot = u.sum()
        val = 0.5 * (r - 1) * np.log(tau) - 0.5 * tau * pw - 0.5 * LOG_2PI - np.log(sd) - 0.5 * (tot / sd) ** 2
        gu = -tau * lu - tot / (sd * sd)
        return val, gu, 0.5 * (r - 1) - 0.5 * tau * pw

    def log_prior(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(self._prior(z, self.unpack(z), False)[0])

    # -- posterior -------------------------------------------------------------

    def log_posterior(self, z) -> float:
        z = np.asarray(z, dtype=float)
        st = self.unpack(z)
        lp = self._prior(z, st, False)[0]
        if self.data.n:
            ll = self._loglik_terms(st, grad=False)[0]
            self._check(ll)
            lp += float(np.sum(ll))
        return float(lp)

    def logp_and_grad(self, z):
        """Log-posterior and its gradient on the unconstrained scale."""
        z = np.asarray(z, dtype=float)
        st = self.unpack(z)
        lp, grad = self._prior(z, st, True)
        if self.data.n:
            ll, g_a, g_b, g_theta = self._loglik_grad(z, st)
            lp += float(np.sum(ll))
            grad += self._chain_grad(g_a, g_b, g_theta, st, z)
        return float(lp), grad

    def grad_log_posterior(self, z) -> np.ndarray:
        return self.logp_and_grad(z)[1]

    # -- per-record quantities ---------------------------------------------------

    def predictors(self, z_or_state, data: SurvivalData | None = None):
        st = z_or_state if isinstance(z_or_state, ParamState) else self.unpack(z_or_state)
        return self._predictors(st, data or self.data)

    def cum_excess_hazard(self, z_or_state, t, data: SurvivalData | None = None) -> np.ndarray:
        """``H_E`` for every record of ``data`` at times ``t`` (broadcast, ``n x m``)."""
        st = z_or_state if isinstance(z_or_state, ParamState) else self.unpack(z_or_state)
        a, b = self._predictors(st, data or self.data)
        return cum_excess_from_predictors(st.theta, a, b, t)

    def initial_point(self, rng, radius: float = 1.0) -> np.ndarray:
        return rng.uniform(-radius, radius, size=self.dim)


def cum_excess_from_predictors(theta: BaselineParams, a, b, t) -> np.ndarray:
    """``H_0(t e^a) e^(b - a)`` with ``a``, ``b`` of shape (n,) and ``t`` of shape (m,) -> (n, m)."""
    a = np.asarray(a, dtype=float)[:, None]
    b = np.asarray(b, dtype=float)[:, None]
    t = np.atleast_1d(np.asarray(t, dtype=float))[None, :]
    y = t * np.exp(a)
    out = np.zeros(np.broadcast_shapes(y.shape))
    pos = np.broadcast_to(t > 0, out.shape)
    yb = np.broadcast_to(y, out.shape)
    if pos.any():
        out[pos] = baseline_terms(theta.family, theta.values, yb[pos]).cum_h
    return out * np.exp(b - a)


def excess_hazard(state: ParamState, record: PatientRecord, t, x_names=(), xt_names=(),
                  spline_row=None) -> float:
    """``h_E(t)`` for a single record with covariates looked up by name."""
    a, b = _record_predictors(state, record, x_names, xt_names, spline_row)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("excess hazard needs t > 0")
    y = t * np.exp(a)
    return np.exp(baseline_terms(state.theta.family, state.theta.values, y).log_h + b)


def cum_excess_hazard(state: ParamState, record: PatientRecord, t, x_names=(), xt_names=(),
                      spline_row=None):
    """``H_E(t)`` for a single record; zero at ``t = 0``."""
    a, b = _record_predictors(state, record, x_names, xt_names, spline_row)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("time must be >= 0")
    out = cum_excess_from_predictors(state.theta, [a], [b], np.ravel(t))[0]
    return out.reshape(t.shape) if t.ndim else float(out[0])


def _record_predictors(state, record, x_names, xt_names, spline_row):
    x = np.array([float(record.covariates[c]) for c in x_names])
    xt = np.array([float(record.covariates[c]) for c in xt_names])
    if x.size != state.beta.size or xt.size != state.alpha.size:
        raise DomainError("record covariates do not match the state dimensions")
    a = float(xt @ state.alpha) if xt.size else 0.0
    b = float(x @ state.beta) if x.size else 0.0
    if spline_row is not None and state.gamma.size:
        b += float(np.asarray(spline_row) @ state.gamma)
    reg = int(record.region) - 1
    if not 0 <= reg < max(state.u.size, state.u_tilde.size, 1):
        raise DomainError(f"region {record.region} out of range")
    if state.u_tilde.size:
        a += float(state.u_tilde[reg])
    if state.u.size:
        b += float(state.u[reg])
    return a, b
