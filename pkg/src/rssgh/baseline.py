"""Parametric baseline distributions for the excess hazard.

Five families are supported: log-normal (LN), log-logistic (LL), power
generalized Weibull (PGW), gamma (GAM) and generalized gamma (GG).  All
quantities are computed in log space; linear-scale helpers exponentiate at
the very end.

Log-normal uses the standard ``(log t - mu) / sigma`` standardization in every
function (density, hazard, cumulative hazard and survival).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import expit, gammaln, log_ndtr, ndtri, psi

from ._incgamma import inverse_upper, log_gamma_pq
from .errors import DomainError

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class BaselineFamily(str, Enum):
    LN = "LN"
    LL = "LL"
    PGW = "PGW"
    GAM = "GAM"
    GG = "GG"

    @classmethod
    def parse(cls, tag) -> "BaselineFamily":
        if isinstance(tag, cls):
            return tag
        key = str(tag).strip().replace("_", "").replace("-", "").replace(" ", "").lower()
        try:
            return _ALIASES[key]
        except KeyError:
            raise DomainError(f"unknown baseline family {tag!r}") from None

    @property
    def param_names(self) -> tuple[str, ...]:
        return _PARAM_NAMES[self]

    @property
    def positive(self) -> tuple[bool, ...]:
        return tuple(name != "mu" for name in _PARAM_NAMES[self])


_ALIASES = {
    "ln": BaselineFamily.LN,
    "lognormal": BaselineFamily.LN,
    "ll": BaselineFamily.LL,
    "loglogistic": BaselineFamily.LL,
    "pgw": BaselineFamily.PGW,
    "powergeneralizedweibull": BaselineFamily.PGW,
    "gam": BaselineFamily.GAM,
    "gamma": BaselineFamily.GAM,
    "gg": BaselineFamily.GG,
    "generalizedgamma": BaselineFamily.GG,
}

_PARAM_NAMES = {
    BaselineFamily.LN: ("mu", "sigma"),
    BaselineFamily.LL: ("mu", "sigma"),
    BaselineFamily.PGW: ("eta", "nu", "kappa"),
    BaselineFamily.GAM: ("eta", "nu"),
    BaselineFamily.GG: ("eta", "nu", "kappa"),
}


@dataclass(frozen=True)
class BaselineParams:
    """Parameter values for one baseline family, validated on construction."""

    family: BaselineFamily
    values: tuple

    def __init__(self, family, values):
        fam = BaselineFamily.parse(family)
        vals = tuple(float(v) for v in np.atleast_1d(np.asarray(values, dtype=float)))
        if len(vals) != len(fam.param_names):
            raise DomainError(
                f"{fam.value} takes {len(fam.param_names)} parameters "
                f"{fam.param_names}, got {len(vals)}"
            )
        for name, pos, v in zip(fam.param_names, fam.positive, vals):
            if not np.isfinite(v) or (pos and v <= 0.0):
                raise DomainError(f"{fam.value} parameter {name}={v} is invalid")
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "values", vals)

    def __getitem__(self, name: str) -> float:
        return self.values[self.family.param_names.index(name)]

    def unconstrained(self) -> np.ndarray:
        return np.array(
            [np.log(v) if pos else v for v, pos in zip(self.values, self.family.positive)]
        )

    @classmethod
    def from_unconstrained(cls, family, z) -> "BaselineParams":
        fam = BaselineFamily.parse(family)
        z = np.asarray(z, dtype=float)
        return cls(fam, [np.exp(v) if pos else v for v, pos in zip(z, fam.positive)])


def _coerce(family, params) -> BaselineParams:
    if isinstance(params, BaselineParams):
        if family is not None and BaselineFamily.parse(family) != params.family:
            raise DomainError("family does not match params")
        return params
    return BaselineParams(family, params)


def _times(t, allow_zero: bool) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    bad = ~(t >= 0.0) if allow_zero else ~(t > 0.0)
    if np.any(bad) or np.any(np.isinf(t) & ~allow_zero):
        raise DomainError("times must be positive" if not allow_zero else "times must be >= 0")
    return t


# ---------------------------------------------------------------------------
# core evaluator


@dataclass
class BaselineTerms:
    """Log hazard, cumulative hazard and their derivatives at ``y``.

    Derivatives with respect to the parameters are on the unconstrained scale
    (log for positive parameters), one row per parameter.
    """

    log_h: np.ndarray
    cum_h: np.ndarray
    dlogh_dlogy: np.ndarray | None = None
    dlogh_dtheta: np.ndarray | None = None
    dcumh_dtheta: np.ndarray | None = None


def baseline_terms(family: BaselineFamily, theta, y, grad: bool = False) -> BaselineTerms:
    """Evaluate the family at positive ``y`` for natural parameters ``theta``."""
    y = np.asarray(y, dtype=float)
    ly = np.log(y)
    fam = BaselineFamily.parse(family)
    return _EVALUATORS[fam](tuple(float(v) for v in theta), y, ly, grad)


def _ln_terms(theta, y, ly, grad):
    mu, sigma = theta
    z = (ly - mu) / sigma
    log_s = log_ndtr(-z)
    log_phi = -0.5 * z * z - _LOG_SQRT_2PI
    log_h = log_phi - np.log(sigma) - ly - log_s
    out = BaselineTerms(log_h, -log_s)
    if grad:
        m = np.exp(log_phi - log_s)
        out.dlogh_dlogy = (m - z) / sigma - 1.0
        out.dlogh_dtheta = np.stack([(z - m) / sigma, -z * (m - z) - 1.0])
        out.dcumh_dtheta = np.stack([-m / sigma, -m * z])
    return out


def _ll_terms(theta, y, ly, grad):
    mu, sigma = theta
    z = (ly - mu) / sigma
    log_h = -np.logaddexp(0.0, -z) - np.log(sigma) - ly
    out = BaselineTerms(log_h, np.logaddexp(0.0, z))
    if grad:
        s_neg = expit(-z)
        s_pos = expit(z)
        out.dlogh_dlogy = s_neg / sigma - 1.0
        out.dlogh_dtheta = np.stack([-s_neg / sigma, -z * s_neg - 1.0])
        out.dcumh_dtheta = np.stack([-s_pos / sigma, -s_pos * z])
    return out


def _pgw_terms(theta, y, ly, grad):
    eta, nu, kappa = theta
    lr = nu * (ly - np.log(eta))
    sp = np.logaddexp(0.0, lr)
    a = sp / kappa
    cum_h = np.expm1(a)
    log_h = np.log(nu) - np.log(kappa) - ly + lr + (1.0 / kappa - 1.0) * sp
    out = BaselineTerms(log_h, cum_h)
    if grad:
        q = expit(lr)
        c = 1.0 / kappa - 1.0
        ea = np.exp(a)
        out.dlogh_dlogy = -1.0 + nu + c * nu * q
        out.dlogh_dtheta = np.stack([-nu - c * nu * q, 1.0 + lr + c * q * lr, -1.0 - a])
        out.dcumh_dtheta = np.stack([-ea * q * nu / kappa, ea * q * lr / kappa, -ea * a])
    return out


def _gam_terms(theta, y, ly, grad):
    eta, nu = theta
    lx = ly - np.log(eta)
    x = np.exp(lx)
    lg = gammaln(nu)
    if grad:
        _, lq, _, dlq = log_gamma_pq(nu, x, deriv=True)
    else:
        _, lq = log_gamma_pq(nu, x)
    log_f = (nu - 1.0) * lx - x - np.log(eta) - lg
    out = BaselineTerms(log_f - lq, -lq)
    if grad:
        hz = np.exp(nu * lx - x - lg - lq)
        out.dlogh_dlogy = nu - 1.0 - x + hz
        out.dlogh_dtheta = np.stack([-nu + x - hz, nu * (lx - psi(nu) - dlq)])
        out.dcumh_dtheta = np.stack([-hz, -nu * dlq])
    return out


def _gg_terms(theta, y, ly, grad):
    eta, nu, kappa = theta
    a = nu / kappa
    big_l = ly - np.log(eta)
    lx = kappa * big_l
    x = np.exp(lx)
    lg = gammaln(a)
    if grad:
        _, lq, _, dlq = log_gamma_pq(a, x, deriv=True)
    else:
        _, lq = log_gamma_pq(a, x)
    log_f = np.log(kappa) - lg + nu * big_l - ly - x
    out = BaselineTerms(log_f - lq, -lq)
    if grad:
        hz = np.exp(a * lx - x - lg - lq)
        apsi = a * psi(a)
        out.dlogh_dlogy = nu - 1.0 - kappa * x + kappa * hz
        out.dlogh_dtheta = np.stack(
            [
                -nu + kappa * x - kappa * hz,
                -apsi + nu * big_l - a * dlq,
                1.0 + apsi - x * lx + a * dlq + hz * lx,
            ]
        )
        out.dcumh_dtheta = np.stack([-kappa * hz, -a * dlq, a * dlq + hz * lx])
    return out


_EVALUATORS = {
    BaselineFamily.LN: _ln_terms,
    BaselineFamily.LL: _ll_terms,
    BaselineFamily.PGW: _pgw_terms,
    BaselineFamily.GAM: _gam_terms,
    BaselineFamily.GG: _gg_terms,
}


# ---------------------------------------------------------------------------
# public scalar/array API


def log_hazard(family, params, t):
    """``log h(t | theta)`` for ``t > 0``."""
    p = _coerce(family, params)
    t = _times(t, allow_zero=False)
    return baseline_terms(p.family, p.values, t).log_h


def hazard(family, params, t):
    return np.exp(log_hazard(family, params, t))


def cum_hazard(family, params, t):
    """Cumulative hazard ``H(t | theta)``; ``H(0) = 0``."""
    p = _coerce(family, params)
    t = _times(t, allow_zero=True)
    out = np.zeros_like(t)
    pos = t > 0
    if np.any(pos):
        out[pos] = baseline_terms(p.family, p.values, t[pos]).cum_h
    return out if out.ndim else float(out)


def log_survival(family, params, t):
    return -np.asarray(cum_hazard(family, params, t))


def survival(family, params, t):
    return np.exp(log_survival(family, params, t))


def log_density(family, params, t):
    """``log f(t | theta) = log h(t) - H(t)`` for ``t > 0``."""
    p = _coerce(family, params)
    t = _times(t, allow_zero=False)
    terms = baseline_terms(p.family, p.values, t)
    return terms.log_h - terms.cum_h


def density(family, params, t):
    return np.exp(log_density(family, params, t))


def cdf(family, params, t):
    return -np.expm1(log_survival(family, params, t))


def inverse_cum_hazard(family, params, cum_h):
    """Return ``t`` with ``H(t | theta) = cum_h`` (``cum_h >= 0``).

    Working from the cumulative hazard rather than the CDF keeps precision
    in the far right tail, where ``1 - p`` underflows.
    """
    p = _coerce(family, params)
    h = np.asarray(cum_h, dtype=float)
    if np.any(~(h >= 0.0)):
        raise DomainError("cumulative hazard must be >= 0")
    fam, th = p.family, p.values
    with np.errstate(divide="ignore", over="ignore"):
        if fam is BaselineFamily.LN:
            mu, sigma = th
            cdf_val = -np.expm1(-h)
            z = np.where(cdf_val < 0.5, ndtri(cdf_val), -ndtri(np.exp(-h)))
            out = np.exp(mu + sigma * z)
        elif fam is BaselineFamily.LL:
            mu, sigma = th
            z = h + np.log(-np.expm1(-h))
            out = np.exp(mu + sigma * z)
        elif fam is BaselineFamily.PGW:
            eta, nu, kappa = th
            rho = np.expm1(kappa * np.log1p(h))
            out = eta * rho ** (1.0 / nu)
        elif fam is BaselineFamily.GAM:
            eta, nu = th
            out = eta * inverse_upper(nu, -h)
        else:
            eta, nu, kappa = th
            out = eta * inverse_upper(nu / kappa, -h) ** (1.0 / kappa)
    out = np.where(h == 0.0, 0.0, out)
    out = np.where(np.isinf(h), np.inf, out)
    return out if out.ndim else float(out)


def quantile(family, params, prob):
    """Quantile function ``F^{-1}(p)`` for ``0 < p < 1``."""
    prob = np.asarray(prob, dtype=float)
    if np.any(~((prob > 0.0) & (prob < 1.0))):
        raise DomainError("probability must lie strictly inside (0, 1)")
    return inverse_cum_hazard(family, params, -np.log1p(-prob))
