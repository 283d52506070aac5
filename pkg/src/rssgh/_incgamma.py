"""Regularized incomplete gamma functions in log space, with shape derivatives.

The lower series is used for ``x < a + 1`` and the Lentz continued fraction
for the upper tail otherwise.  Both recurrences are differentiated in
forward mode so that ``d log Q / d a`` comes out of the same pass.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln, psi

_EPS = 1e-16
_FPMIN = 1e-300
_MAX_ITER = 5000
# below this many elements the plain-float recurrences beat the vectorized ones
_SCALAR_CUTOFF = 16


def _series(a, x):
    # P(a, x) = x^a e^-x / Gamma(a+1) * sum_n c_n,  c_n = c_{n-1} x / (a + n)
    c = np.ones_like(x)
    dc = np.zeros_like(x)
    s = np.ones_like(x)
    ds = np.zeros_like(x)
    active = np.ones(x.shape, dtype=bool)
    n = 0
    while active.any():
        n += 1
        if n > _MAX_ITER:
            raise ArithmeticError("incomplete gamma series did not converge")
        ap = a + n
        c_new = c * x / ap
        dc = np.where(active, (dc * x - c_new) / ap, dc)
        c = np.where(active, c_new, c)
        s = np.where(active, s + c, s)
        ds = np.where(active, ds + dc, ds)
        active &= np.abs(c) > _EPS * np.abs(s)
    log_p = a * np.log(x) - x - gammaln(a + 1.0) + np.log(s)
    dlog_p = np.log(x) - psi(a + 1.0) + ds / s
    return log_p, dlog_p


def _series_scalar(a: float, x: float):
    c, dc, s, ds = 1.0, 0.0, 1.0, 0.0
    for n in range(1, _MAX_ITER + 1):
        ap = a + n
        c_new = c * x / ap
        dc = (dc * x - c_new) / ap
        c = c_new
        s += c
        ds += dc
        if abs(c) <= _EPS * abs(s):
            break
    else:
        raise ArithmeticError("incomplete gamma series did not converge")
    lx = math.log(x)
    return a * lx - x - math.lgamma(a + 1.0) + math.log(s), lx - float(psi(a + 1.0)) + ds / s


def _contfrac_scalar(a: float, x: float):
    b = x + 1.0 - a
    db = -1.0
    c, dc = 1.0 / _FPMIN, 0.0
    if abs(b) < _FPMIN:
        b = _FPMIN
    d = 1.0 / b
    dd = -db * d * d
    h, dh = d, dd
    for i in range(1, _MAX_ITER + 1):
        an = -i * (i - a)
        dan = float(i)
        b += 2.0
        den = an * d + b
        dden = dan * d + an * dd + db
        if abs(den) < _FPMIN:
            den = _FPMIN
        cn = b + an / c
        dcn = db + dan / c - an * (dc / c) / c
        if abs(cn) < _FPMIN:
            cn = _FPMIN
        dn = 1.0 / den
        ddn = -dden * dn * dn
        delta = dn * cn
        ddelta = ddn * cn + dn * dcn
        dh = dh * delta + h * ddelta
        h *= delta
        c, dc, d, dd = cn, dcn, dn, ddn
        if abs(delta - 1.0) <= _EPS:
            break
    else:
        raise ArithmeticError("incomplete gamma continued fraction did not converge")
    lx = math.log(x)
    return a * lx - x - math.lgamma(a) + math.log(h), lx - float(psi(a)) + dh / h


def _dispatch(vec, scalar, a, x):
    if x.size > _SCALAR_CUTOFF:
        return vec(a, x)
    out = [scalar(float(ai), float(xi)) for ai, xi in zip(a, x)]
    return np.array([o[0] for o in out]), np.array([o[1] for o in out])


def _contfrac(a, x):
    # Modified Lentz for Q(a, x) = x^a e^-x / Gamma(a) * h
    b = x + 1.0 - a
    db = -1.0
    c = np.full_like(x, 1.0 / _FPMIN)
    dc = np.zeros_like(x)
    d = 1.0 / b
    dd = -db * d * d
    h = d.copy()
    dh = dd.copy()
    active = np.ones(x.shape, dtype=bool)
    i = 0
    while active.any():
        i += 1
        if i > _MAX_ITER:
            raise ArithmeticError("incomplete gamma continued fraction did not converge")
        an = -i * (i - a)
        dan = float(i)
        b = b + 2.0
        den = an * d + b
        dden = dan * d + an * dd + db
        den = np.where(np.abs(den) < _FPMIN, _FPMIN, den)
        cn = b + an / c
        dcn = db + dan / c - an * (dc / c) / c
        cn = np.where(np.abs(cn) < _FPMIN, _FPMIN, cn)
        dn = 1.0 / den
        ddn = -dden * dn * dn
        delta = dn * cn
        ddelta = ddn * cn + dn * dcn
        h_new = h * delta
        dh_new = dh * delta + h * ddelta
        h = np.where(active, h_new, h)
        dh = np.where(active, dh_new, dh)
        c = np.where(active, cn, c)
        dc = np.where(active, dcn, dc)
        d = np.where(active, dn, d)
        dd = np.where(active, ddn, dd)
        active &= np.abs(delta - 1.0) > _EPS
    log_q = a * np.log(x) - x - gammaln(a) + np.log(h)
    dlog_q = np.log(x) - psi(a) + dh / h
    return log_q, dlog_q


def log_gamma_pq(a, x, deriv: bool = False):
    """Return ``log P(a, x)`` and ``log Q(a, x)``, optionally with ``d/da`` of both.

    Arrays broadcast.  ``x = 0`` gives ``log P = -inf`` and ``log Q = 0``.
    """
    a, x = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(x, dtype=float))
    shape = a.shape
    a = a.astype(float).ravel()
    x = x.astype(float).ravel()
    log_p = np.empty_like(x)
    log_q = np.empty_like(x)
    dlog_p = np.zeros_like(x)
    dlog_q = np.zeros_like(x)

    zero = x <= 0.0
    inf = np.isinf(x)
    log_p[zero] = -np.inf
    log_q[zero] = 0.0
    log_p[inf] = 0.0
    log_q[inf] = -np.inf

    ser = (~zero) & (~inf) & (x < a + 1.0)
    cf = (~zero) & (~inf) & ~ser
    if ser.any():
        lp, dlp = _dispatch(_series, _series_scalar, a[ser], x[ser])
        p = np.exp(lp)
        lq = np.log1p(-p)
        log_p[ser] = lp
        log_q[ser] = lq
        dlog_p[ser] = dlp
        dlog_q[ser] = -p * dlp / np.exp(lq)
    if cf.any():
        lq, dlq = _dispatch(_contfrac, _contfrac_scalar, a[cf], x[cf])
        q = np.exp(lq)
        lp = np.log1p(-q)
        log_p[cf] = lp
        log_q[cf] = lq
        dlog_q[cf] = dlq
        dlog_p[cf] = -q * dlq / np.exp(lp)

    out = (log_p.reshape(shape), log_q.reshape(shape))
    if deriv:
        out = out + (dlog_p.reshape(shape), dlog_q.reshape(shape))
    return out


def gammainc_lower(a, x):
    """Regularized lower incomplete gamma ``P(a, x)``."""
    return np.exp(log_gamma_pq(a, x)[0])


def gammainc_upper(a, x):
    """Regularized upper incomplete gamma ``Q(a, x)``."""
    return np.exp(log_gamma_pq(a, x)[1])


def _log_x_density(a, lx, lgam):
    # log of x * g_a(x), where g_a is the standard gamma density
    return a * lx - np.exp(lx) - lgam


def inverse_upper(a, target_log_q, max_iter: int = 200):
    """Solve ``log Q(a, x) = target_log_q`` for ``x`` (vectorized).

    Newton iterations on ``log x`` with a bisection fallback whenever a step
    leaves the current bracket.
    """
    a, tq = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(target_log_q, dtype=float))
    shape = a.shape
    a = a.ravel().astype(float)
    tq = tq.ravel().astype(float)
    out = np.empty_like(tq)
    out[tq >= 0.0] = 0.0
    out[np.isneginf(tq)] = np.inf
    work = (tq < 0.0) & np.isfinite(tq)
    if not work.any():
        return out.reshape(shape)
    a_w = a[work]
    tq_w = tq[work]
    lgam = gammaln(a_w)
    # target on the lower side where P is the small tail
    tp_w = np.log(-np.expm1(tq_w))
    use_p = tq_w > np.log(0.5)

    def g(lx):
        lp, lq = log_gamma_pq(a_w, np.exp(lx))
        return np.where(use_p, lp - tp_w, tq_w - lq), lp, lq

    # initial point: Wilson-Hilferty, fall back to small-x power law
    from scipy.special import ndtri

    p = -np.expm1(tq_w)
    z = ndtri(np.clip(p, 1e-300, 1 - 1e-16))
    z = np.where(p >= 1 - 1e-16, -ndtri(np.exp(tq_w)), z)
    wh = a_w * (1.0 - 1.0 / (9.0 * a_w) + z / (3.0 * np.sqrt(a_w))) ** 3
    small = (tp_w + gammaln(a_w + 1.0)) / a_w
    lx = np.where(wh > 0, np.log(np.where(wh > 0, wh, 1.0)), small)
    lx = np.where(np.isfinite(lx), lx, 0.0)

    lo = lx - 1.0
    hi = lx + 1.0
    for _ in range(200):
        glo = g(lo)[0]
        bad = glo > 0
        if not bad.any():
            break
        lo = np.where(bad, lo - 2.0 * (hi - lo), lo)
    for _ in range(200):
        ghi = g(hi)[0]
        bad = ghi < 0
        if not bad.any():
            break
        hi = np.where(bad, hi + 2.0 * (hi - lo), hi)
    lx = np.clip(lx, lo, hi)

    for _ in range(max_iter):
        val, lp, lq = g(lx)
        lo = np.where(val < 0, lx, lo)
        hi = np.where(val > 0, lx, hi)
        ldens = _log_x_density(a_w, lx, lgam)
        slope = np.where(use_p, np.exp(ldens - lp), np.exp(ldens - lq))
        step = val / np.where(slope > 0, slope, np.inf)
        new = lx - step
        outside = ~((new > lo) & (new < hi)) | ~np.isfinite(new)
        new = np.where(outside, 0.5 * (lo + hi), new)
        done = (np.abs(new - lx) <= 1e-15 * np.maximum(1.0, np.abs(lx))) | (val == 0)
        lx = new
        if done.all():
            break
    out[work] = np.exp(lx)
    return out.reshape(shape)
