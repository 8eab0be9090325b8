"""Normal distribution helpers and Gauss-Legendre cell quadrature."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from numba import njit
from scipy.special import erfc, log_ndtr

#: Stand-in for an infinite integration / window bound.
BIG = 1e6
#: Standardized bound past which a normal CDF is 0 or 1 to within 1e-17.
SATURATION = 8.5

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_INV_SQRT2 = 1.0 / _SQRT2


def normal_cdf(x):
    """Standard normal CDF via ``erfc`` (accurate in both tails)."""
    return 0.5 * erfc(-np.asarray(x, dtype=float) / _SQRT2)


def normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def bivariate_normal_pdf(s1, s2, rho: float):
    """Density of a standard bivariate normal with correlation ``rho``."""
    if not abs(rho) < 1.0:
        raise ValueError(f"|rho| must be < 1, got {rho}")
    s1 = np.asarray(s1, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    det = 1.0 - rho * rho
    q = (s1 * s1 - 2.0 * rho * s1 * s2 + s2 * s2) / det
    return np.exp(-0.5 * q) / (2.0 * math.pi * math.sqrt(det))


def bivariate_normal_cdf(h, k, r):
    """P[X <= h, Y <= k] for standard normals with correlation ``r`` (|r| < 1).

    Vectorized over all arguments.  Uses the Genz (2004) Gauss-Legendre
    algorithm; absolute error is around 1e-15.
    """
    h, k, r = np.broadcast_arrays(np.asarray(h, dtype=float), np.asarray(k, dtype=float),
                                  np.asarray(r, dtype=float))
    if np.any(np.abs(r) >= 1.0):
        raise ValueError("|r| must be < 1")
    out = _bvn_many(np.ravel(h), np.ravel(k), np.ravel(r))
    return out.reshape(h.shape) if h.ndim else float(out[0])


_BVN_X, _BVN_W = np.polynomial.legendre.leggauss(20)
# nodes mapped to (0, 2); both integrals of the algorithm run over [0, 2]
_BVN_X = 1.0 + _BVN_X
#: Correlation above which the near-singular expansion is used.
_BVN_HIGH = 0.925


@njit(cache=True)
def ndtr_scalar(x):
    return 0.5 * math.erfc(-x * _INV_SQRT2)


@njit(cache=True)
def pdf_scalar(x):
    return _INV_SQRT_2PI * math.exp(-0.5 * x * x)


@njit(cache=True)
def bvn_table(r):
    """Node constants of the Genz rule for a fixed correlation ``r``."""
    n = _BVN_X.size
    t1 = np.empty(n)
    t2 = np.empty(n)
    t3 = np.empty(n)
    if abs(r) < _BVN_HIGH:
        asr = 0.5 * math.asin(r)
        for i in range(n):
            sn = math.sin(asr * _BVN_X[i])
            t1[i] = sn
            t2[i] = 1.0 / (1.0 - sn * sn)
            t3[i] = _BVN_W[i] * asr / (2.0 * math.pi)
    else:
        a2 = 0.5 * math.sqrt((1.0 - r) * (1.0 + r))
        for i in range(n):
            xs = (a2 * _BVN_X[i]) ** 2
            rs = math.sqrt(1.0 - xs)
            t1[i] = xs
            t2[i] = xs / ((1.0 + rs) * (1.0 + rs))
            t3[i] = 1.0 / rs
    return t1, t2, t3


@njit(cache=True)
def bvn_lower(h, k, r, t1, t2, t3):
    """Scalar P[X <= h, Y <= k] with tables from :func:`bvn_table` for ``r``.

    Arguments beyond SATURATION use the one-dimensional limit.
    """
    if h < -SATURATION or k < -SATURATION:
        return 0.0
    if h > SATURATION:
        return ndtr_scalar(k)
    if k > SATURATION:
        return ndtr_scalar(h)
    # upper orthant P[X > -h, Y > -k]
    h = -h
    k = -k
    if abs(r) < _BVN_HIGH:
        hk = h * k
        hs = 0.5 * (h * h + k * k)
        acc = 0.0
        for i in range(t1.size):
            acc += t3[i] * math.exp((t1[i] * hk - hs) * t2[i])
        bvn = acc + ndtr_scalar(-h) * ndtr_scalar(-k)
        return min(max(bvn, 0.0), 1.0)
    # near-singular correlation: expansion in sqrt(1 - r^2)
    two_pi = 2.0 * math.pi
    if r < 0:
        k = -k
    hk = h * k
    as_ = (1.0 - r) * (1.0 + r)
    a = math.sqrt(as_)
    bs = (h - k) * (h - k)
    c = (4.0 - hk) / 8.0
    d = (12.0 - hk) / 80.0
    asr = -0.5 * (bs / as_ + hk)
    bvn = 0.0
    if asr > -100.0:
        bvn = a * math.exp(asr) * (1.0 - c * (bs - as_) * (1.0 - d * bs) / 3.0
                                   + c * d * as_ * as_)
    if hk > -100.0:
        b = math.sqrt(bs)
        bvn -= (math.exp(-0.5 * hk) * math.sqrt(two_pi) * ndtr_scalar(-b / a) * b
                * (1.0 - c * bs * (1.0 - d * bs) / 3.0))
    acc = 0.0
    for i in range(t1.size):
        xs = t1[i]
        asr2 = -0.5 * (bs / xs + hk)
        if asr2 > -100.0:
            sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs)
            acc += _BVN_W[i] * (math.exp(asr2) * sp
                                - math.exp(asr2 - 0.5 * hk * t2[i]) * t3[i])
    bvn = (0.5 * a * acc - bvn) / two_pi
    if r > 0:
        bvn += ndtr_scalar(-max(h, k))
    elif h >= k:
        bvn = -bvn
    else:
        if h < 0:
            lk = ndtr_scalar(k) - ndtr_scalar(h)
        else:
            lk = ndtr_scalar(-h) - ndtr_scalar(-k)
        bvn = lk - bvn
    return min(max(bvn, 0.0), 1.0)


@njit(cache=True)
def _bvn_many(h, k, r):
    out = np.empty(h.size)
    last = np.nan
    t1, t2, t3 = bvn_table(0.0)
    for i in range(h.size):
        if r[i] != last:
            t1, t2, t3 = bvn_table(r[i])
            last = r[i]
        out[i] = bvn_lower(h[i], k[i], r[i], t1, t2, t3)
    return out


def log_normal_cdf_diff(a, b):
    """``log(Phi(b) - Phi(a))`` for ``a <= b`` without cancellation."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    # work in the lower tail, where log_ndtr is accurate
    flip = (a + b) > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    log_hi = log_ndtr(hi)
    log_lo = log_ndtr(lo)
    with np.errstate(divide="ignore"):
        return log_hi + np.log1p(-np.exp(log_lo - log_hi))


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre rule on [-1, 1]."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def scaled(self, lo, hi):
        """Nodes and weights mapped onto ``[lo, hi]`` (broadcast over lo/hi)."""
        lo = np.asarray(lo, dtype=float)[..., None]
        hi = np.asarray(hi, dtype=float)[..., None]
        half = 0.5 * (hi - lo)
        return lo + half * (self.nodes + 1.0), half * self.weights


@lru_cache(maxsize=None)
def gauss_legendre(order: int = 24) -> QuadratureRule:
    if order < 1:
        raise ValueError(f"quadrature order must be >= 1, got {order}")
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(x, w, order)


def _finite(interval):
    lo, hi = (float(v) for v in interval)
    if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
        raise ValueError(f"cell interval must be finite and nonempty, got {interval}")
    return lo, hi


def integrate_cell_2d(f: Callable, cell_i, cell_ic, rule: QuadratureRule | None = None):
    """Tensor-product Gauss-Legendre estimate of the integral of ``f(s_i, s_ic)``
    over ``cell_i x cell_ic``.  ``f`` must accept broadcast arrays."""
    rule = rule or gauss_legendre()
    xi, wi = rule.scaled(*_finite(cell_i))
    xc, wc = rule.scaled(*_finite(cell_ic))
    vals = f(xi[:, None], xc[None, :])
    return float(np.sum(wi[:, None] * wc[None, :] * vals))


def cell_window_integral(moment_power: int, cell_i, cell_ic, t_k: float,
                         window: tuple[Callable, Callable], rho: float,
                         sigma_w_sq: float, rule: QuadratureRule | None = None,
                         ) -> float:
    """Integral of ``g(s_i) * P[lb <= W <= ub] * pdf(s_i, s_ic)`` over a cell pair.

    ``window`` holds ``(lb, ub)`` as callables of ``(s_i, s_ic)``; ``g`` is 1
    for ``moment_power=0`` and ``s_i - t_k`` for ``moment_power=1``.  Where
    ``lb > ub`` the slab is empty and contributes nothing.
    """
    if sigma_w_sq <= 0:
        raise ValueError(f"sigma_w_sq must be > 0, got {sigma_w_sq}")
    if moment_power not in (0, 1):
        raise ValueError(f"moment_power must be 0 or 1, got {moment_power}")
    sigma = math.sqrt(sigma_w_sq)
    lb_fn, ub_fn = window

    def integrand(si, sc):
        mass = normal_cdf(ub_fn(si, sc) / sigma) - normal_cdf(lb_fn(si, sc) / sigma)
        val = np.maximum(mass, 0.0) * bivariate_normal_pdf(si, sc, rho)
        return val * (si - t_k) if moment_power else val

    return integrate_cell_2d(integrand, cell_i, cell_ic, rule)


def clip_cell(lo: float, hi: float, reach: float = 9.0):
    """Replace infinite cell edges by ``+-reach`` (Gaussian mass beyond is ~1e-19)."""
    return max(lo, -reach), min(hi, reach)
