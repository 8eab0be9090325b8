"""Hybrid digital-analog encoder and the two receivers.

Each transmitter sends ``x_i = delta_i * Q(s_i) + beta_i * s_i``.  Receiver
``i`` first recovers the digital pair ``(T_i, T_other)`` and then refines its
own source estimate:

* Scheme A: joint MAP over the digital pair, then the conditional mean of
  ``S_i`` given the decoded cells and ``y_i``.
* Scheme B: nearest point of the noiseless digital constellation, then a
  linear estimate of the quantization error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import ChannelModel, QuantizerMoments, QuantizerSpec, check_user, quantize
from .numerics import QuadratureRule, gauss_legendre, log_normal_cdf_diff

#: Constellation points closer than this are the same decision point.
MERGE_TOL = 1e-12


class InfeasiblePowerError(ValueError):
    """The digital part alone exceeds the power budget."""


@dataclass(frozen=True)
class EncoderParams:
    delta_coeff_1: float
    delta_coeff_2: float
    beta_1: float
    beta_2: float

    @classmethod
    def symmetric(cls, delta_coeff: float, beta: float) -> "EncoderParams":
        return cls(delta_coeff, delta_coeff, beta, beta)

    def digital(self, user: int) -> float:
        check_user(user)
        return self.delta_coeff_1 if user == 1 else self.delta_coeff_2

    def analog(self, user: int) -> float:
        check_user(user)
        return self.beta_1 if user == 1 else self.beta_2

    def alpha(self, user: int) -> float:
        return self.digital(user) + self.analog(user)


@dataclass(frozen=True)
class DigitalPair:
    t_hat_i: float
    t_hat_ic: float


def other(user: int) -> int:
    check_user(user)
    return 3 - user


def encode(s, user: int, params: EncoderParams, q: QuantizerSpec):
    """``delta_i * Q(s) + beta_i * s``."""
    x = params.digital(user) * quantize(s, q) + params.analog(user) * np.asarray(s, dtype=float)
    return float(x) if np.ndim(x) == 0 else x


def encoder_power(user: int, params: EncoderParams, moments: QuantizerMoments) -> float:
    d, b = params.digital(user), params.analog(user)
    return d * d * moments.e_t_sq + b * b + 2.0 * d * b * moments.e_t_s


def solve_beta_for_power(target_p: float, delta_coeff: float,
                         moments: QuantizerMoments) -> float:
    """Larger root ``beta`` of ``encoder_power = target_p`` for a given digital gain."""
    lin = delta_coeff * moments.e_t_s
    disc = lin * lin - delta_coeff * delta_coeff * moments.e_t_sq + target_p
    if disc < 0:
        raise InfeasiblePowerError(
            f"digital gain {delta_coeff} needs more than power {target_p}")
    return -lin + math.sqrt(disc)


# --------------------------------------------------------------------------
# Scheme B: pseudo-ML over the noiseless digital constellation


def feasible_pairs(q: QuantizerSpec) -> np.ndarray:
    """All index pairs ``(k, k')`` with ``|k|, |k'| <= k_max`` and ``|k' - k| <= M``."""
    k = q.indices
    kk, kc = np.meshgrid(k, k, indexing="ij")
    keep = np.abs(kc - kk) <= q.m
    return np.column_stack([kk[keep], kc[keep]])


@dataclass(frozen=True)
class Constellation:
    """Sorted distinct points ``alpha_i * t_l + gain * alpha_other * t_n``.

    ``pairs[j]`` is the index pair the decoder reports for ``points[j]``; when
    several pairs share a point the one with the smallest ``(|l|, |n|)`` wins.
    """

    points: np.ndarray
    pairs: np.ndarray
    delta: float

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.points[1:] + self.points[:-1])


def build_constellation(user: int, params: EncoderParams, ch: ChannelModel,
                        q: QuantizerSpec) -> Constellation:
    pairs = feasible_pairs(q)
    a_own = params.alpha(user)
    a_int = ch.gain_at(user) * params.alpha(other(user))
    pts = (a_own * pairs[:, 0] + a_int * pairs[:, 1]) * q.delta
    order = np.argsort(pts, kind="stable")
    pts, pairs = pts[order], pairs[order]
    # a new group starts wherever the gap to the previous point exceeds the tolerance
    new = np.empty(len(pts), dtype=bool)
    new[0] = True
    new[1:] = np.diff(pts) > MERGE_TOL
    starts = np.flatnonzero(new)
    group = np.cumsum(new) - 1
    # within a merged run the tie-break winner comes first
    rank = np.lexsort((pairs[:, 1], pairs[:, 0], np.abs(pairs[:, 1]),
                       np.abs(pairs[:, 0]), group))
    first = np.ones(len(rank), dtype=bool)
    first[1:] = group[rank][1:] != group[rank][:-1]
    winners = rank[first]
    return Constellation(pts[starts], pairs[winners], q.delta)


def nearest_point(y, const: Constellation) -> np.ndarray:
    """Index of the constellation point closest to each ``y``."""
    y = np.asarray(y, dtype=float)
    pts = const.points
    j = np.searchsorted(pts, y)
    j_hi = np.clip(j, 0, len(pts) - 1)
    j_lo = np.clip(j - 1, 0, len(pts) - 1)
    d_hi = np.abs(pts[j_hi] - y)
    d_lo = np.abs(y - pts[j_lo])
    pick_lo = d_lo < d_hi
    tie = d_lo == d_hi
    if np.any(tie):
        p = const.pairs
        key_lo = np.abs(p[j_lo, 0]) * 1e6 + np.abs(p[j_lo, 1])
        key_hi = np.abs(p[j_hi, 0]) * 1e6 + np.abs(p[j_hi, 1])
        pick_lo = pick_lo | (tie & (key_lo <= key_hi))
    return np.where(pick_lo, j_lo, j_hi)


def decode_pseudo_ml_indices(y, const: Constellation):
    """Decoded index pairs as two integer arrays."""
    j = nearest_point(y, const)
    return const.pairs[j, 0], const.pairs[j, 1]


def decode_digital_pseudo_ml(y: float, user: int, params: EncoderParams,
                             ch: ChannelModel, q: QuantizerSpec,
                             const: Constellation | None = None) -> DigitalPair:
    const = const or build_constellation(user, params, ch, q)
    k, kc = decode_pseudo_ml_indices(y, const)
    return DigitalPair(float(k) * q.delta, float(kc) * q.delta)


def residual_gains(user: int, params: EncoderParams, ch: ChannelModel, rho: float):
    """Coefficients of ``T_i`` and ``T_other`` in the receiver's mean of ``y_i``."""
    c = ch.gain_at(user)
    j = other(user)
    own = params.alpha(user) + c * params.analog(j) * rho
    cross = c * (params.alpha(j) - params.analog(j))
    return own, cross


def reconstruct_scheme_b(y, t_hat_i, t_hat_ic, gamma: float, user: int,
                         params: EncoderParams, ch: ChannelModel, rho: float):
    """``t_hat_i + gamma * (y - own * t_hat_i - cross * t_hat_ic)``."""
    own, cross = residual_gains(user, params, ch, rho)
    return t_hat_i + gamma * (np.asarray(y) - own * t_hat_i - cross * t_hat_ic)


# --------------------------------------------------------------------------
# Scheme A: MAP digital recovery and conditional-mean reconstruction


def _map_log_terms(y, k, kc, user, params, ch, q, rho, rule):
    """Log of the integrand over the ``s_i`` quadrature nodes, with the
    ``s_other`` integral done in closed form.

    Returns ``(log_terms, s_nodes)`` with shapes broadcast to ``(..., order)``.
    ``y``, ``k`` and ``kc`` broadcast against each other.
    """
    j = other(user)
    c = ch.gain_at(user)
    d_i, b_i = params.digital(user), params.analog(user)
    g = c * params.analog(j)
    sw2 = ch.sigma_w_sq
    sn2 = 1.0 - rho * rho
    k = np.asarray(k)
    kc = np.asarray(kc)
    lo, hi = q.cell_edges(k)
    lo = np.maximum(lo, -9.0)
    hi = np.minimum(hi, 9.0)
    s, w = rule.scaled(lo, hi)                       # (..., order)
    lo_c, hi_c = q.cell_edges(kc)
    z = (np.asarray(y, dtype=float) - d_i * k * q.delta
         - c * params.digital(j) * kc * q.delta)[..., None] - b_i * s
    var = g * g * sn2 + sw2
    log_lik = -0.5 * (z - g * rho * s) ** 2 / var - 0.5 * math.log(2 * math.pi * var)
    post_var = 1.0 / (1.0 / sn2 + g * g / sw2)
    post_mean = post_var * (rho * s / sn2 + g * z / sw2)
    sd = math.sqrt(post_var)
    log_mass = log_normal_cdf_diff((lo_c[..., None] - post_mean) / sd,
                                   (hi_c[..., None] - post_mean) / sd)
    log_prior = -0.5 * s * s - 0.5 * math.log(2 * math.pi)
    with np.errstate(divide="ignore"):
        log_w = np.log(w)
    return log_w + log_prior + log_lik + log_mass, s


def map_log_likelihood(y, k, kc, user: int, params: EncoderParams, ch: ChannelModel,
                       q: QuantizerSpec, rho: float, rule: QuadratureRule | None = None):
    """``log`` of the joint density of the cell pair ``(k, kc)`` and ``y_i``."""
    terms, _ = _map_log_terms(y, k, kc, user, params, ch, q, rho, rule or gauss_legendre())
    return logsumexp(terms, axis=-1)


def conditional_mean(y, k, kc, user: int, params: EncoderParams, ch: ChannelModel,
                     q: QuantizerSpec, rho: float, rule: QuadratureRule | None = None):
    """E[S_i | T_i = t_k, T_other = t_kc, Y_i = y]; a weighted mean of the cell nodes."""
    terms, s = _map_log_terms(y, k, kc, user, params, ch, q, rho, rule or gauss_legendre())
    top = np.max(terms, axis=-1, keepdims=True)
    if np.any(~np.isfinite(top)):
        # only reachable on total underflow; fall back to the level itself
        fallback = np.broadcast_to(np.asarray(k) * q.delta, top.shape[:-1]).astype(float)
        top = np.where(np.isfinite(top), top, 0.0)
        wts = np.exp(terms - top)
        tot = wts.sum(axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            est = (wts * s).sum(axis=-1) / tot
        return np.where(tot > 0, est, fallback)
    wts = np.exp(terms - top)
    return (wts * s).sum(axis=-1) / wts.sum(axis=-1)


def decode_digital_map(y: float, user: int, params: EncoderParams, ch: ChannelModel,
                       q: QuantizerSpec, rho: float,
                       rule: QuadratureRule | None = None) -> DigitalPair:
    """Exact MAP pair for a single observation (no lookup table)."""
    pairs = feasible_pairs(q)
    ll = map_log_likelihood(y, pairs[:, 0], pairs[:, 1], user, params, ch, q, rho, rule)
    best = _argmax_tiebreak(ll[None, :], pairs)[0]
    return DigitalPair(float(pairs[best, 0]) * q.delta, float(pairs[best, 1]) * q.delta)


def reconstruct_scheme_a(y: float, pair: DigitalPair, user: int, params: EncoderParams,
                         ch: ChannelModel, q: QuantizerSpec, rho: float,
                         rule: QuadratureRule | None = None) -> float:
    k = int(round(pair.t_hat_i / q.delta))
    kc = int(round(pair.t_hat_ic / q.delta))
    return float(conditional_mean(y, k, kc, user, params, ch, q, rho, rule))


def _tiebreak_order(pairs: np.ndarray) -> np.ndarray:
    """Pair positions sorted so that earlier entries win ties."""
    return np.lexsort((pairs[:, 1], pairs[:, 0], np.abs(pairs[:, 1]), np.abs(pairs[:, 0])))


def _argmax_tiebreak(scores: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    order = _tiebreak_order(pairs)
    return order[np.argmax(scores[:, order], axis=1)]


class MapDecoder:
    """Scheme A receiver backed by log-likelihood and conditional-mean tables
    on a uniform ``y`` grid, linearly interpolated at decode time."""

    def __init__(self, user: int, params: EncoderParams, ch: ChannelModel,
                 q: QuantizerSpec, rho: float, moments: QuantizerMoments,
                 rule: QuadratureRule | None = None, grid_size: int = 4096,
                 chunk: int = 64):
        rule = rule or gauss_legendre()
        self.user, self.q = user, q
        p_max = max(encoder_power(1, params, moments), encoder_power(2, params, moments))
        half = 6.0 * math.sqrt(p_max) * (1.0 + ch.gain_at(user))
        self.y_grid = np.linspace(-half, half, grid_size)
        order = _tiebreak_order(feasible_pairs(q))
        self.pairs = feasible_pairs(q)[order]
        n = len(self.pairs)
        self.log_lik = np.empty((n, grid_size))
        self.cond_mean = np.empty((n, grid_size))
        for start in range(0, n, chunk):
            sl = slice(start, start + chunk)
            kk = self.pairs[sl, 0][:, None]
            kc = self.pairs[sl, 1][:, None]
            terms, s = _map_log_terms(self.y_grid[None, :], kk, kc, user, params,
                                      ch, q, rho, rule)
            top = terms.max(axis=-1, keepdims=True)
            top = np.where(np.isfinite(top), top, 0.0)
            wts = np.exp(terms - top)
            tot = wts.sum(axis=-1)
            with np.errstate(divide="ignore", invalid="ignore"):
                self.log_lik[sl] = np.log(tot) + top[..., 0]
                mean = (wts * s).sum(axis=-1) / tot
            self.cond_mean[sl] = np.where(tot > 0, mean, kk * q.delta)
        self.log_lik[~np.isfinite(self.log_lik)] = -np.inf

    def _locate(self, y):
        g = self.y_grid
        h = g[1] - g[0]
        pos = np.clip((np.asarray(y, dtype=float) - g[0]) / h, 0.0, len(g) - 1.0)
        idx = np.minimum(pos.astype(np.int64), len(g) - 2)
        return idx, pos - idx

    def decode(self, y, block: int = 8192):
        """Decoded ``(k, k_other, s_hat)`` index arrays and estimates."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        k = np.empty(len(y), dtype=np.int64)
        kc = np.empty(len(y), dtype=np.int64)
        s_hat = np.empty(len(y))
        for start in range(0, len(y), block):
            sl = slice(start, start + block)
            idx, frac = self._locate(y[sl])
            lo = self.log_lik[:, idx]
            hi = self.log_lik[:, idx + 1]
            with np.errstate(invalid="ignore"):
                scores = (1.0 - frac) * lo + frac * hi
            scores = np.where(np.isnan(scores), np.minimum(lo, hi), scores)
            best = np.argmax(scores, axis=0)  # pairs are pre-sorted by tie-break
            k[sl] = self.pairs[best, 0]
            kc[sl] = self.pairs[best, 1]
            cm_lo = self.cond_mean[best, idx]
            cm_hi = self.cond_mean[best, idx + 1]
            s_hat[sl] = (1.0 - frac) * cm_lo + frac * cm_hi
        return k, kc, s_hat
