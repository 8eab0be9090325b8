"""Closed-form distortion of the Scheme B receiver.

Given the source cells ``(k, m)`` the pseudo-ML decoder outputs ``(l, n)``
whenever ``mu + w`` falls in the decision interval of the distance
``d = alpha_i (l - k) delta + c alpha_o (n - m) delta``, where ``mu`` is the
analog perturbation ``beta_i (s_i - t_k) + c beta_o (s_o - t_m)``.  Summing the
resulting joint pmf against the error polynomials gives every term of the
distortion as a quadratic in the linear coefficient ``gamma``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numba import njit
from scipy.special import ndtr

from .codec import (
    Constellation,
    EncoderParams,
    build_constellation,
    other,
    residual_gains,
)
from .core import ChannelModel, QuantizerSpec, quantizer_moments
from .numerics import (
    BIG,
    SATURATION,
    QuadratureRule,
    bvn_lower,
    bvn_table,
    gauss_legendre,
    ndtr_scalar,
    normal_pdf,
    pdf_scalar,
)

#: (k, m) cells lighter than this are left out of the joint pmf.
CELL_PROB_FLOOR = 1e-12
#: Cells lighter than this integrate with a third of the quadrature order
#: (at least LIGHT_CELL_MIN_ORDER); their error is scaled by their mass.
LIGHT_CELL_PROB = 1e-6
LIGHT_CELL_MIN_ORDER = 6
#: Outer reach used for the unbounded edge cells of the quantizer.
CELL_REACH = 9.0

COMPONENT_NAMES = (
    "lambda_sq",
    "quant_error",
    "interference_noise",
    "channel_noise",
    "cross_own",
    "cross_other",
)
CORRECTION_NAMES = ("lambda_source_noise", "lambda_channel_noise")


# --------------------------------------------------------------------------
# distance sets


@dataclass(frozen=True)
class ConstellationTable:
    """Sorted distinct decoding distances with one ``(p, q)`` generator each."""

    distances: np.ndarray
    generators: np.ndarray
    bound: float


def distance_bound(user: int, params: EncoderParams, ch: ChannelModel,
                   q: QuantizerSpec) -> float:
    """``2 * (5 sigma_w + (|beta_i| + c |beta_o|) delta / 2)``."""
    c = ch.gain_at(user)
    spread = abs(params.analog(user)) + c * abs(params.analog(other(user)))
    return 2.0 * (5.0 * ch.sigma_w + spread * q.delta / 2.0)


def build_distance_set(user: int, params: EncoderParams, ch: ChannelModel,
                       q: QuantizerSpec, m: int | None = None,
                       cell: tuple[int, int] | None = None,
                       bound: float | None = None) -> ConstellationTable:
    """Distances ``(p alpha_i + q c alpha_o) delta`` reachable by the decoder.

    Without ``cell`` this is the union over all admissible source cells:
    ``|p|, |q| <= 2 k_max`` and ``|q - p| <= 2M``.  With ``cell=(k, m)`` only
    the decoder outputs ``(k + p, m + q)`` that are themselves feasible pairs
    are kept, which is the set the decoder actually searches for that cell.
    """
    m = q.m if m is None else m
    bound = distance_bound(user, params, ch, q) if bound is None else bound
    a_own = params.alpha(user)
    a_int = ch.gain_at(user) * params.alpha(other(user))
    span = np.arange(-2 * q.k_max, 2 * q.k_max + 1)
    pp, qq = np.meshgrid(span, span, indexing="ij")
    if cell is None:
        keep = np.abs(qq - pp) <= 2 * m
    else:
        k0, m0 = cell
        ll, nn = k0 + pp, m0 + qq
        keep = ((np.abs(ll) <= q.k_max) & (np.abs(nn) <= q.k_max)
                & (np.abs(nn - ll) <= m))
    gens = np.column_stack([pp[keep], qq[keep]])
    dist = (a_own * gens[:, 0] + a_int * gens[:, 1]) * q.delta
    order = np.lexsort((gens[:, 1], gens[:, 0], np.abs(gens[:, 1]),
                        np.abs(gens[:, 0]), dist))
    dist, gens = dist[order], gens[order]
    new = np.ones(len(dist), dtype=bool)
    new[1:] = np.diff(dist) > 1e-12
    dist, gens = dist[new], gens[new]
    inside = np.abs(dist) <= bound
    if not inside.any():
        raise ValueError("empty distance set")
    return ConstellationTable(dist[inside], gens[inside], bound)


def neighbor_distances(table: ConstellationTable, d: float) -> tuple[float, float]:
    """Predecessor and successor of ``d``; +-BIG past either end."""
    dist = table.distances
    j = int(np.searchsorted(dist, d))
    if j >= len(dist) or abs(dist[j] - d) > 1e-12:
        if j > 0 and abs(dist[j - 1] - d) <= 1e-12:
            j -= 1
        else:
            raise KeyError(f"{d!r} is not in the distance set")
    d_l = dist[j - 1] if j > 0 else -BIG
    d_u = dist[j + 1] if j + 1 < len(dist) else BIG
    return float(d_l), float(d_u)


# --------------------------------------------------------------------------
# integrals over source cells


def clipped_edges(q: QuantizerSpec):
    lo, hi = q.cell_edges(q.indices)
    return np.maximum(lo, -CELL_REACH), np.minimum(hi, CELL_REACH)


@lru_cache(maxsize=128)
def cell_probabilities(delta: float, k_max: int, rho: float, order: int) -> np.ndarray:
    """``P[S_i in cell k, S_o in cell m]`` as a ``(K, K)`` array."""
    lo, hi = clipped_edges(QuantizerSpec(delta, k_max, 0))
    s, w = gauss_legendre(order).scaled(lo, hi)             # (K, n)
    sn = math.sqrt(1.0 - rho * rho)
    m = rho * s[:, :, None]
    inner = ndtr((hi[None, None, :] - m) / sn) - ndtr((lo[None, None, :] - m) / sn)
    out = np.einsum("kn,knm->km", w * normal_pdf(s), inner)
    out.setflags(write=False)
    return out


@njit(cache=True)
def _window_kernel(b_rel, t_k, t_m, lo_i, hi_i, lo_o, hi_o, light, b_own, g, rho, sigma,
                   x, w, x_light, w_light, out):
    """Cumulative decision integrals for rows of ``(cell pair, boundary)``.

    Row ``j`` of ``out`` receives the integrals over its cell pair of
    ``P[mu + w <= b_rel]`` weighted by ``1``, ``s_i - t_k`` and
    ``s_o - rho s_i``, and of ``E[w; mu + w <= b_rel]``.  The ``s_o`` and ``w``
    integrals are closed form; ``s_i`` uses Gauss-Legendre on three pieces
    split where the noiseless step crosses the ``s_o`` cell edges.  Rows
    flagged ``light`` use the smaller rule ``(x_light, w_light)``.
    """
    sn = math.sqrt(1.0 - rho * rho)
    tau = math.sqrt(g * g * sn * sn + sigma * sigma)
    r = g * sn / tau
    v = sn * sigma / tau
    t1, t2, t3 = bvn_table(r)
    edges = np.empty(4)
    for j in range(b_rel.size):
        lo, hi = lo_i[j], hi_i[j]
        ho, lw = hi_o[j], lo_o[j]
        edges[0] = lo
        edges[3] = hi
        if b_own != 0.0:
            k1 = t_k[j] + (b_rel[j] + g * (t_m[j] - ho)) / b_own
            k2 = t_k[j] + (b_rel[j] + g * (t_m[j] - lw)) / b_own
            edges[1] = min(max(min(k1, k2), lo), hi)
            edges[2] = min(max(max(k1, k2), lo), hi)
        else:
            edges[1] = lo
            edges[2] = lo
        xs, ws = (x_light, w_light) if light[j] else (x, w)
        a0 = a1 = a2 = a3 = 0.0
        for p in range(3):
            half = 0.5 * (edges[p + 1] - edges[p])
            if half <= 0.0:
                continue
            for i in range(xs.size):
                s = edges[p] + half * (xs[i] + 1.0)
                wt = half * ws[i] * pdf_scalar(s)
                m = rho * s
                bp = b_rel[j] - b_own * (s - t_k[j]) + g * t_m[j]
                kk = (bp - g * m) / tau
                h_hi = (ho - m) / sn
                h_lo = (lw - m) / sn
                f0 = (bvn_lower(h_hi, kk, r, t1, t2, t3)
                      - bvn_lower(h_lo, kk, r, t1, t2, t3))
                # int phi_sn(x - m) phi_sigma(bp - g x) dx over the s_o cell
                m_star = (m * sigma * sigma + g * bp * sn * sn) / (tau * tau)
                gprod = pdf_scalar(kk) / tau * (ndtr_scalar((ho - m_star) / v)
                                                - ndtr_scalar((lw - m_star) / v))
                fn = (-sn * (pdf_scalar(h_hi) * ndtr_scalar((bp - g * ho) / sigma)
                             - pdf_scalar(h_lo) * ndtr_scalar((bp - g * lw) / sigma))
                      - sn * sn * g * gprod)
                a0 += wt * f0
                a1 += wt * (s - t_k[j]) * f0
                a2 += wt * fn
                a3 += wt * gprod
        out[0, j] = a0
        out[1, j] = a1
        out[2, j] = a2
        out[3, j] = -sigma * sigma * a3


def _cell_totals(t_k, lo_i, hi_i, lo_o, hi_o, rho, rule):
    """The same four integrals with the decision event replaced by certainty."""
    sn = math.sqrt(1.0 - rho * rho)
    s, w = rule.scaled(lo_i, hi_i)
    w = w * normal_pdf(s)
    col = (slice(None), None)
    m = rho * s
    h_hi = (hi_o[col] - m) / sn
    h_lo = (lo_o[col] - m) / sn
    mass = ndtr(h_hi) - ndtr(h_lo)
    fn = -sn * (normal_pdf(h_hi) - normal_pdf(h_lo))
    return (np.einsum("rj,rj->r", w, mass),
            np.einsum("rj,rj->r", w * (s - t_k[col]), mass),
            np.einsum("rj,rj->r", w, fn),
            np.zeros(len(t_k)))


# --------------------------------------------------------------------------
# joint pmf of (T_i, T_o, T_hat_i, T_hat_o)


@dataclass
class JointPmfTable:
    """Entries ``P[T_i=t_k, T_o=t_m, T_hat_i=t_l, T_hat_o=t_n]`` and companions.

    ``moment1`` integrates ``s_i - t_k`` instead of 1, ``moment_n`` integrates
    the innovation ``s_o - rho s_i`` and ``moment_w`` the channel noise ``w``
    over the same decision event.
    """

    k: np.ndarray
    m: np.ndarray
    l: np.ndarray
    n: np.ndarray
    prob: np.ndarray
    moment1: np.ndarray
    moment_n: np.ndarray
    moment_w: np.ndarray
    delta: float
    cell_prob: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.prob)

    @property
    def total(self) -> float:
        return float(self.prob.sum())

    def cell_marginals(self) -> dict:
        out: dict = {}
        for k, m, p in zip(self.k, self.m, self.prob):
            out[(int(k), int(m))] = out.get((int(k), int(m)), 0.0) + p
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["k", "m", "l", "n", "prob", "moment1"])
            for row in zip(self.k, self.m, self.l, self.n, self.prob, self.moment1):
                wr.writerow([int(row[0]), int(row[1]), int(row[2]), int(row[3]),
                             repr(float(row[4])), repr(float(row[5]))])


def joint_pmf(user: int, params: EncoderParams, ch: ChannelModel, q: QuantizerSpec,
              rho: float, rule: QuadratureRule | None = None,
              const: Constellation | None = None,
              bound: float | None = None) -> JointPmfTable:
    """Joint pmf of source cells and pseudo-ML decisions at receiver ``user``.

    For each cell pair the decision boundaries within ``bound`` of the
    noiseless point are resolved; the first and last decisions take the
    remaining tails, so every cell's entries sum to its probability.
    """
    rule = rule or gauss_legendre()
    const = const or build_constellation(user, params, ch, q)
    bound = distance_bound(user, params, ch, q) if bound is None else bound
    j = other(user)
    c = ch.gain_at(user)
    a_own, a_int = params.alpha(user), c * params.alpha(j)
    b_own, g = params.analog(user), c * params.analog(j)
    mids = const.midpoints
    kidx = q.indices
    t = kidx * q.delta
    lo, hi = clipped_edges(q)

    probs = cell_probabilities(q.delta, q.k_max, rho, rule.order)
    ka, kb = np.nonzero(probs >= CELL_PROB_FLOOR)
    ta, tb = t[ka], t[kb]

    c0 = a_own * ta + a_int * tb
    ja = np.searchsorted(mids, c0 - bound, "left")
    jb = np.searchsorted(mids, c0 + bound, "right")
    nb = jb - ja
    cid = np.repeat(np.arange(len(ka)), nb)
    first = np.concatenate([[0], np.cumsum(nb)[:-1]])
    rel = mids[ja[cid] + np.arange(nb.sum()) - first[cid]] - c0[cid]

    totals = np.array(_cell_totals(ta, lo[ka], hi[ka], lo[kb], hi[kb], rho, rule))
    # exact range of mu over each cell pair; boundaries well outside it see
    # either none or all of the cell
    ends_i = b_own * np.stack([lo[ka] - ta, hi[ka] - ta])
    ends_o = g * np.stack([lo[kb] - tb, hi[kb] - tb])
    reach = SATURATION * ch.sigma_w
    mu_lo = ends_i.min(axis=0) + ends_o.min(axis=0) - reach
    mu_hi = ends_i.max(axis=0) + ends_o.max(axis=0) + reach
    cum = np.zeros((4, len(cid)))
    full = rel >= mu_hi[cid]
    cum[:, full] = totals[:, cid[full]]
    live = np.flatnonzero(~full & (rel > mu_lo[cid]))
    cc = cid[live]
    part = np.empty((4, len(live)))
    light_rule = gauss_legendre(max(LIGHT_CELL_MIN_ORDER, rule.order // 3))
    if light_rule.order > rule.order:
        light_rule = rule
    light = probs[ka, kb] < LIGHT_CELL_PROB
    _window_kernel(rel[live], ta[cc], tb[cc], lo[ka[cc]], hi[ka[cc]], lo[kb[cc]],
                   hi[kb[cc]], light[cc], float(b_own), float(g), float(rho), ch.sigma_w,
                   rule.nodes, rule.weights, light_rule.nodes, light_rule.weights, part)
    cum[:, live] = part

    # entry e of a cell lies between boundary rows e-1 and e (0 and the cell
    # total past either end)
    n_ent = nb + 1
    ecell = np.repeat(np.arange(len(ka)), n_ent)
    epos = np.arange(n_ent.sum()) - np.concatenate([[0], np.cumsum(n_ent)[:-1]])[ecell]
    row = first[ecell] + epos
    padded = np.concatenate([cum, np.zeros((4, 1))], axis=1)
    upper = np.where(epos < nb[ecell], padded[:, np.minimum(row, len(cid))],
                     totals[:, ecell])
    lower = np.where(epos > 0, padded[:, np.maximum(row - 1, 0)], 0.0)
    vals = upper - lower
    point = ja[ecell] + epos
    cell_prob = {(int(kidx[a]), int(kidx[b])): float(p)
                 for a, b, p in zip(ka, kb, totals[0])}
    return JointPmfTable(kidx[ka][ecell], kidx[kb][ecell], const.pairs[point, 0],
                         const.pairs[point, 1], np.maximum(vals[0], 0.0), vals[1],
                         vals[2], vals[3], q.delta, cell_prob)


# --------------------------------------------------------------------------
# moments and the distortion quadratic


@dataclass(frozen=True)
class MomentBundle:
    """Expectations needed to assemble the distortion of one receiver."""

    sigma_r_sq: float
    e_r_t: float            # E[R_i T_i]
    e_r_tc: float           # E[R_i T_o]
    e_r_that: float         # E[R_i T_hat_i]
    e_r_thatc: float        # E[R_i T_hat_o]
    s11: float              # E[(T_i - T_hat_i)^2]
    s12: float              # E[(T_i - T_hat_i)(T_o - T_hat_o)]
    s22: float              # E[(T_o - T_hat_o)^2]
    e1_n: float             # E[(T_i - T_hat_i) N]
    e2_n: float             # E[(T_o - T_hat_o) N]
    e1_w: float             # E[(T_i - T_hat_i) W]
    e2_w: float             # E[(T_o - T_hat_o) W]


def moment_tables(pmf: JointPmfTable, q: QuantizerSpec) -> MomentBundle:
    d = pmf.delta
    e1 = (pmf.k - pmf.l) * d
    e2 = (pmf.m - pmf.n) * d
    qm = quantizer_moments(q)
    return MomentBundle(
        sigma_r_sq=qm.sigma_r_sq,
        e_r_t=qm.e_r_t,
        e_r_tc=float(np.sum(pmf.m * d * pmf.moment1)),
        e_r_that=float(np.sum(pmf.l * d * pmf.moment1)),
        e_r_thatc=float(np.sum(pmf.n * d * pmf.moment1)),
        s11=float(np.sum(e1 * e1 * pmf.prob)),
        s12=float(np.sum(e1 * e2 * pmf.prob)),
        s22=float(np.sum(e2 * e2 * pmf.prob)),
        e1_n=float(np.sum(e1 * pmf.moment_n)),
        e2_n=float(np.sum(e2 * pmf.moment_n)),
        e1_w=float(np.sum(e1 * pmf.moment_w)),
        e2_w=float(np.sum(e2 * pmf.moment_w)),
    )


def _poly(*coeffs):
    """Coefficients ``(c0, c1, c2)`` of a polynomial in gamma."""
    out = np.zeros(3)
    out[:len(coeffs)] = coeffs
    return out


def distortion_polynomials(user: int, params: EncoderParams, ch: ChannelModel,
                           rho: float, mb: MomentBundle) -> dict[str, np.ndarray]:
    """Every distortion term as ``(c0, c1, c2)`` coefficients in gamma.

    The six main terms are the expansion of
    ``E[(lambda + (1 - gamma g) R - gamma c beta_o N - gamma W)^2]`` that keeps
    the ``lambda R`` cross products; the two corrections are the ``lambda N``
    and ``lambda W`` cross products, which vanish only when the digital pair is
    decoded without error.
    """
    j = other(user)
    c = ch.gain_at(user)
    own, cross = residual_gains(user, params, ch, rho)
    g = params.analog(user) + c * params.analog(j) * rho
    cb = c * params.analog(j)
    one_minus_own = _poly(1.0, -own)         # 1 - gamma * own
    one_minus_g = _poly(1.0, -g)             # 1 - gamma * g
    cross_g = _poly(0.0, cross)              # gamma * cross
    mul = np.polynomial.polynomial.polymul

    def trunc(p):
        return np.asarray(p)[:3] if len(p) >= 3 else _poly(*p)

    # lambda = one_minus_own * e1 - cross_g * e2
    lam_sq = (trunc(mul(one_minus_own, one_minus_own)) * mb.s11
              - 2.0 * trunc(mul(one_minus_own, cross_g)) * mb.s12
              + trunc(mul(cross_g, cross_g)) * mb.s22)
    terms = {
        "lambda_sq": lam_sq,
        "quant_error": trunc(mul(one_minus_g, one_minus_g)) * mb.sigma_r_sq,
        "interference_noise": _poly(0.0, 0.0, cb * cb * (1.0 - rho * rho)),
        "channel_noise": _poly(0.0, 0.0, ch.sigma_w_sq),
        "cross_own": 2.0 * trunc(mul(one_minus_g, one_minus_own)) * (mb.e_r_t - mb.e_r_that),
        "cross_other": -2.0 * trunc(mul(one_minus_g, cross_g)) * (mb.e_r_tc - mb.e_r_thatc),
    }
    lam_n = one_minus_own * mb.e1_n - cross_g * mb.e2_n
    lam_w = one_minus_own * mb.e1_w - cross_g * mb.e2_w
    terms["lambda_source_noise"] = -2.0 * cb * trunc(mul(_poly(0.0, 1.0), lam_n))
    terms["lambda_channel_noise"] = -2.0 * trunc(mul(_poly(0.0, 1.0), lam_w))
    return terms


class NonConvexDistortionError(ArithmeticError):
    pass


@dataclass(frozen=True)
class UserDistortion:
    d: float
    gamma: float
    components: dict
    quadratic: np.ndarray   # (c0, c1, c2) of D_i(gamma)


def _names(corrections: bool):
    return COMPONENT_NAMES + (CORRECTION_NAMES if corrections else ())


def user_distortion(polys: dict, gamma: float | None = None,
                    corrections: bool = True) -> UserDistortion:
    names = _names(corrections)
    total = sum(polys[nm] for nm in names)
    if gamma is None:
        if total[2] <= 0:
            raise NonConvexDistortionError(
                f"distortion is not convex in gamma (curvature {total[2]})")
        gamma = -total[1] / (2.0 * total[2])
    powers = np.array([1.0, gamma, gamma * gamma])
    comps = {nm: float(polys[nm] @ powers) for nm in names}
    return UserDistortion(float(sum(comps.values())), float(gamma), comps, total)


def analytic_distortion(user: int, params: EncoderParams, ch: ChannelModel,
                        q: QuantizerSpec, rho: float,
                        rule: QuadratureRule | None = None,
                        gamma: float | None = None, corrections: bool = True,
                        pmf: JointPmfTable | None = None) -> UserDistortion:
    """MSE of receiver ``user`` at ``gamma`` (or at the minimizing gamma).

    With ``corrections=False`` only the six main terms are summed.
    """
    pmf = pmf or joint_pmf(user, params, ch, q, rho, rule)
    polys = distortion_polynomials(user, params, ch, rho, moment_tables(pmf, q))
    return user_distortion(polys, gamma, corrections)


@dataclass(frozen=True)
class DistortionReport:
    d1: float
    d2: float
    d_avg: float
    sdr_db: float
    gamma_1: float
    gamma_2: float
    components: tuple = ()
    stderr: float | None = None

    @classmethod
    def from_users(cls, u1: float, u2: float, gamma_1: float = float("nan"),
                   gamma_2: float = float("nan"), components: tuple = (),
                   stderr: float | None = None) -> "DistortionReport":
        d_avg = (u1 + u2) / 2.0
        sdr = -10.0 * math.log10(d_avg) if d_avg > 0 else float("inf")
        return cls(u1, u2, d_avg, sdr, gamma_1, gamma_2, components, stderr)


def is_symmetric(params: EncoderParams, ch: ChannelModel) -> bool:
    return (params.delta_coeff_1 == params.delta_coeff_2
            and params.beta_1 == params.beta_2 and ch.c1 == ch.c2)


def scheme_b_report(params: EncoderParams, ch: ChannelModel, q: QuantizerSpec,
                    rho: float, rule: QuadratureRule | None = None,
                    gammas: tuple[float | None, float | None] = (None, None),
                    corrections: bool = True) -> DistortionReport:
    """Analytic report for both receivers; a symmetric setup is evaluated once."""
    u1 = analytic_distortion(1, params, ch, q, rho, rule, gammas[0], corrections)
    if is_symmetric(params, ch) and gammas[0] == gammas[1]:
        u2 = u1
    else:
        u2 = analytic_distortion(2, params, ch, q, rho, rule, gammas[1], corrections)
    return DistortionReport.from_users(u1.d, u2.d, u1.gamma, u2.gamma,
                                       (u1.components, u2.components))
