"""Grid search over symmetric encoder parameters, and the uncoded baseline.

Both users share ``(delta, digital_gain)``; ``beta`` follows from the
per-user power budget, so every evaluated point meets ``P_1 + P_2 = 2P``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analytic import DistortionReport, scheme_b_report
from .codec import EncoderParams, InfeasiblePowerError, solve_beta_for_power
from .core import ChannelModel, QuantizerSpec, noise_variance, quantizer_moments
from .numerics import QuadratureRule, gauss_legendre

DEFAULT_DELTA_RANGE = (0.3, 3.0)
DEFAULT_DELTA_POINTS = 28
DEFAULT_GAIN_POINTS = 31
#: Each refinement pass divides the grid spacing by this factor.
REFINE_FACTOR = 4


class NoFeasiblePointError(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchSpace:
    """Candidate steps and digital gains.

    Parameters
    ----------
    delta_grid, digital_gain_grid
        Coarse grids; the step grid is treated as log-spaced when refining.
    power
        Per-user power ``P``.
    refinement
        Number of zoom-in passes around the incumbent.
    """

    delta_grid: tuple
    digital_gain_grid: tuple
    power: float = 1.0
    refinement: int = 2

    def __post_init__(self):
        object.__setattr__(self, "delta_grid", tuple(float(v) for v in self.delta_grid))
        object.__setattr__(self, "digital_gain_grid",
                           tuple(float(v) for v in self.digital_gain_grid))
        if not self.delta_grid or not self.digital_gain_grid:
            raise ValueError("search grids must be nonempty")
        if min(self.delta_grid) <= 0:
            raise ValueError("quantizer steps must be > 0")
        if min(self.digital_gain_grid) < 0:
            raise ValueError("digital gains must be >= 0")
        if not self.power > 0:
            raise ValueError(f"power must be > 0, got {self.power}")
        if self.refinement < 0:
            raise ValueError("refinement must be >= 0")

    @classmethod
    def default(cls, power: float = 1.0, refinement: int = 2,
                delta_points: int = DEFAULT_DELTA_POINTS,
                gain_points: int = DEFAULT_GAIN_POINTS) -> "SearchSpace":
        """Log-spaced steps over [0.3, 3] and digital gains over [0, 3 sqrt(P)]."""
        if delta_points < 1 or gain_points < 1:
            raise ValueError("grid sizes must be >= 1")
        deltas = np.geomspace(*DEFAULT_DELTA_RANGE, delta_points)
        gains = np.linspace(0.0, 3.0 * math.sqrt(power), gain_points)
        return cls(tuple(deltas), tuple(gains), power, refinement)


@dataclass(frozen=True)
class Candidate:
    params: EncoderParams
    quantizer: QuantizerSpec
    d_avg: float


@dataclass
class OptimizationResult:
    best_params: EncoderParams
    best_quantizer: QuantizerSpec
    best_report: DistortionReport
    trace: list = field(default_factory=list)

    @property
    def gammas(self) -> tuple[float, float]:
        return self.best_report.gamma_1, self.best_report.gamma_2


def _spacing(grid, value, log):
    """Distance from ``value`` to its nearest grid neighbour (log units if ``log``)."""
    g = np.log(grid) if log else np.asarray(grid)
    v = math.log(value) if log else value
    gaps = np.abs(g - v)
    gaps = gaps[gaps > 0]
    return float(gaps.min()) if len(gaps) else 0.0


def _zoom(center, step, lo, hi, log):
    """``2 * REFINE_FACTOR + 1`` points spaced ``step / REFINE_FACTOR`` around center."""
    offs = np.arange(-REFINE_FACTOR, REFINE_FACTOR + 1) * (step / REFINE_FACTOR)
    if log:
        pts = np.exp(math.log(center) + offs)
    else:
        pts = center + offs
    pts = pts[(pts >= lo - 1e-15) & (pts <= hi + 1e-15)]
    return tuple(float(v) for v in pts)


def evaluate_point(delta: float, digital_gain: float, rho: float, ch: ChannelModel,
                   power: float, rule: QuadratureRule | None = None):
    """Analytic report at one grid point; ``None`` when the power budget fails."""
    q = QuantizerSpec.for_step(delta, rho)
    try:
        beta = solve_beta_for_power(power, digital_gain, quantizer_moments(q))
    except InfeasiblePowerError:
        return None
    params = EncoderParams.symmetric(digital_gain, beta)
    return params, q, scheme_b_report(params, ch, q, rho, rule)


def optimize_scheme_b(space: SearchSpace, rho: float, ch: ChannelModel,
                      rule: QuadratureRule | None = None) -> OptimizationResult:
    """Minimize the analytic average distortion over ``space``.

    The coarse grid is scanned first.  Each refinement pass rescans a grid
    centred on the incumbent whose spacing is a quarter of the previous one,
    reaching one previous spacing either side.  Strict improvement is required
    to replace the incumbent, so ties keep the earliest point.
    """
    rule = rule or gauss_legendre()
    trace: list[Candidate] = []
    seen: dict = {}
    best = None

    def scan(deltas, gains):
        nonlocal best
        for dl in deltas:
            for dg in gains:
                key = (dl, dg)
                if key in seen:
                    continue
                out = evaluate_point(dl, dg, rho, ch, space.power, rule)
                seen[key] = out
                if out is None:
                    continue
                params, q, rep = out
                trace.append(Candidate(params, q, rep.d_avg))
                if best is None or rep.d_avg < best[2].d_avg:
                    best = out

    deltas, gains = space.delta_grid, space.digital_gain_grid
    scan(deltas, gains)
    if best is None:
        raise NoFeasiblePointError("no grid point satisfies the power constraint")
    d_lo, d_hi = min(deltas), max(deltas)
    g_lo, g_hi = min(gains), max(gains)
    d_step = _spacing(deltas, best[1].delta, log=True)
    g_step = _spacing(gains, best[0].delta_coeff_1, log=False)
    for _ in range(space.refinement):
        if d_step == 0 and g_step == 0:
            break
        scan(_zoom(best[1].delta, d_step, d_lo, d_hi, log=True) if d_step else (best[1].delta,),
             _zoom(best[0].delta_coeff_1, g_step, g_lo, g_hi, log=False) if g_step
             else (best[0].delta_coeff_1,))
        d_step /= REFINE_FACTOR
        g_step /= REFINE_FACTOR
    params, q, rep = best
    return OptimizationResult(params, q, rep, trace)


def uncoded_distortion(rho: float, ch: ChannelModel, p: float) -> tuple[float, float]:
    """Scale-and-transmit with a scalar LMMSE receiver; returns ``(d_avg, sdr_db)``."""
    if not p > 0:
        raise ValueError(f"power must be > 0, got {p}")
    ds = []
    for user in (1, 2):
        c = ch.gain_at(user)
        ds.append(1.0 - p * (1.0 + c * rho) ** 2
                  / (p * (1.0 + c * c + 2.0 * c * rho) + ch.sigma_w_sq))
    d_avg = 0.5 * (ds[0] + ds[1])
    return d_avg, -10.0 * math.log10(d_avg)


def uncoded_report(rho: float, ch: ChannelModel, p: float) -> DistortionReport:
    ds, gammas = [], []
    for user in (1, 2):
        c = ch.gain_at(user)
        var_y = p * (1.0 + c * c + 2.0 * c * rho) + ch.sigma_w_sq
        cov = math.sqrt(p) * (1.0 + c * rho)
        ds.append(1.0 - cov * cov / var_y)
        gammas.append(cov / var_y)
    return DistortionReport.from_users(ds[0], ds[1], gammas[0], gammas[1])


def find_csnr_threshold(rho: float, c: float, csnr_grid, space: SearchSpace,
                        rule: QuadratureRule | None = None):
    """Smallest grid CSNR where optimized Scheme B beats uncoded, else ``None``."""
    for csnr in csnr_grid:
        ch = ChannelModel(c, c, noise_variance(space.power, csnr))
        res = optimize_scheme_b(space, rho, ch, rule)
        if res.best_report.d_avg < uncoded_distortion(rho, ch, space.power)[0]:
            return csnr
    return None
