"""Source, channel and quantizer models.

The source is a pair of unit-variance Gaussians with correlation ``rho``;
each transmitter quantizes its own sample with a uniform midtread quantizer
``t_k = k * delta``.  The channel seen by receiver ``i`` is

    y_i = x_i + c_other * x_other + w_i,   w_i ~ N(0, sigma_w_sq).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

#: Half-width (in source standard deviations) that the quantizer must cover.
OVERLOAD_RADIUS = 6.0


@dataclass(frozen=True)
class SourceModel:
    """Bivariate standard normal source with correlation ``rho``."""

    rho: float
    sigma_n_sq: float = field(init=False)

    def __post_init__(self):
        if not abs(self.rho) < 1.0:
            raise ValueError(f"|rho| must be < 1, got {self.rho}")
        object.__setattr__(self, "sigma_n_sq", 1.0 - self.rho * self.rho)

    @property
    def sigma_n(self) -> float:
        return math.sqrt(self.sigma_n_sq)


@dataclass(frozen=True)
class ChannelModel:
    """Two-user Gaussian interference channel.

    ``c1`` scales user 1's signal at receiver 2 and ``c2`` scales user 2's
    signal at receiver 1, so receiver ``i`` uses :meth:`gain_at`.
    """

    c1: float
    c2: float
    sigma_w_sq: float

    def __post_init__(self):
        if not self.sigma_w_sq > 0:
            raise ValueError(f"sigma_w_sq must be > 0, got {self.sigma_w_sq}")
        if self.c1 < 0 or self.c2 < 0:
            raise ValueError("interference gains must be non-negative")

    @classmethod
    def symmetric(cls, c: float, power: float, csnr_db: float) -> "ChannelModel":
        """Symmetric channel with noise set from CSNR = power / sigma_w_sq."""
        return cls(c, c, noise_variance(power, csnr_db))

    @property
    def sigma_w(self) -> float:
        return math.sqrt(self.sigma_w_sq)

    def gain_at(self, user: int) -> float:
        """Gain applied to the interfering user's signal at receiver ``user``."""
        check_user(user)
        return self.c2 if user == 1 else self.c1


def check_user(user: int) -> None:
    if user not in (1, 2):
        raise ValueError(f"user must be 1 or 2, got {user!r}")


def noise_variance(power: float, csnr_db: float) -> float:
    return power * 10.0 ** (-csnr_db / 10.0)


def index_bound(delta: float) -> int:
    """Smallest ``k_max`` with ``(k_max + 1/2) * delta >= 6``."""
    if not delta > 0:
        raise ValueError(f"quantizer step must be > 0, got {delta}")
    # guard against 6/delta - 1/2 landing a hair above an integer
    return max(0, math.ceil(OVERLOAD_RADIUS / delta - 0.5 - 1e-12))


def max_quantizer_distance(rho: float, delta: float, k_max: int) -> int:
    """Neighbour radius ``M`` bounding ``|T_i - T_other| <= M * delta``.

    Uses the worst case over the outermost index: the other source lies
    within three conditional standard deviations of ``rho * s_i``.
    """
    if not abs(rho) < 1.0:
        raise ValueError(f"|rho| must be < 1, got {rho}")
    edge = (k_max - 0.5) * delta
    spread = 3.0 * math.sqrt(1.0 - rho * rho) + (edge - rho * edge)
    return max(0, math.ceil(spread / delta - 1e-12))


@dataclass(frozen=True)
class QuantizerSpec:
    delta: float
    k_max: int
    m: int

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"quantizer step must be > 0, got {self.delta}")
        if self.k_max < 0 or self.m < 0:
            raise ValueError("k_max and m must be non-negative")

    @classmethod
    def for_step(cls, delta: float, rho: float) -> "QuantizerSpec":
        """Quantizer with the overload rule for ``k_max`` and ``M`` from ``rho``."""
        k_max = index_bound(delta)
        return cls(delta, k_max, max_quantizer_distance(rho, delta, k_max))

    @property
    def indices(self) -> np.ndarray:
        return np.arange(-self.k_max, self.k_max + 1)

    @property
    def levels(self) -> np.ndarray:
        return self.indices * self.delta

    def cell_edges(self, k):
        """Lower/upper decision levels of cell ``k``; outer cells are unbounded."""
        k = np.asarray(k)
        lo = np.where(k == -self.k_max, -np.inf, (k - 0.5) * self.delta)
        hi = np.where(k == self.k_max, np.inf, (k + 0.5) * self.delta)
        return lo, hi


def quantize_index(s, q: QuantizerSpec):
    k = np.floor(np.asarray(s, dtype=float) / q.delta + 0.5)
    return np.clip(k, -q.k_max, q.k_max).astype(np.int64)


def quantize(s, q: QuantizerSpec):
    """Midtread quantization with clamping to ``[-k_max, k_max]``."""
    out = quantize_index(s, q) * q.delta
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class QuantizerMoments:
    e_t_s: float
    e_t_sq: float
    sigma_r_sq: float
    e_r_t: float


def cell_masses(q: QuantizerSpec) -> np.ndarray:
    """P[T = t_k] for every level, with the outer cells running to infinity."""
    lo, hi = q.cell_edges(q.indices)
    return 0.5 * (erf(hi / math.sqrt(2.0)) - erf(lo / math.sqrt(2.0)))


def quantizer_moments(q: QuantizerSpec) -> QuantizerMoments:
    """E[T S], E[T^2], E[R^2] and E[R T] for a standard normal input.

    E[T S] uses the per-cell identity int_a^b s phi(s) ds = phi(a) - phi(b);
    E[T^2] weights each level by its cell mass.
    """
    t = q.levels
    lo, hi = q.cell_edges(q.indices)
    with np.errstate(over="ignore"):
        phi_lo = np.exp(-0.5 * lo * lo) / math.sqrt(2.0 * math.pi)
        phi_hi = np.exp(-0.5 * hi * hi) / math.sqrt(2.0 * math.pi)
    e_t_s = float(np.sum(t * (phi_lo - phi_hi)))
    e_t_sq = float(np.sum(t * t * cell_masses(q)))
    sigma_r_sq = 1.0 - 2.0 * e_t_s + e_t_sq
    return QuantizerMoments(e_t_s, e_t_sq, sigma_r_sq, e_t_s - e_t_sq)


def sample_source_pairs(model: SourceModel, rng: np.random.Generator, size: int):
    """Draw ``size`` pairs as ``s2 = rho * s1 + sqrt(1 - rho^2) * n``."""
    s1 = rng.standard_normal(size)
    n = rng.standard_normal(size)
    return s1, model.rho * s1 + model.sigma_n * n


def sample_source_pair(model: SourceModel, rng: np.random.Generator):
    s1, s2 = sample_source_pairs(model, rng, 1)
    return float(s1[0]), float(s2[0])


def channel_output(x_own, x_other, gain: float, sigma_w_sq: float,
                   rng: np.random.Generator | None = None, noise=None):
    """Receiver output ``x_own + gain * x_other + w``.

    ``noise`` may be injected directly; otherwise it is drawn from ``rng``.
    """
    x_own = np.asarray(x_own, dtype=float)
    if noise is None:
        if rng is None:
            raise ValueError("either rng or noise must be given")
        noise = math.sqrt(sigma_w_sq) * rng.standard_normal(np.shape(x_own))
    y = x_own + gain * np.asarray(x_other, dtype=float) + noise
    return float(y) if np.ndim(y) == 0 else y
