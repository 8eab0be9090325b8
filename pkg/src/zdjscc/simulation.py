"""Monte Carlo engine, experiment configuration and CSNR / interference sweeps.

Randomness comes from Philox streams keyed by ``(seed, point key, block,
stream)``.  Trials are cut into fixed-size blocks and the per-block sums are
reduced in block order, so results do not depend on how many workers run.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .analytic import DistortionReport, joint_pmf, scheme_b_report
from .codec import (
    EncoderParams,
    MapDecoder,
    build_constellation,
    decode_pseudo_ml_indices,
    encode,
    reconstruct_scheme_b,
)
from .core import ChannelModel, QuantizerSpec, noise_variance, quantize_index, quantizer_moments
from .numerics import gauss_legendre
from .optimizer import (
    DEFAULT_DELTA_POINTS,
    DEFAULT_GAIN_POINTS,
    OptimizationResult,
    SearchSpace,
    optimize_scheme_b,
    uncoded_report,
)

SCHEMES = ("uncoded", "scheme_a", "scheme_b", "scheme_b_analytic")
MC_SCHEMES = ("uncoded", "scheme_a", "scheme_b")
CSV_HEADER = ("scheme", "rho", "c", "csnr_db", "sdr_db", "d_avg", "d1", "d2", "delta",
              "digital_gain", "beta", "gamma1", "gamma2", "trials", "stderr_d")
DEFAULT_TRIALS = {"uncoded": 1_000_000, "scheme_b": 1_000_000, "scheme_a": 100_000}
#: Trials per RNG block; part of the reproducibility contract.
BLOCK_SIZE = 1 << 16
WORKERS_ENV = "ZDJSCC_WORKERS"

_STREAM_SOURCE, _STREAM_NOISE_1, _STREAM_NOISE_2 = 0, 1, 2


class ConfigError(ValueError):
    """Malformed experiment configuration."""


# --------------------------------------------------------------------------
# random streams


def block_rng(seed: int, key: tuple, block: int, stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=tuple(key) + (block, stream))
    return np.random.Generator(np.random.Philox(ss))


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return n


# --------------------------------------------------------------------------
# Monte Carlo


@dataclass(frozen=True)
class Design:
    """Everything a receiver needs: encoder, quantizer and Scheme B gammas."""

    params: EncoderParams
    quantizer: QuantizerSpec
    gammas: tuple[float, float]

    @classmethod
    def from_result(cls, res: OptimizationResult) -> "Design":
        return cls(res.best_params, res.best_quantizer, res.gammas)

    @classmethod
    def uncoded(cls, power: float = 1.0) -> "Design":
        # a single-level quantizer makes the digital part vanish
        return cls(EncoderParams.symmetric(0.0, math.sqrt(power)),
                   QuantizerSpec(1e6, 0, 0), (float("nan"), float("nan")))


class _Trial:
    """Per-scheme state shared by all blocks of one Monte Carlo run."""

    def __init__(self, scheme, rho, ch, design, power, order):
        self.scheme, self.rho, self.ch, self.design = scheme, rho, ch, design
        if scheme == "uncoded":
            rep = uncoded_report(rho, ch, power)
            self.gammas = (rep.gamma_1, rep.gamma_2)
            self.amp = math.sqrt(power)
        elif scheme == "scheme_b":
            self.consts = tuple(build_constellation(u, design.params, ch, design.quantizer)
                                for u in (1, 2))
        elif scheme == "scheme_a":
            moments = quantizer_moments(design.quantizer)
            rule = gauss_legendre(order)
            self.decoders = [MapDecoder(1, design.params, ch, design.quantizer, rho,
                                        moments, rule)]
            symmetric = (ch.c1 == ch.c2 and design.params.delta_coeff_1
                         == design.params.delta_coeff_2
                         and design.params.beta_1 == design.params.beta_2)
            self.decoders.append(self.decoders[0] if symmetric else
                                 MapDecoder(2, design.params, ch, design.quantizer, rho,
                                            moments, rule))
        else:
            raise ValueError(f"no Monte Carlo for scheme {scheme!r}")

    def estimates(self, s1, s2, w1, w2):
        ch = self.ch
        if self.scheme == "uncoded":
            x1, x2 = self.amp * s1, self.amp * s2
            y = (x1 + ch.c2 * x2 + w1, x2 + ch.c1 * x1 + w2)
            return self.gammas[0] * y[0], self.gammas[1] * y[1]
        p, q = self.design.params, self.design.quantizer
        x1, x2 = encode(s1, 1, p, q), encode(s2, 2, p, q)
        y = (x1 + ch.c2 * x2 + w1, x2 + ch.c1 * x1 + w2)
        out = []
        for user in (1, 2):
            if self.scheme == "scheme_b":
                k, kc = decode_pseudo_ml_indices(y[user - 1], self.consts[user - 1])
                out.append(reconstruct_scheme_b(y[user - 1], k * q.delta, kc * q.delta,
                                                self.design.gammas[user - 1], user, p,
                                                ch, self.rho))
            else:
                out.append(self.decoders[user - 1].decode(y[user - 1])[2])
        return out[0], out[1]


_WORKER_TRIAL: _Trial | None = None


def _init_worker(trial):
    global _WORKER_TRIAL
    _WORKER_TRIAL = trial


def _run_block(args, trial=None):
    seed, key, block, size = args
    trial = trial or _WORKER_TRIAL
    src = block_rng(seed, key, block, _STREAM_SOURCE)
    s1 = src.standard_normal(size)
    s2 = trial.rho * s1 + math.sqrt(1.0 - trial.rho ** 2) * src.standard_normal(size)
    sw = trial.ch.sigma_w
    w1 = sw * block_rng(seed, key, block, _STREAM_NOISE_1).standard_normal(size)
    w2 = sw * block_rng(seed, key, block, _STREAM_NOISE_2).standard_normal(size)
    e1, e2 = trial.estimates(s1, s2, w1, w2)
    e1 = (s1 - e1) ** 2
    e2 = (s2 - e2) ** 2
    e = 0.5 * (e1 + e2)
    return np.array([e1.sum(), e2.sum(), e.sum(), (e * e).sum()])


def run_monte_carlo(scheme: str, rho: float, ch: ChannelModel, trials: int, seed: int,
                    design: Design | None = None, power: float = 1.0, order: int = 24,
                    key: tuple = (), workers: int | None = None) -> DistortionReport:
    """Empirical per-user MSE over ``trials`` source pairs.

    ``key`` separates the random streams of different experiment points that
    share one seed.  ``stderr`` on the report is the standard error of the
    average distortion.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if scheme != "uncoded" and design is None:
        raise ValueError(f"{scheme} needs an encoder design")
    trial = _Trial(scheme, rho, ch, design, power, order)
    n_blocks = -(-trials // BLOCK_SIZE)
    jobs = [(seed, tuple(key), b, min(BLOCK_SIZE, trials - b * BLOCK_SIZE))
            for b in range(n_blocks)]
    workers = min(workers or worker_count(), n_blocks)
    if workers > 1:
        with ProcessPoolExecutor(workers, initializer=_init_worker,
                                 initargs=(trial,)) as pool:
            parts = list(pool.map(_run_block, jobs))
    else:
        parts = [_run_block(job, trial) for job in jobs]
    tot = np.zeros(4)
    for part in parts:          # fixed reduction order
        tot += part
    d1, d2 = tot[0] / trials, tot[1] / trials
    mean = tot[2] / trials
    var = max(tot[3] / trials - mean * mean, 0.0)
    stderr = math.sqrt(var / (trials - 1)) if trials > 1 else float("nan")
    g = design.gammas if scheme == "scheme_b" else trial.gammas if scheme == "uncoded" \
        else (float("nan"), float("nan"))
    return DistortionReport.from_users(d1, d2, g[0], g[1], stderr=stderr)


def empirical_joint_counts(user: int, params: EncoderParams, ch: ChannelModel,
                           q: QuantizerSpec, rho: float, trials: int, seed: int,
                           key: tuple = ()) -> dict:
    """Counts of ``(k, m, l, n)`` under pseudo-ML decoding at receiver ``user``."""
    const = build_constellation(user, params, ch, q)
    counts: dict = {}
    for b in range(-(-trials // BLOCK_SIZE)):
        size = min(BLOCK_SIZE, trials - b * BLOCK_SIZE)
        src = block_rng(seed, key, b, _STREAM_SOURCE)
        s1 = src.standard_normal(size)
        s2 = rho * s1 + math.sqrt(1.0 - rho * rho) * src.standard_normal(size)
        w = ch.sigma_w * block_rng(seed, key, b, user).standard_normal(size)
        own, oth = (s1, s2) if user == 1 else (s2, s1)
        j = 3 - user
        y = encode(own, user, params, q) + ch.gain_at(user) * encode(oth, j, params, q) + w
        l, n = decode_pseudo_ml_indices(y, const)
        rows = np.column_stack([quantize_index(own, q), quantize_index(oth, q), l, n])
        uniq, cnt = np.unique(rows, axis=0, return_counts=True)
        for r, c in zip(map(tuple, uniq.tolist()), cnt.tolist()):
            counts[r] = counts.get(r, 0) + c
    return counts


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a grid of ``(c, csnr)`` points and the schemes to run.

    ``trials`` of ``None`` means the per-scheme default.
    """

    schemes: tuple = ("scheme_b_analytic", "uncoded")
    rho: float = 0.9
    c_list: tuple = (2.0,)
    power_p: float = 1.0
    csnr_db_list: tuple = tuple(float(v) for v in range(0, 41, 2))
    trials: int | None = None
    scheme_a_trials: int | None = None
    seed: int = 0
    quadrature_order: int = 24
    refinement: int = 2
    delta_points: int = DEFAULT_DELTA_POINTS
    gain_points: int = DEFAULT_GAIN_POINTS
    uncoded_method: str = "closed_form"
    output_path: str | None = None

    def __post_init__(self):
        for s in self.schemes:
            if s not in SCHEMES:
                raise ConfigError(f"unknown scheme {s!r}")
        if not self.schemes:
            raise ConfigError("at least one scheme is required")
        if not abs(self.rho) < 1:
            raise ConfigError(f"|rho| must be < 1, got {self.rho}")
        if not self.csnr_db_list or not self.c_list:
            raise ConfigError("csnr_db and c lists must be nonempty")
        if min(self.c_list) < 0:
            raise ConfigError("interference gains must be >= 0")
        if not self.power_p > 0:
            raise ConfigError("power must be > 0")
        for name in ("trials", "scheme_a_trials"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must fit in 64 unsigned bits")
        if self.quadrature_order < 1:
            raise ConfigError("quadrature_order must be >= 1")
        if self.refinement < 0:
            raise ConfigError("refinement must be >= 0")
        if self.delta_points < 1 or self.gain_points < 1:
            raise ConfigError("delta_points and gain_points must be >= 1")
        if self.uncoded_method not in ("closed_form", "monte_carlo"):
            raise ConfigError("uncoded_method must be closed_form or monte_carlo")

    def trials_for(self, scheme: str) -> int:
        if scheme == "scheme_a" and self.scheme_a_trials is not None:
            return self.scheme_a_trials
        return self.trials if self.trials is not None else DEFAULT_TRIALS[scheme]

    def search_space(self) -> SearchSpace:
        return SearchSpace.default(self.power_p, self.refinement, self.delta_points,
                                   self.gain_points)


def _floats(v):
    return tuple(float(x) for x in v.split(",") if x.strip())


_KEYS = {
    "scheme": ("schemes", lambda v: tuple(x.strip() for x in v.split(",") if x.strip())),
    "rho": ("rho", float),
    "c": ("c_list", _floats),
    "power": ("power_p", float),
    "csnr_db": ("csnr_db_list", _floats),
    "trials": ("trials", int),
    "scheme_a_trials": ("scheme_a_trials", int),
    "seed": ("seed", int),
    "quadrature_order": ("quadrature_order", int),
    "refinement": ("refinement", int),
    "delta_points": ("delta_points", int),
    "gain_points": ("gain_points", int),
    "uncoded_method": ("uncoded_method", str),
    "output": ("output_path", str),
}


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment, lists use commas."""
    values: dict = {}
    lines: dict = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{no}: expected 'key = value', got {raw.strip()!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"{source}:{no}: unknown key {key!r}")
        if key in lines:
            raise ConfigError(f"{source}:{no}: duplicate key {key!r} "
                              f"(first set on line {lines[key]})")
        field_name, conv = _KEYS[key]
        try:
            values[field_name] = conv(val)
        except ValueError:
            raise ConfigError(f"{source}:{no}: bad value for {key!r}: {val!r}") from None
        lines[key] = no
    try:
        return ExperimentConfig(**values)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    return parse_config(text, str(path))


# --------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepRow:
    scheme: str
    rho: float
    c: float
    csnr_db: float
    sdr_db: float
    d_avg: float
    d1: float
    d2: float
    delta: float
    digital_gain: float
    beta: float
    gamma1: float
    gamma2: float
    trials: int
    stderr_d: float

    def cells(self) -> list[str]:
        out = []
        for name in CSV_HEADER:
            v = getattr(self, name)
            if isinstance(v, str):
                out.append(v)
            elif isinstance(v, (int, np.integer)) and not isinstance(v, bool):
                out.append(str(int(v)))
            else:
                out.append(format(float(v), ".17g"))
        return out


def _row(scheme, cfg, c, csnr, rep: DistortionReport, design: Design | None, trials):
    nan = float("nan")
    if design is None:
        delta, gain, beta = nan, 0.0, math.sqrt(cfg.power_p)
    else:
        delta = design.quantizer.delta
        gain, beta = design.params.delta_coeff_1, design.params.beta_1
    stderr = rep.stderr if rep.stderr is not None else 0.0
    return SweepRow(scheme, cfg.rho, c, csnr, rep.sdr_db, rep.d_avg, rep.d1, rep.d2,
                    delta, gain, beta, rep.gamma_1, rep.gamma_2, trials, stderr)


@dataclass
class SweepResult:
    rows: list = field(default_factory=list)
    designs: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(CSV_HEADER)
        for row in self.rows:
            wr.writerow(row.cells())
        return buf.getvalue()


def run_sweep(cfg: ExperimentConfig, progress=None) -> SweepResult:
    """Rows for every ``(c, csnr, scheme)``; parameters are re-optimized per point.

    Scheme A reuses the Scheme B optimum.  ``progress`` is called with each row.
    """
    rule = gauss_legendre(cfg.quadrature_order)
    out = SweepResult()
    needs_design = any(s != "uncoded" for s in cfg.schemes)
    for ci, c in enumerate(cfg.c_list):
        for pi, csnr in enumerate(cfg.csnr_db_list):
            ch = ChannelModel(c, c, noise_variance(cfg.power_p, csnr))
            design = None
            if needs_design:
                res = optimize_scheme_b(cfg.search_space(), cfg.rho, ch, rule)
                design = Design.from_result(res)
                out.designs[(c, csnr)] = (design, res.best_report)
            for scheme in cfg.schemes:
                key = (ci, pi, SCHEMES.index(scheme))
                if scheme == "scheme_b_analytic":
                    rep, trials, d = out.designs[(c, csnr)][1], 0, design
                elif scheme == "uncoded" and cfg.uncoded_method == "closed_form":
                    rep, trials, d = uncoded_report(cfg.rho, ch, cfg.power_p), 0, None
                else:
                    trials = cfg.trials_for(scheme)
                    d = None if scheme == "uncoded" else design
                    rep = run_monte_carlo(scheme, cfg.rho, ch, trials, cfg.seed, d,
                                          cfg.power_p, cfg.quadrature_order, key)
                row = _row(scheme, cfg, c, csnr, rep, d, trials)
                out.rows.append(row)
                if progress:
                    progress(row)
    return out


def write_csv(result: SweepResult, path) -> None:
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(result.to_csv())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    """Copy of ``cfg`` with the non-``None`` keyword overrides applied."""
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})


def pmf_for_design(user: int, design: Design, ch: ChannelModel, rho: float, order: int = 24):
    return joint_pmf(user, design.params, ch, design.quantizer, rho, gauss_legendre(order))


def analytic_report(design: Design, ch: ChannelModel, rho: float, order: int = 24):
    return scheme_b_report(design.params, ch, design.quantizer, rho, gauss_legendre(order))
