"""``zdjscc`` command line: moments, optimize, simulate, sweep, validate.

Exit codes: 0 success, 1 runtime failure (including a failed validation),
2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import math
import sys

from .analytic import DistortionReport
from .core import ChannelModel, QuantizerSpec, noise_variance, quantizer_moments
from .numerics import gauss_legendre
from .optimizer import (
    DEFAULT_DELTA_POINTS,
    DEFAULT_GAIN_POINTS,
    SearchSpace,
    optimize_scheme_b,
    uncoded_distortion,
)
from .simulation import (
    DEFAULT_TRIALS,
    ConfigError,
    Design,
    load_config,
    run_monte_carlo,
    run_sweep,
    with_overrides,
    write_csv,
)

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
#: Relative analytic-vs-Monte-Carlo gap tolerated by ``validate``.
VALIDATE_TOLERANCE = 0.02


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _point_args(p, csnr=True):
    p.add_argument("--rho", type=float, default=0.9)
    p.add_argument("--c", type=float, default=2.0, help="symmetric interference gain")
    p.add_argument("--power", type=float, default=1.0, help="per-user power P")
    if csnr:
        p.add_argument("--csnr", type=float, default=20.0, help="P / sigma_w^2 in dB")


def _search(p):
    p.add_argument("--refinement", type=int, default=2)
    p.add_argument("--delta-points", type=int, default=DEFAULT_DELTA_POINTS)
    p.add_argument("--gain-points", type=int, default=DEFAULT_GAIN_POINTS)


def _common(p):
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--order", type=int, default=None, help="Gauss-Legendre order")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="zdjscc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("moments", help="quantizer moments for a step size")
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--rho", type=float, default=0.9, help="sets the neighbour radius M")

    p = sub.add_parser("optimize", help="optimize Scheme B and print the analytic SDR")
    _point_args(p)
    _common(p)
    _search(p)

    p = sub.add_parser("simulate", help="Monte Carlo at one operating point")
    _point_args(p)
    _common(p)
    p.add_argument("--scheme", choices=("uncoded", "scheme_a", "scheme_b"), default="scheme_b")
    _search(p)

    p = sub.add_parser("sweep", help="run a sweep described by a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--output", default=None, help="CSV path (stdout when omitted)")
    _common(p)

    p = sub.add_parser("validate", help="analytic vs Monte Carlo check for Scheme B")
    _point_args(p)
    _common(p)
    _search(p)
    return ap


def _channel(args) -> ChannelModel:
    if not abs(args.rho) < 1:
        raise ConfigError(f"|rho| must be < 1, got {args.rho}")
    if not args.power > 0 or args.c < 0:
        raise ConfigError("power must be > 0 and c >= 0")
    return ChannelModel(args.c, args.c, noise_variance(args.power, args.csnr))


def _check_common(args):
    if args.trials is not None and args.trials < 1:
        raise ConfigError("--trials must be >= 1")
    if args.order is not None and args.order < 1:
        raise ConfigError("--order must be >= 1")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        raise ConfigError("--seed must fit in 64 unsigned bits")


def _optimize(args, ch):
    if args.refinement < 0 or args.delta_points < 1 or args.gain_points < 1:
        raise ConfigError("grid sizes must be >= 1 and --refinement >= 0")
    space = SearchSpace.default(args.power, args.refinement, args.delta_points,
                                args.gain_points)
    return optimize_scheme_b(space, args.rho, ch, gauss_legendre(args.order or 24))


def _print_report(label: str, rep: DistortionReport, out):
    line = (f"{label}: D1={rep.d1:.6g} D2={rep.d2:.6g} D={rep.d_avg:.6g} "
            f"SDR={rep.sdr_db:.4f} dB")
    if rep.stderr is not None and not math.isnan(rep.stderr):
        line += f" stderr={rep.stderr:.3g}"
    print(line, file=out)


def _print_design(res, out):
    p, q = res.best_params, res.best_quantizer
    print(f"delta={q.delta:.6g} k_max={q.k_max} M={q.m} digital_gain={p.delta_coeff_1:.6g} "
          f"beta={p.beta_1:.6g} gamma1={res.gammas[0]:.6g} gamma2={res.gammas[1]:.6g}",
          file=out)


def cmd_moments(args, out):
    q = QuantizerSpec.for_step(args.delta, args.rho)
    m = quantizer_moments(q)
    print(f"delta={q.delta:.6g} k_max={q.k_max} M={q.m}", file=out)
    print(f"E[TS]={m.e_t_s:.12g}", file=out)
    print(f"E[T^2]={m.e_t_sq:.12g}", file=out)
    print(f"sigma_R^2={m.sigma_r_sq:.12g}", file=out)
    print(f"E[RT]={m.e_r_t:.12g}", file=out)
    return EXIT_OK


def cmd_optimize(args, out):
    _check_common(args)
    ch = _channel(args)
    res = _optimize(args, ch)
    _print_design(res, out)
    _print_report("scheme_b_analytic", res.best_report, out)
    d_unc, sdr_unc = uncoded_distortion(args.rho, ch, args.power)
    print(f"uncoded: D={d_unc:.6g} SDR={sdr_unc:.4f} dB", file=out)
    return EXIT_OK


def cmd_simulate(args, out):
    _check_common(args)
    ch = _channel(args)
    design = None
    if args.scheme != "uncoded":
        res = _optimize(args, ch)
        _print_design(res, out)
        design = Design.from_result(res)
    trials = args.trials or DEFAULT_TRIALS[args.scheme]
    rep = run_monte_carlo(args.scheme, args.rho, ch, trials, args.seed or 0, design,
                          args.power, args.order or 24)
    _print_report(f"{args.scheme} ({trials} trials)", rep, out)
    return EXIT_OK


def cmd_sweep(args, out):
    _check_common(args)
    cfg = load_config(args.config)
    cfg = with_overrides(cfg, seed=args.seed, trials=args.trials,
                         quadrature_order=args.order, output_path=args.output)
    result = run_sweep(cfg)
    if cfg.output_path:
        write_csv(result, cfg.output_path)
        print(f"wrote {len(result.rows)} rows to {cfg.output_path}", file=sys.stderr)
    else:
        out.write(result.to_csv())
    return EXIT_OK


def cmd_validate(args, out):
    _check_common(args)
    ch = _channel(args)
    res = _optimize(args, ch)
    _print_design(res, out)
    analytic = res.best_report
    trials = args.trials or DEFAULT_TRIALS["scheme_b"]
    mc = run_monte_carlo("scheme_b", args.rho, ch, trials, args.seed or 0,
                         Design.from_result(res), args.power, args.order or 24)
    _print_report("analytic", analytic, out)
    _print_report(f"monte_carlo ({trials} trials)", mc, out)
    gap = abs(mc.d_avg - analytic.d_avg) / analytic.d_avg
    ok = gap <= VALIDATE_TOLERANCE
    print(f"relative gap {gap:.4%} (tolerance {VALIDATE_TOLERANCE:.0%}): "
          f"{'PASS' if ok else 'FAIL'}", file=out)
    return EXIT_OK if ok else EXIT_RUNTIME


COMMANDS = {
    "moments": cmd_moments,
    "optimize": cmd_optimize,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "validate": cmd_validate,
}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, ArithmeticError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
