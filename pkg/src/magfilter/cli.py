"""Command-line front end: ``magfilter <subcommand> [options]``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import analytic_sg_variance, analytic_variance
from .config import CONVERTERS, KEYS, ConfigError, parse_config
from .constants import CONSTANTS, PICOTESLA
from .filter import propagate_covariance, run_ensemble, run_trajectory, sg_variance

PT2 = PICOTESLA**2

FLOAT_FMT = "{:.10e}"


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return ""
    return FLOAT_FMT.format(float(x))


def header(command: str, cfg) -> list[str]:
    c = cfg.couplings()
    lines = [f"# magfilter {__version__}", f"# command: {command}"]
    lines += [f"# config: {k} = {v}" for k, v in cfg.items()]
    lines += [f"# constant: {k} = {v!r}" for k, v in CONSTANTS.items()]
    lines += [
        f"# coupling: kappa_sq_per_s = {c.kappa_sq!r}",
        f"# coupling: mu_per_s_pT = {c.mu * PICOTESLA!r}",
        f"# coupling: eta_per_s = {c.eta!r}",
    ]
    return lines


def _table(columns: list[str], rows) -> list[str]:
    out = [",".join(columns)]
    out += [",".join(_fmt(v) for v in row) for row in rows]
    return out


def _emit(lines: list[str], out) -> None:
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_derive_params(cfg) -> int:
    c = cfg.couplings()
    print(f"kappa^2 = {c.kappa_sq:.4e} 1/s")
    print(f"mu      = {c.mu * PICOTESLA:.4e} 1/(s pT)")
    print(f"eta     = {c.eta:.5g} 1/s")
    return 0


def cmd_variance(cfg) -> int:
    fc = cfg.filter_config()
    track = propagate_covariance(fc)
    c = fc.couplings
    exact = analytic_variance(fc.delta_b0, c.kappa, c.mu, fc.r, track.times)
    lines = header("variance", cfg)
    if fc.sg_time is not None:
        before, after = sg_variance(fc)
        sg_exact = analytic_sg_variance(fc.delta_b0, np.sqrt(fc.r) * c.kappa, c.mu, fc.sg_time)
        lines.append(
            f"# stern_gerlach: t_s = {_fmt(fc.sg_time)}, deltaB_before_pT = "
            f"{_fmt(np.sqrt(before) / PICOTESLA)}, deltaB_after_pT = "
            f"{_fmt(np.sqrt(after) / PICOTESLA)}, deltaB_sg_analytic_pT = "
            f"{_fmt(np.sqrt(sg_exact) / PICOTESLA)}"
        )
    rows = zip(track.times, track.delta_B / PICOTESLA, np.sqrt(exact) / PICOTESLA, track.jx_fraction)
    lines += _table(["t_s", "deltaB_pT", "deltaB_analytic_pT", "jx_fraction"], rows)
    _emit(lines, cfg.out)
    return 0


def cmd_trajectory(cfg) -> int:
    fc = cfg.filter_config()
    rec = run_trajectory(fc)
    columns = ["t_s", "B_mean_pT", "deltaB_pT"]
    cols = [rec.times, rec.mean_B / PICOTESLA, np.sqrt(rec.var_B) / PICOTESLA]
    if rec.B_true is not None:
        columns.append("B_true_pT")
        cols.append(np.full(len(rec.times), rec.B_true / PICOTESLA))
    lines = header("trajectory", cfg) + _table(columns, zip(*cols))
    _emit(lines, cfg.out)
    return 0


def cmd_ensemble(cfg) -> int:
    fc = cfg.filter_config()
    st = run_ensemble(fc, cfg.n, workers=cfg.workers)
    rows = zip(st.times, st.mse / PT2, st.var_of_mean / PT2, st.var_B / PT2, st.ltv_residual / PT2)
    lines = header("ensemble", cfg)
    lines.append(f"# trajectories: {cfg.n}")
    lines += _table(["t_s", "mse_pT2", "var_mean_pT2", "deltaB2_pT2", "ltv_residual_pT2"], rows)
    _emit(lines, cfg.out)
    return 0


def cmd_verify(cfg, criteria=None) -> int:
    from .verify import run_checks

    results = run_checks(criteria)
    failed = notes = 0
    for res in results:
        print(res.line())
        failed += not res.ok
        notes += res.ok and not res.passed
    print(f"{len(results) - failed - notes} passed, {failed} failed, {notes} notes")
    return 1 if failed else 0


COMMANDS = {
    "derive-params": (cmd_derive_params, "print kappa^2, mu and eta"),
    "variance": (cmd_variance, "deterministic deltaB(t) curve"),
    "trajectory": (cmd_trajectory, "one stochastic measurement record"),
    "ensemble": (cmd_ensemble, "Monte Carlo ensemble statistics"),
    "verify": (cmd_verify, "run the invariant and oracle checks"),
}


def _flag_type(key):
    conv = CONVERTERS[key]

    def parse(text):
        try:
            return conv(text)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None

    parse.__name__ = key
    return parse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value configuration file")
    for key in KEYS:
        flag = "--" + key.replace("_", "-")
        if key == "decay":
            common.add_argument(flag, action=argparse.BooleanOptionalAction, default=None,
                                help="include spontaneous-emission decay")
        else:
            common.add_argument(flag, dest=key, type=_flag_type(key), default=None,
                                metavar=key.upper())
    parser = argparse.ArgumentParser(
        prog="magfilter", description="Gaussian-state filter for a Faraday-probed atomic magnetometer"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name == "verify":
            p.add_argument("--criterion", type=int, action="append", choices=range(1, 10),
                           metavar="K", help="run only acceptance criterion K (repeatable)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: getattr(args, k) for k in KEYS}
    try:
        cfg = parse_config(args.config, overrides)
        if args.command == "verify":
            return cmd_verify(cfg, args.criterion)
        return COMMANDS[args.command][0](cfg)
    except ConfigError as exc:
        print(f"magfilter: config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"magfilter: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
