"""Command-line entry point: ``randopen <command> [flags]``."""

from __future__ import annotations

import argparse
import sys

from .errors import RandOpenError
from .experiment import COMMANDS, ExperimentConfig, run_experiment


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--seed", type=int, help="master seed (environment and sampling)")
    common.add_argument("--threads", type=int, help="worker threads for Monte Carlo stages")
    common.add_argument("--out", help="output directory")
    common.add_argument("--mode", choices=["exact", "mc"], help="exact integrals where available, or Monte Carlo")
    common.add_argument("--grid-k", dest="grid_k", type=int, help="Ulam grid size")
    common.add_argument("--preset", help="system preset name")
    common.add_argument("--system", help="system JSON file (overrides --preset)")
    common.add_argument("--observable", help="'indicator:a:b', 'identity' or 'constant:c'")
    common.add_argument("--N", dest="N", type=_int_list, help="comma-separated horizons, increasing")
    common.add_argument("--M", dest="M", type=int, help="Monte Carlo sample size")
    common.add_argument("--fibre", type=int, help="environment realisation index")
    common.add_argument("--n-max", dest="n_max", type=int, help="steps for spectral tables")
    common.add_argument("--gaps", type=_int_list, help="FCB gaps")
    common.add_argument("--fcb-N", dest="fcb_N", type=int, help="horizon for the FCB sweep")
    common.add_argument("--path-t", dest="path_t", type=_float_list, help="times for path marginals")
    common.add_argument("--timings", action="store_const", const=True,
                        help="append a runtime_ms column to clt.csv (breaks byte-identical reruns)")

    parser = argparse.ArgumentParser(prog="randopen", description="Experiments on random open interval maps.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "draw conditioned samples for each N",
        "spectral": "escape rates, densities, conformal masses and decay fit (JSON)",
        "verify-conditions": "numeric witnesses for the standing assumptions (JSON)",
        "clt": "normal approximation distances for each N (CSV)",
        "fcb": "correlation-bound gap sweep (CSV)",
        "bounds": "theoretical rate bounds along N (CSV)",
        "compare": "join clt output with bound curves (CSV)",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        cfg = ExperimentConfig.resolve(args.config, overrides)
    except RandOpenError as exc:
        print(f"randopen {args.command}: invalid configuration: {exc}", file=sys.stderr)
        return exc.exit_code
    return run_experiment(args.command, cfg)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
