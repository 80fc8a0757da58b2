"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 file format or version error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from . import experiments as ex
from .errors import (
    BasisFormatError,
    FracRBError,
    InvalidParameter,
    MeshFormatError,
    MeshValidationError,
    OracleTooLarge,
    SingularMatrix,
    SolverFailure,
)

EXIT_CONFIG, EXIT_NUMERIC, EXIT_FORMAT = 2, 3, 4

_FLAG_KEYS = {
    "domain": "domain", "k": "k", "smin": "s_min", "smax": "s_max", "eps": "eps",
    "nmax": "n_max", "theta": "theta_count", "out": "out", "seed": "seed",
    "tol": "tol", "alpha_star": "alpha_star",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--domain", help="interval, square, lshape or a mesh file path")
    p.add_argument("--h", type=ex._num, action="append",
                   help="mesh size (repeat for hsens)")
    p.add_argument("--k", type=float)
    p.add_argument("--smin", type=float)
    p.add_argument("--smax", type=float)
    p.add_argument("--s", type=float, action="append", help="fractional power (repeatable)")
    p.add_argument("--eps", type=float)
    p.add_argument("--nmax", type=int)
    p.add_argument("--theta", type=int, help="training set size")
    p.add_argument("--tol", type=float, help="linear solver tolerance")
    p.add_argument("--alpha-star", dest="alpha_star", type=float)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, help="random training set seed")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fracrb", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("offline", help="build and save the universal reduced basis")
    ev = sub.add_parser("evaluate", help="evaluate u(s) in full and/or reduced mode")
    ev.add_argument("--basis", help="basis file (default: <out>/basis.flrb)")
    ev.add_argument("--mode", choices=["full", "rb", "both"], default="both")
    sub.add_parser("decay", help="e_w(n) and e_u(s)(n) decay study")
    sub.add_parser("hsens", help="decay slope versus mesh size at s = 0.1")
    sub.add_parser("decomp", help="FEM / sinc / reduced-basis error split")
    bal = sub.add_parser("balance", help="suggest (h, k) for a target accuracy")
    bal.add_argument("--c-fem", type=float, default=1.0)
    bal.add_argument("--c-sinc", type=float, default=1.0)
    for p in sub.choices.values():
        _common(p)
    return parser


def make_config(args) -> ex.ExperimentConfig:
    cfg = ex.load_config(args.config) if args.config else ex.ExperimentConfig()
    explicit_h = False
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            explicit_h = any(line.split("=", 1)[0].strip() in ("h", "target_h")
                             for line in fh if "=" in line)
    for flag, key in _FLAG_KEYS.items():
        val = getattr(args, flag, None)
        if val is not None:
            setattr(cfg, key, val)
    if args.s:
        cfg.s = list(args.s)
    if args.h:
        cfg.h = args.h[0]
        cfg.h_list = list(args.h)
    elif not explicit_h:
        cfg.h = cfg.default_h
    return cfg


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="[%(levelname)s] %(name)s: %(message)s",
    )
    try:
        cfg = make_config(args)
        if args.command == "balance":
            h, k = ex.cmd_balance(cfg.eps, cfg.alpha_star, args.c_fem, args.c_sinc)
            print("eps,alpha_star,h,k")
            print(f"{cfg.eps!r},{cfg.alpha_star!r},{h!r},{k!r}")
            return 0
        cfg.validate()
        if args.command == "offline":
            res = ex.cmd_offline(cfg)
            print(f"basis: {res['basis']} (n={res['rb'].n})")
        elif args.command == "evaluate":
            basis = args.basis or f"{cfg.out}/basis.flrb"
            res = ex.cmd_evaluate(cfg, basis, mode=args.mode)
            for s, count in res["solves"].items():
                print(f"s={s}: {count} full solves")
        elif args.command == "decay":
            res = ex.cmd_decay_experiment(cfg)
            print(f"wrote {res['csv']}")
        elif args.command == "hsens":
            res = ex.cmd_h_sensitivity(cfg)
            for h, s, slope, r2, _, _ in res["rows"]:
                print(f"h={h:g} slope={slope:.4f} R2={r2:.4f}")
        elif args.command == "decomp":
            for s in cfg.s:
                res = ex.cmd_error_decomposition(dataclasses.replace(cfg, out=cfg.out), s)
                for r in res["records"]:
                    print(f"s={s:g} {r.param}: {r.error:.3e}")
        return 0
    except (MeshFormatError, MeshValidationError, BasisFormatError) as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (SolverFailure, SingularMatrix) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidParameter, OracleTooLarge) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FracRBError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
