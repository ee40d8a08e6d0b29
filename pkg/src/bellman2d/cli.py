"""Command line entry point: ``bellman2d <command> [--config PATH] [--out DIR] [--seed INT]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import manufactured
from .experiment import (
    ConfigError,
    ExperimentConfig,
    StageError,
    comparison_suite,
    convergence_study,
    run,
    write_json,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

log = logging.getLogger("bellman2d")


def _load(args: argparse.Namespace) -> ExperimentConfig:
    if args.config is None:
        raise ConfigError("--config is required")
    return ExperimentConfig.load(args.config)


def _out(args: argparse.Namespace, cfg: ExperimentConfig | None = None) -> Path | None:
    if args.out is not None:
        return Path(args.out)
    if cfg is not None and cfg.out:
        return Path(cfg.out)
    return None


def cmd_solve(args: argparse.Namespace) -> int:
    cfg = _load(args).replace(analyses={})
    rep = run(cfg, _out(args, cfg))
    print(json.dumps(rep.to_dict()["solve"], indent=2, sort_keys=True))
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    cfg = _load(args)
    rep = run(cfg, _out(args, cfg))
    d = rep.to_dict()
    d.pop("config")
    d.pop("regularity", None)
    print(json.dumps(d, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    if args.what != "comparisons":
        raise ConfigError(f"unknown verify target {args.what!r}")
    if args.config is None:
        raise ConfigError("--config is required")
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    report = comparison_suite(cfg, seed=args.seed if args.seed is not None else 0)
    out = _out(args)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "comparison_report.json", report)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_convergence(args: argparse.Namespace) -> int:
    cfg = _load(args)
    table = convergence_study(cfg, args.n, _out(args, cfg))
    print("n,h,err_v,order_v,err_jump,order_jump")
    for r in table.rows:
        print(
            f"{r['n']},{r['h']:.6g},{r['err_v']:.3e},{r['order_v']:.3f},"
            f"{r['err_jump']:.3e},{r['order_jump']:.3f}"
        )
    if table.exact:
        print("exact: errors at round-off level")
    return EXIT_OK


def cmd_manufactured(args: argparse.Namespace) -> int:
    if args.what != "list":
        raise ConfigError(f"unknown manufactured action {args.what!r}")
    for sol in manufactured.catalog():
        rep = manufactured.oracle_check(sol)
        params = sol.describe()
        params.pop("kind")
        print(
            f"{sol.kind:<18} {json.dumps(params, sort_keys=True):<48} "
            f"residual={rep.residual:.1e} C2-defect={max(rep.value_defect, rep.grad_defect, rep.hess_defect):.1e}"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="JSON config file")
    common.add_argument("--out", type=str, default=None, help="output directory")
    common.add_argument("--seed", type=int, default=None, help="seed for randomized suites")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="bellman2d", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve only").set_defaults(fn=cmd_solve)
    sub.add_parser("analyze", parents=[common], help="solve and analyze").set_defaults(
        fn=cmd_analyze
    )
    v = sub.add_parser("verify", parents=[common], help="comparison-function suite")
    v.add_argument("what", choices=["comparisons"])
    v.set_defaults(fn=cmd_verify)
    c = sub.add_parser("convergence", parents=[common], help="grid refinement study")
    c.add_argument("--n", type=int, nargs="+", default=[65, 129, 257])
    c.set_defaults(fn=cmd_convergence)
    mf = sub.add_parser("manufactured", parents=[common], help="exact-solution catalog")
    mf.add_argument("what", choices=["list"])
    mf.set_defaults(fn=cmd_manufactured)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        if isinstance(exc.original, ConfigError):
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ArithmeticError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
