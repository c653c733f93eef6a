"""Command-line entry points.

Subcommands: `run` executes one twin experiment from a config file, `sweep`
repeats it over values of zeta/delta/workers, and `dump-precision` writes
the estimated factors of one subdomain as plain-text triplets. Flags
override config keys; --seed and --out-dir are always available.
"""

from __future__ import annotations

import argparse
import sys

from .driver import METHODS
from .errors import ConfigurationError
from .estimator import fit_factors
from .factors import dump_factors
from .geometry import decompose
from .harness import (
    SWEEP_PARAMS,
    build_geometry,
    build_model,
    initial_reference,
    load_config,
    run_sweep,
    run_twin_experiment,
    spin_up,
)
from .validation import center_rows


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("config", help="flat key=value config file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out-dir", default=None, help="override the output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcholkf",
        description="Parallel ensemble Kalman filtering with sparse "
        "modified-Cholesky precision estimation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one twin experiment")
    _add_common(p_run)

    p_sweep = sub.add_parser("sweep", help="run the experiment over a parameter sweep")
    _add_common(p_sweep)
    p_sweep.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    p_sweep.add_argument(
        "--values", required=True, help="comma-separated integer values"
    )

    p_dump = sub.add_parser(
        "dump-precision", help="write one subdomain's T and D factors as text"
    )
    _add_common(p_dump)
    p_dump.add_argument(
        "--subdomain", type=int, default=0, help="subdomain id to dump (default 0)"
    )
    return parser


def _overrides(args) -> dict:
    out = {}
    if args.seed is not None:
        out["seed"] = args.seed
    if args.out_dir is not None:
        out["out_dir"] = args.out_dir
    return out


def _cmd_run(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    result = run_twin_experiment(cfg)
    for path in result.files:
        print(path)
    return 0


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"bad --values list: {args.values!r}") from exc
    result = run_sweep(cfg, args.param, values)
    print(result.path)
    return 0


def _cmd_dump(args) -> int:
    from pathlib import Path

    cfg = load_config(args.config, _overrides(args))
    geometry = build_geometry(cfg)
    model = build_model(cfg, geometry)
    xref0 = initial_reference(cfg, geometry)
    _, x0 = spin_up(model, xref0, cfg.bg_factor, cfg.nens, cfg.seed, cfg.spinup_window)

    subdomains = decompose(geometry, cfg.delta, cfg.zeta)
    if not 0 <= args.subdomain < len(subdomains):
        raise ConfigurationError(
            f"subdomain {args.subdomain} out of range [0, {len(subdomains)})"
        )
    sd = subdomains[args.subdomain]
    u = center_rows(x0.X[sd.local_order])
    factors = fit_factors(u, geometry, cfg.zeta, local_order=sd.local_order)

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t_path = out_dir / f"T_subdomain{sd.id}.txt"
    d_path = out_dir / f"D_subdomain{sd.id}.txt"
    dump_factors(factors, t_path, d_path)
    print(t_path)
    print(d_path)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "sweep": _cmd_sweep,
        "dump-precision": _cmd_dump,
    }
    try:
        return handlers[args.command](args)
    except (ConfigurationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
