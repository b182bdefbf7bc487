"""Command-line entry points: run experiments, print constants, render reports."""

from __future__ import annotations

import argparse
import dataclasses
import sys

from . import cli_io
from .assembly import ConfigurationError, WellPosednessError, assemble
from .kernel import KernelSpec, recommended_tau
from .vi_solver import PdasConvergenceError, SingularSystemError

_REQUIRED_KEYS = ("dim", "n_cells", "case", "delta", "epsilon2", "c_f", "tau", "T")

# CLI flag name -> RunConfig key for the direct-override flags.
_KEY_FLAGS = {
    "dim": "dim",
    "n_cells": "n_cells",
    "case": "case",
    "delta": "delta",
    "epsilon2": "epsilon2",
    "c_f": "c_f",
    "tau": "tau",
    "T": "T",
    "scheme": "scheme",
    "model": "model",
    "initial": "initial",
    "seed": "seed",
    "snapshot_every": "snapshot_every",
    "formats": "formats",
    "out_dir": "output_dir",
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--preset", choices=cli_io.PRESET_NAMES, help="start from a bundled parameter set")
    parser.add_argument("--scale", choices=("full", "desk"), default=None,
                        help="preset scale (default full for run, desk for constants)")
    parser.add_argument("--config", metavar="FILE", help="flat key=value config file")
    parser.add_argument("--dim", type=int, choices=(1, 2))
    parser.add_argument("--n-cells", dest="n_cells", type=int)
    parser.add_argument("--case", choices=("neumann", "regional"))
    parser.add_argument("--delta", type=float)
    parser.add_argument("--epsilon2", type=float)
    parser.add_argument("--c-f", dest="c_f", help="scalar or the rule 0.9*cgamma")
    parser.add_argument("--tau", type=float)
    parser.add_argument("--T", dest="T", type=float)
    parser.add_argument("--scheme", choices=("implicit", "imex"))
    parser.add_argument("--initial", help="sinusoid | random[:seed] | file:path")
    parser.add_argument("--seed", type=int)


def _build_config(args: argparse.Namespace, default_scale: str) -> cli_io.RunConfig:
    merged: dict = {}
    if args.preset:
        scale = args.scale or default_scale
        merged.update(dataclasses.asdict(cli_io.preset(args.preset, scale)))
    if args.config:
        merged.update(cli_io.parse_config_file(args.config))
    for flag, key in _KEY_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            merged[key] = cli_io._coerce(key, value) if isinstance(value, str) else value
    missing = [key for key in _REQUIRED_KEYS if key not in merged]
    if missing:
        raise ConfigurationError(
            f"missing configuration keys {missing}; pass --preset, --config, "
            "or the corresponding flags"
        )
    return cli_io.RunConfig(**merged).validate()


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _build_config(args, default_scale="full")
    result = cli_io.run_experiment(cfg, out_dir=args.out_dir)
    for name, leg in sorted(result.legs.items()):
        last = leg.records[-1] if leg.records else None
        if last is None:
            print(f"{name}: 0 steps (initial state only)")
        else:
            print(
                f"{name}: {last.step} steps to t={last.t:g}; "
                f"mass {last.mass:.6g}, energy {last.energy:.6g}, "
                f"pure-phase fraction {last.interface_fraction:.4f}"
            )
        if leg.out_dir:
            print(f"{name}: outputs in {leg.out_dir}")
    if args.plots:
        if args.out_dir is None and cfg.output_dir is None:
            raise ConfigurationError("--plots needs an output directory (--out-dir)")
        from . import plots

        target = args.out_dir if args.out_dir is not None else cfg.output_dir
        for path in plots.render_run_dir(target):
            print(f"figure: {path}")
    return 0


def cmd_constants(args: argparse.Namespace) -> int:
    cfg = _build_config(args, default_scale="desk")
    spec = KernelSpec(dim=cfg.dim, epsilon2=cfg.epsilon2, delta=cfg.delta)
    print(f"preset: {cfg.name} (scale {cfg.scale})")
    print(f"dim = {cfg.dim}, delta = {cfg.delta:g}, epsilon2 = {cfg.epsilon2:g}")
    for key, value in cli_io.kernel_constants(spec).items():
        print(f"{key} = {value:.12g}")
    mesh = cli_io.build_run_mesh(cfg)
    ops = assemble(mesh, spec, cfg.c_f, cli_io._CASES[cfg.case])
    om = mesh.omega_nodes
    print(f"mesh: n_cells = {cfg.n_cells}, h = {mesh.h:.12g}, "
          f"layer_cells = {mesh.layer_cells}, nodes = {mesh.n_nodes}")
    print(f"c_gamma_h on evolution nodes: min = {ops.c_gamma_h[om].min():.12g}, "
          f"max = {ops.c_gamma_h[om].max():.12g}")
    xi_min = float(ops.xi_h.min())
    print(f"xi_h: min = {xi_min:.12g}, max = {float(ops.xi_h.max()):.12g}")
    case_id = cli_io._CASES[cfg.case]
    poincare = cli_io.POINCARE_C if cfg.case == "neumann" else None
    bound = recommended_tau(spec, xi_min, case_id, poincare_c=poincare)
    print(f"recommended tau (descent/uniqueness bound): {bound:.6g} "
          f"(configured tau = {cfg.tau:g})")
    note = cli_io.preset_note(cfg.name)
    if note:
        print(note)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    from . import plots

    for path in plots.render_run_dir(args.run_dir, out_dir=args.out_dir):
        print(f"figure: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nlch",
        description="Nonlocal Cahn-Hilliard solver with an obstacle potential "
        "(sharp-interface capable), plus a local comparison solver.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment and write outputs")
    _add_config_flags(p_run)
    p_run.add_argument("--model", choices=("nonlocal", "local", "both"))
    p_run.add_argument("--snapshot-every", dest="snapshot_every", type=int,
                       help="write intermediate snapshots every N steps")
    p_run.add_argument("--formats", help="comma list of snapshot formats: csv,vtk")
    p_run.add_argument("--out-dir", dest="out_dir", help="output directory")
    p_run.add_argument("--plots", action="store_true",
                       help="render PNG figures from the CSV outputs")
    p_run.set_defaults(func=cmd_run)

    p_const = sub.add_parser(
        "constants",
        help="print kernel constants, nodal xi range, and the tau bound",
    )
    _add_config_flags(p_const)
    p_const.set_defaults(func=cmd_constants)

    p_report = sub.add_parser("report", help="render figures for an existing run directory")
    p_report.add_argument("--run-dir", dest="run_dir", required=True)
    p_report.add_argument("--out-dir", dest="out_dir", default=None)
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        ConfigurationError,
        WellPosednessError,
        PdasConvergenceError,
        SingularSystemError,
        FileNotFoundError,
    ) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
