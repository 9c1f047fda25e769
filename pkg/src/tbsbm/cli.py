"""Command line front end.

Subcommands: chain-coeffs, ed, dmrg, variational, sweep, rotation-scan,
zeta-scan, phase-diagram.  Every subcommand accepts ``--config FILE``
(flat key = value text), ``--out DIR``, ``--seed INT``, ``--workers INT``
plus ``--set key=value`` overrides.  Exit code 0 only when every point of
the run succeeded.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import __version__
from .driver import (ExperimentConfig, PhaseDiagramResult, config_header,
                     load_config, run_chain_coeffs, run_phase_diagram,
                     run_point, run_sweep, write_text)
from .observables import ObservableReport


def _apply_overrides(config: ExperimentConfig, pairs) -> ExperimentConfig:
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for pair in pairs or []:
        key, _, value = pair.partition("=")
        key = key.strip()
        if key not in known:
            raise SystemExit(f"unknown config key {key!r}")
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        config = dataclasses.replace(config, **{key: parsed})
    return config


def _build_config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    config = _apply_overrides(config, args.set)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.workers is not None:
        config = dataclasses.replace(config, workers=args.workers)
    if args.out is not None:
        config = dataclasses.replace(config, out=args.out)
    return config


def _out_path(config, name):
    return os.path.join(config.out, name)


def _write_report(config, report: ObservableReport, name: str):
    text = (config_header(config) + "\n" + ObservableReport.csv_header() + "\n"
            + report.csv_row() + "\n")
    path = _out_path(config, name)
    write_text(path, text)
    print(f"wrote {path}")


def cmd_chain_coeffs(args):
    config = _build_config(args)
    path = _out_path(config, "chain_coeffs.csv")
    run_chain_coeffs(config, path)
    print(f"wrote {path}")
    return 0


def cmd_point(args, solver):
    config = dataclasses.replace(_build_config(args), solver=solver)
    report = run_point(config)
    _write_report(config, report, f"{solver}_point.csv")
    return 0


def cmd_sweep(args):
    config = _build_config(args)
    result = run_sweep(config)
    path = _out_path(config, "sweep.csv")
    write_text(path, result.table(config))
    print(f"wrote {path}")
    return 0 if result.ok else 1


def cmd_rotation_scan(args):
    from .dmrg import BasisPolicy, ground_state
    from .symmetry import displacement_rotation_scan

    config = dataclasses.replace(_build_config(args), solver="dmrg")
    model = config.dense_model()
    state, _ = ground_state(model, BasisPolicy(config.policy), config.dmrg_config())
    dtheta = np.pi * config.dtheta_over_pi
    n_grid = args.grid_points
    thetas = np.linspace(0.0, 2.0 * np.pi, n_grid)
    scan = displacement_rotation_scan(state, thetas, dtheta)
    path = _out_path(config, "rotation_scan.csv")
    write_text(path, config_header(config) + "\n" + scan.to_csv())
    print(f"wrote {path} (return deviation {scan.return_deviation:.3e})")
    return 0


def cmd_zeta_scan(args):
    from .variational import RelaxSchedule, relax_best, zeta_scan

    config = dataclasses.replace(_build_config(args), solver="variational")
    grid = config.mode_grid()
    schedule = RelaxSchedule(damping=config.damping, max_iter=config.max_iter,
                             n_restarts=config.restarts)
    out = relax_best(grid, config.n_terms, schedule, seed=config.seed)
    thetas = np.linspace(0.0, 2.0 * np.pi, config.n_theta)
    zetas = zeta_scan(out.state, grid, thetas)
    lines = [config_header(config), "theta,zeta"]
    lines += [f"{t:.17g},{z:.17g}" for t, z in zip(thetas, zetas)]
    path = _out_path(config, "zeta_scan.csv")
    write_text(path, "\n".join(lines) + "\n")
    print(f"wrote {path}")
    return 0


def cmd_phase_diagram(args):
    config = _build_config(args)
    result = run_phase_diagram(config)
    path = _out_path(config, "phase_diagram.csv")
    write_text(path, result.table(config))
    trans = _out_path(config, "phase_transitions.json")
    write_text(trans, json.dumps({"code_version": __version__,
                                  "config": config.resolved(),
                                  "transition_s": result.transition_points},
                                 sort_keys=True) + "\n")
    print(f"wrote {path} and {trans}")
    bad = any(str(r["label"]).startswith("error") for r in result.rows)
    return 1 if bad else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="tbsbm",
                                     description="two-bath spin-boson ground-state suite")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="seed recorded in outputs")
        p.add_argument("--workers", type=int, help="sweep fan-out processes")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config field")

    for name in ("chain-coeffs", "ed", "dmrg", "variational", "sweep",
                 "rotation-scan", "zeta-scan", "phase-diagram"):
        p = sub.add_parser(name)
        common(p)
        if name == "rotation-scan":
            p.add_argument("--grid-points", type=int, default=81)

    args = parser.parse_args(argv)
    handlers = {
        "chain-coeffs": cmd_chain_coeffs,
        "ed": lambda a: cmd_point(a, "ed"),
        "dmrg": lambda a: cmd_point(a, "dmrg"),
        "variational": lambda a: cmd_point(a, "variational"),
        "sweep": cmd_sweep,
        "rotation-scan": cmd_rotation_scan,
        "zeta-scan": cmd_zeta_scan,
        "phase-diagram": cmd_phase_diagram,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
