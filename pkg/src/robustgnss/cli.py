"""Command-line front end: simulate | solve | sweep.

Exit codes are a stable contract: 0 success, 2 configuration or input parse
error, 3 I/O failure, 4 solver hit the iteration cap, 5 unobservable graph.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys

from .config import RunConfig, apply_overrides, override_all_seeds, parse_config
from .errors import (
    ConfigError,
    DisconnectedVariableError,
    ObservationParseError,
    RobustGnssError,
    SingularNormalEquationsError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_MAX_ITERATIONS = 4
EXIT_UNOBSERVABLE = 5

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}

log = logging.getLogger(__name__)


def _setup_logging() -> None:
    name = os.environ.get("ROBUSTGNSS_LOG", "warn").lower()
    level = _LOG_LEVELS.get(name, logging.WARNING)
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


@contextlib.contextmanager
def _atomic_write(path: str):
    """Write to a sibling temp file and rename into place on success."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    tmp = f"{path}.tmp-{os.getpid()}"
    handle = open(tmp, "w", encoding="utf-8", newline="\n")
    try:
        yield handle
    except BaseException:
        handle.close()
        with contextlib.suppress(OSError):
            os.remove(tmp)
        raise
    handle.close()
    os.replace(tmp, path)


def _load_config(args: argparse.Namespace) -> RunConfig:
    try:
        with open(args.config, "r", encoding="utf-8") as handle:
            raw = json.load(handle)
    except OSError as exc:
        raise ConfigError("<config>", f"cannot read {args.config}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("<config>", f"invalid JSON: {exc}") from exc
    if args.set:
        raw = apply_overrides(raw, args.set)
    if args.seed is not None:
        raw = override_all_seeds(raw, args.seed)
    config = parse_config(raw)
    if args.out is not None:
        from dataclasses import replace
        config = replace(config, io=replace(config.io, output_dir=args.out))
    return config


def _out_path(config: RunConfig, name: str) -> str:
    if os.path.isabs(name):
        return name
    return os.path.join(config.io.output_dir, name)


def cmd_simulate(config: RunConfig) -> int:
    from .simulate import generate_truth, inject_faults, synthesize_observations, \
        write_fault_csv, write_truth_csv
    from .gnss import write_observations

    truth = generate_truth(config.scenario)
    clean = synthesize_observations(truth, config.scenario)
    observations, mask = inject_faults(clean, config.fault)

    with _atomic_write(_out_path(config, config.io.observations)) as handle:
        write_observations(observations, handle)
    with _atomic_write(_out_path(config, config.io.truth)) as handle:
        write_truth_csv(truth, handle)
    with _atomic_write(_out_path(config, config.io.faults)) as handle:
        write_fault_csv(observations, mask, handle)
    log.info("simulated %d observations over %d epochs (%d faulted)",
             len(observations), truth.times.size, int(mask.sum()))
    return EXIT_OK


def cmd_solve(config: RunConfig, observations_path: str | None) -> int:
    from .estimator import solve_observations, write_estimate_csv, write_iterations_csv
    from .gnss import read_observations

    path = observations_path or _out_path(config, config.io.observations)
    observations = read_observations(path)
    estimation = solve_observations(
        observations,
        robust=config.robust,
        solver=config.solver,
        options=config.estimator,
    )
    with _atomic_write(_out_path(config, "estimate.csv")) as handle:
        write_estimate_csv(estimation, handle)
    with _atomic_write(_out_path(config, "iterations.csv")) as handle:
        write_iterations_csv(estimation.iterations, handle)
    if not estimation.converged:
        log.warning("solver hit the iteration cap; best iterate written")
        return EXIT_MAX_ITERATIONS
    return EXIT_OK


def cmd_sweep(config: RunConfig, workers: int, figures: bool = True) -> int:
    from .evaluate import fault_sweep, write_sweep_csv, write_sweep_json

    base_seed = config.sweep_base_seed()
    results = fault_sweep(
        scenario=config.scenario,
        schemes=config.sweep.robust_configs(config.robust),
        p_grid=list(config.sweep.p_grid),
        trials=config.sweep.trials,
        base_seed=base_seed,
        solver=config.solver,
        options=config.estimator,
        workers=workers,
        progress=lambda msg: print(msg, file=sys.stderr),
        fault_sigma_m=config.fault.sigma_m,
    )
    with _atomic_write(_out_path(config, "sweep.csv")) as handle:
        write_sweep_csv(results, handle)
    with _atomic_write(_out_path(config, "sweep.json")) as handle:
        write_sweep_json(results, base_seed, handle)
    if figures:
        from .report import render_sweep_figures
        os.makedirs(config.io.output_dir, exist_ok=True)
        for path in render_sweep_figures(results, config.io.output_dir):
            log.info("wrote %s", path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robustgnss",
        description="Batch GNSS pseudorange estimation with robust "
                    "optimization schemes, scenario simulation, and fault sweeps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "generate observations, truth, and fault mask files"),
        ("solve", "estimate states from an observation file"),
        ("sweep", "run the fault-probability sweep experiment"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the JSON run configuration")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value via dotted path (repeatable)")
        p.add_argument("--out", default=None, help="output directory (overrides io.output_dir)")
        p.add_argument("--seed", type=int, default=None,
                       help="override every seed in the configuration")
        if name == "solve":
            p.add_argument("--observations", default=None,
                           help="observation JSON-lines file "
                                "(default: io.observations under the output directory)")
        if name == "sweep":
            p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                           help="parallel sweep workers (default: available parallelism)")
            p.add_argument("--no-figures", action="store_true",
                           help="skip rendering the sweep figures")
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        config = _load_config(args)
        if args.command == "simulate":
            return cmd_simulate(config)
        if args.command == "solve":
            return cmd_solve(config, args.observations)
        return cmd_sweep(config, workers=max(1, args.workers),
                         figures=not args.no_figures)
    except (ConfigError, ObservationParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SingularNormalEquationsError, DisconnectedVariableError) as exc:
        print(f"error: unobservable problem: {exc}", file=sys.stderr)
        return EXIT_UNOBSERVABLE
    except OSError as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except RobustGnssError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
