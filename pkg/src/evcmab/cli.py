"""Command line entry point: ``evcmab {generate,preprocess,run,report}``.

Exit codes: 0 on success, 2 for configuration or validation errors,
3 when the trip is infeasible on the instance.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .bandit import PolicyKind
from .experiment import (
    EmptyInput,
    GenerationFailure,
    GeneratorSpec,
    generate_instance,
    load_config,
    prepare_feasibility,
    prepare_road_graph,
    prepare_trip,
    report,
    run_experiment,
)
from .feasibility import IsolatedTerminal
from .road_graph import ParseError, Unreachable, ValidationError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evcmab", description="Charging station selection bandit experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("generate", "write a synthetic road network"),
        ("preprocess", "build and cache the feasibility graph"),
        ("run", "run all (seed, policy) pairs and write traces plus a report"),
        ("report", "summarise traces into summary.csv and regret.svg"),
    ]:
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", type=Path, required=name != "report")
        sp.add_argument("--out", type=Path, help="output directory (overrides the config)")
        if name == "run":
            sp.add_argument("--seeds", help="comma separated seeds, e.g. 1,2,3")
            sp.add_argument("--policy", action="append",
                            help="only run this policy (repeatable): " + ", ".join(k.value for k in PolicyKind))
    return p


def _cmd_generate(args) -> None:
    cfg = load_config(args.config, args.out)
    nodes, edges = cfg.instance_files
    spec = cfg.generator or GeneratorSpec()
    generate_instance(spec, nodes, edges)
    print(f"wrote {nodes} and {edges}")


def _cmd_preprocess(args) -> None:
    cfg = load_config(args.config, args.out)
    road = prepare_road_graph(cfg)
    fg = prepare_feasibility(cfg, road)
    prepare_trip(cfg, road, fg)
    print(f"{len(fg.stations)} stations, {len(fg.edges)} feasible edges -> {cfg.out_dir / 'feasibility'}")


def _cmd_run(args) -> None:
    cfg = load_config(args.config, args.out)
    if args.seeds:
        cfg = replace(cfg, seeds=[int(s) for s in args.seeds.split(",") if s.strip()])
    if args.policy:
        cfg = replace(cfg, policies=[PolicyKind.parse(p) for p in args.policy])
    run_experiment(cfg)
    _print_summary(report(cfg.out_dir / "traces", cfg.out_dir))


def _cmd_report(args) -> None:
    if args.out is None and args.config is None:
        raise ValueError("report needs --out or --config")
    out = args.out if args.out is not None else load_config(args.config).out_dir
    _print_summary(report(out / "traces", out))


def _print_summary(summary) -> None:
    for s in summary:
        print(f"{s['policy']:>15s}  runs={s['runs']}  regret={s['mean_final_regret_s']:.4g} "
              f"(+/- {s['std_final_regret_s']:.3g}) s")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cmd = {"generate": _cmd_generate, "preprocess": _cmd_preprocess,
           "run": _cmd_run, "report": _cmd_report}[args.command]
    try:
        cmd(args)
    except (IsolatedTerminal, Unreachable) as exc:
        print(f"infeasible instance: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ValidationError, ParseError, EmptyInput, GenerationFailure, configparser.Error,
            ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
