"""Command-line interface: equilibrium, simulate, optimize, report.

Exit codes: 0 success, 1 usage or parse error, 2 infeasible case,
3 integrity failure, 130 interrupted after a checkpoint flush.
"""

from __future__ import annotations

import argparse
import json
import signal
import sys
from pathlib import Path

import numpy as np

from .attack import DimensionMismatch
from .campaign import (
    CampaignConfig,
    ConfigError,
    read_checkpoint,
    run_campaign,
)
from .cascade import RateModel, estimate_severity
from .grid import InfeasibleCase, MalformedCase, bundled_case_text, parse_case
from .powerflow import Infeasible, solve_equilibrium
from .reports import (
    IntegrityError,
    check_integrity,
    load_run,
    write_campaign_outputs,
    write_equilibrium_output,
    write_manifest,
    write_report,
    write_severity_outputs,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_INTEGRITY = 3
EXIT_INTERRUPTED = 130


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        raise SystemExit_(EXIT_USAGE, message)


class SystemExit_(Exception):
    def __init__(self, code: int, message: str = ""):
        super().__init__(message)
        self.code = code
        self.message = message


def _read_case(case: str) -> str:
    path = Path(case)
    if path.exists():
        return path.read_text(encoding="utf-8")
    if case in ("case30",):
        return bundled_case_text(case)
    raise SystemExit_(EXIT_USAGE, f"case file not found: {case}")


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _rate_model(args) -> RateModel:
    return RateModel(base_rate=args.rate_base, steepness=args.rate_steepness, arming_threshold=args.rate_arming)


def cmd_equilibrium(args) -> int:
    case_text = _read_case(args.case)
    network = parse_case(case_text)
    dispatch = solve_equilibrium(network)
    out = _out_dir(args)
    path = write_equilibrium_output(out, network, dispatch)
    print(path)
    return EXIT_OK


def cmd_simulate(args) -> int:
    case_text = _read_case(args.case)
    network = parse_case(case_text)
    dispatch = solve_equilibrium(network)
    if args.preset:
        x = np.zeros(network.num_lines) if args.preset == "min" else np.ones(network.num_lines)
        label = f"preset {args.preset}"
    else:
        x = np.asarray(json.loads(Path(args.x).read_text(encoding="utf-8")), dtype=float)
        label = Path(args.x).name
    estimate, traces = estimate_severity(
        network,
        x,
        dispatch,
        _rate_model(args),
        num_simulations=args.m_sims,
        master_seed=args.seed,
        t_max=args.t_max,
        workers=args.workers,
        keep_traces=True,
    )
    out = _out_dir(args)
    write_severity_outputs(out, estimate, traces, network.num_lines, label=label)
    write_manifest(
        out,
        {
            "command": "simulate",
            "x_source": args.preset or args.x,
            "m_sims": args.m_sims,
            "seed": args.seed,
            "t_max": args.t_max,
            "rate_base": args.rate_base,
            "rate_steepness": args.rate_steepness,
            "rate_arming": args.rate_arming,
        },
        case_text,
    )
    print(f"mean_failures={estimate.mean_failures:.4f} std_error={estimate.std_error:.4f} -> {out}")
    return EXIT_OK


_sigint_seen = False


def _install_sigint():
    def handler(signum, frame):
        global _sigint_seen
        _sigint_seen = True

    signal.signal(signal.SIGINT, handler)


def cmd_optimize(args) -> int:
    global _sigint_seen
    _sigint_seen = False
    case_text = _read_case(args.case)
    network = parse_case(case_text)

    try:
        config_doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise SystemExit_(EXIT_USAGE, f"config file not found: {args.config}")
    except json.JSONDecodeError as exc:
        raise SystemExit_(EXIT_USAGE, f"config is not valid JSON: {exc}")
    if args.seed is not None:
        config_doc["master_seed"] = args.seed
    if args.workers is not None:
        config_doc["workers"] = args.workers
    config = CampaignConfig.from_dict(config_doc)

    out = _out_dir(args)
    checkpoint_path = out / "checkpoint.json"
    resume_records = None
    if args.resume:
        if not checkpoint_path.exists():
            raise SystemExit_(EXIT_USAGE, f"--resume given but no checkpoint at {checkpoint_path}")
        saved_config, resume_records = read_checkpoint(checkpoint_path)
        mine, theirs = config.to_dict(), saved_config.to_dict()
        mine.pop("workers"), theirs.pop("workers")  # worker count is operational, not semantic
        if mine != theirs:
            raise SystemExit_(EXIT_USAGE, "checkpoint config does not match the provided config")

    _install_sigint()
    stop_after = args.stop_after

    def should_stop(done: int) -> bool:
        if _sigint_seen:
            return True
        return stop_after is not None and done >= stop_after

    result = run_campaign(
        config,
        network,
        checkpoint_path=checkpoint_path,
        resume_records=resume_records,
        should_stop=should_stop,
    )
    if result.interrupted:
        print(f"interrupted after {len(result.records)} evaluations; checkpoint at {checkpoint_path}", file=sys.stderr)
        return EXIT_INTERRUPTED
    write_campaign_outputs(out, result, case_text)
    best = result.best or {}
    print(
        f"completed {len(result.records)} evaluations; "
        f"best f={best.get('raw_objective', float('nan')):.4f} at l1={best.get('l1_norm', float('nan')):.4f} -> {out}"
    )
    return EXIT_OK


def cmd_report(args) -> int:
    runs = []
    for records_path in args.records:
        if not Path(records_path).exists():
            raise SystemExit_(EXIT_USAGE, f"records file not found: {records_path}")
        runs.append(load_run(records_path))
    for run in runs:
        check_integrity(run)
    out = _out_dir(args)
    write_report(runs, out)
    print(out / "comparison.txt")
    print((out / "comparison.txt").read_text(encoding="utf-8"), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tightline", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    eq = sub.add_parser("equilibrium", help="solve the pre-attack dispatch and write equilibrium.json")
    eq.add_argument("--case", required=True, help="MATPOWER-style case file, or 'case30' for the bundled case")
    eq.add_argument("--out-dir", default="tightline_out")
    eq.set_defaults(func=cmd_equilibrium)

    sim = sub.add_parser("simulate", help="estimate cascade severity for one tightening vector")
    sim.add_argument("--case", required=True)
    group = sim.add_mutually_exclusive_group(required=True)
    group.add_argument("--x", help="JSON file holding the per-line tightening vector")
    group.add_argument("--preset", choices=("min", "max"))
    sim.add_argument("--m-sims", type=int, default=200)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--t-max", type=float, default=1e5)
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument("--rate-base", type=float, default=1e-3)
    sim.add_argument("--rate-steepness", type=float, default=8.0)
    sim.add_argument("--rate-arming", type=float, default=0.97)
    sim.add_argument("--out-dir", default="tightline_out")
    sim.set_defaults(func=cmd_simulate)

    opt = sub.add_parser("optimize", help="run an attack-search campaign from a JSON config")
    opt.add_argument("--case", required=True)
    opt.add_argument("--config", required=True)
    opt.add_argument("--seed", type=int, default=None, help="override master_seed from the config")
    opt.add_argument("--workers", type=int, default=None, help="override workers from the config")
    opt.add_argument("--out-dir", default="tightline_out")
    opt.add_argument("--resume", action="store_true", help="continue from this out-dir's checkpoint")
    opt.add_argument("--stop-after", type=int, default=None, help="stop cleanly after N evaluations (exit 130)")
    opt.set_defaults(func=cmd_optimize)

    rep = sub.add_parser("report", help="compare one or more records.jsonl files")
    rep.add_argument("records", nargs="+")
    rep.add_argument("--out-dir", default="tightline_out")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit_ as exc:
        if exc.message:
            print(f"error: {exc.message}", file=sys.stderr)
        return exc.code
    except (MalformedCase, ConfigError, DimensionMismatch, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InfeasibleCase, Infeasible) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except IntegrityError as exc:
        print(f"integrity: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except KeyboardInterrupt:
        return EXIT_INTERRUPTED


if __name__ == "__main__":
    sys.exit(main())
