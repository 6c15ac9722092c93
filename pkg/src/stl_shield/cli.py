"""Command-line surface: evaluate, certify, generate environments, simulate.

Exit codes: 0 success, 1 specification violated or trial violation, 2 input
error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .harness import TrialConfig, export_log, export_summary, run_batch, run_trial, summarize
from .signals import WeightMatrix, read_signal_csv
from .stl import certify, eval_boolean, eval_robustness, load_predicates, parse
from .world import BasingSchedule, env_to_json, generate_environment

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3


def _read_formula_arg(arg: str) -> str:
    if os.path.exists(arg):
        with open(arg) as fh:
            return fh.read().strip()
    return arg


def _load_formula(args):
    with open(args.predicates) as fh:
        predicates = load_predicates(fh.read())
    return parse(_read_formula_arg(args.formula), predicates)


def _parse_seeds(spec: str) -> list[int]:
    seeds: list[int] = []
    for part in spec.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    if not seeds:
        raise ValueError(f"no seeds in '{spec}'")
    return seeds


def _cmd_eval(args) -> int:
    formula = _load_formula(args)
    signal = read_signal_csv(args.signal)
    rho = eval_robustness(formula, signal, args.time)
    sat = eval_boolean(formula, signal, args.time)
    print(json.dumps({"robustness": rho, "satisfied": sat, "t": args.time}))
    return EXIT_OK if rho >= 0 else EXIT_VIOLATION


def _cmd_certify(args) -> int:
    formula = _load_formula(args)
    weights = None
    if args.weights:
        weights = WeightMatrix([float(w) for w in args.weights.split(",")])
    print(certify(formula, weights).to_json())
    return EXIT_OK


def _cmd_env_gen(args) -> int:
    text = env_to_json(generate_environment(args.seed))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        print(text)
    return EXIT_OK


def _basing_from_arg(arg: str | None) -> BasingSchedule:
    if not arg:
        return BasingSchedule()
    return BasingSchedule(tuple(float(t) for t in arg.split(",")))


def _cmd_simulate(args) -> int:
    cfg = TrialConfig(
        seed=args.seed,
        duration=args.duration,
        dt=args.dt,
        basing=_basing_from_arg(args.basing),
    )
    log = run_trial(cfg)
    summary = summarize(log)
    print(json.dumps(summary, sort_keys=True))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        export_log(log, args.format, os.path.join(args.out, f"trial_{args.seed}.{args.format}"))
        with open(os.path.join(args.out, f"env_{args.seed}.json"), "w") as fh:
            fh.write(log.env_json)
    if log.outcome == "numeric_error":
        return EXIT_NUMERIC
    return EXIT_VIOLATION if log.outcome == "violation" else EXIT_OK


def _cmd_batch(args) -> int:
    seeds = _parse_seeds(args.seeds)
    rows = run_batch(seeds, TrialConfig(seed=seeds[0]), jobs=args.jobs)
    os.makedirs(args.out, exist_ok=True)
    export_summary(rows, "csv", os.path.join(args.out, "summary.csv"))
    export_summary(rows, "json", os.path.join(args.out, "summary.json"))
    for row in rows:
        print(json.dumps(row, sort_keys=True))
    if any(row["outcome"] == "violation" for row in rows):
        return EXIT_VIOLATION
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stl-shield")
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("eval", help="robustness and satisfaction of a formula on a signal")
    p_eval.add_argument("--formula", required=True, help="formula string or path to a file")
    p_eval.add_argument("--predicates", required=True, help="JSON predicate declarations")
    p_eval.add_argument("--signal", required=True, help="signal CSV with header t,x1,...,xn")
    p_eval.add_argument("--time", type=float, default=0.0)
    p_eval.set_defaults(fn=_cmd_eval)

    p_cert = sub.add_parser("certify", help="Lipschitz constant and window of a formula")
    p_cert.add_argument("--formula", required=True)
    p_cert.add_argument("--predicates", required=True)
    p_cert.add_argument("--weights", default=None, help="comma-separated diagonal weights")
    p_cert.set_defaults(fn=_cmd_certify)

    p_env = sub.add_parser("env", help="environment utilities")
    env_sub = p_env.add_subparsers(dest="env_command", required=True)
    p_gen = env_sub.add_parser("gen", help="generate a seeded environment")
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--out", default=None)
    p_gen.set_defaults(fn=_cmd_env_gen)

    p_sim = sub.add_parser("simulate", help="run one seeded trial")
    p_sim.add_argument("--seed", type=int, required=True)
    p_sim.add_argument("--duration", type=float, default=60.0)
    p_sim.add_argument("--dt", type=float, default=1.0 / 30.0)
    p_sim.add_argument("--basing", default=None, help="comma-separated toggle times")
    p_sim.add_argument("--out", default=None, help="directory for trial artifacts")
    p_sim.add_argument("--format", choices=("csv", "json"), default="csv")
    p_sim.set_defaults(fn=_cmd_simulate)

    p_batch = sub.add_parser("batch", help="run a seed range and summarise")
    p_batch.add_argument("--seeds", required=True, help="e.g. 0..19 or 3,5,8")
    p_batch.add_argument("--jobs", type=int, default=1)
    p_batch.add_argument("--out", required=True)
    p_batch.set_defaults(fn=_cmd_batch)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except FloatingPointError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
