"""Command-line front end.

Subcommands: gen (write a game or CMDP file), run (execute an experiment
config), sweep (eta grid), rate (fit a rate exponent to a gap curve),
verify (recheck bound flags from raw logs). Exit codes: 0 success,
1 a bound check failed, 2 usage or config error.
"""

import argparse
import csv
import json
import sys

from .bench import (
    DEFAULT_INV_ETA_GRID,
    ConfigError,
    ExperimentConfig,
    fit_rate,
    run_experiment,
    sweep_eta,
    verify_reports,
    write_sweep_csv,
)
from .cmdp import make_cmdp
from .games import GameGenSpec, make_game

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2


def _cmd_gen(args):
    if args.kind == "cmdp":
        cmdp = make_cmdp(args.states, args.actions, args.horizon, args.seed,
                         concentration=args.concentration)
        payload = cmdp.to_json_dict()
    else:
        params = {}
        if args.kind == "bradley_terry":
            if not args.rewards:
                raise ConfigError("bradley_terry needs --rewards")
            params["rewards"] = args.rewards
        if args.kind == "cycle":
            params["margin"] = args.margin
        spec = GameGenSpec(kind=args.kind, n=args.n, seed=args.seed, params=params)
        payload = make_game(spec).to_json_dict()
        payload["generator"] = spec.to_json_dict()
    with open(args.out, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_run(args):
    config = ExperimentConfig.from_json_file(args.config)
    summary, violations = run_experiment(config)
    print(f"{len(summary['runs'])} runs, {violations} bound violations "
          f"-> {config.out_dir}/summary.json")
    return EXIT_CHECK_FAILED if violations else EXIT_OK


def _cmd_sweep(args):
    config = ExperimentConfig.from_json_file(args.config)
    grid = args.inv_eta if args.inv_eta else None
    rows = sweep_eta(config, inv_grid=grid)
    out = args.out or "sweep.csv"
    write_sweep_csv(rows, out)
    failed = [r for r in rows if r["status"] != "ok"]
    print(f"{len(rows)} cells ({len(failed)} flagged) -> {out}")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def _cmd_rate(args):
    with open(args.curve, newline="") as fh:
        reader = csv.DictReader(fh)
        if "T" not in reader.fieldnames or "gap" not in reader.fieldnames:
            raise ConfigError(f"{args.curve}: need columns T,gap")
        points = [(float(row["T"]), float(row["gap"])) for row in reader]
    result = fit_rate(points, tail_fraction=args.tail)
    text = json.dumps(result.to_json_dict(), sort_keys=True, indent=1)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def _cmd_verify(args):
    violations, mismatches = verify_reports(args.dir)
    for name in mismatches:
        print(f"flag mismatch: {name}")
    for name in violations:
        print(f"bound violated: {name}")
    if not violations and not mismatches:
        print("all bound checks verified")
        return EXIT_OK
    return EXIT_CHECK_FAILED


def build_parser():
    parser = argparse.ArgumentParser(
        prog="prefgame",
        description="Tabular solvers and benchmarks for zero-sum preference games.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="write a game or CMDP instance to JSON")
    gen.add_argument("--kind", required=True,
                     choices=["random_skew", "bradley_terry", "cycle", "cmdp"])
    gen.add_argument("--n", type=int, default=3, help="response count (game kinds)")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--out", required=True)
    gen.add_argument("--rewards", type=float, nargs="+", help="bradley_terry rewards")
    gen.add_argument("--margin", type=float, default=0.5, help="cycle margin")
    gen.add_argument("--states", type=int, default=3, help="cmdp states per step")
    gen.add_argument("--actions", type=int, default=3, help="cmdp actions per state")
    gen.add_argument("--horizon", type=int, default=2)
    gen.add_argument("--concentration", type=float, default=0.3,
                     help="cmdp transition sharpness (Dirichlet parameter)")
    gen.set_defaults(func=_cmd_gen)

    run = sub.add_parser("run", help="execute an experiment config")
    run.add_argument("--config", required=True)
    run.set_defaults(func=_cmd_run)

    sweep = sub.add_parser("sweep", help="run an eta grid and tabulate final gaps")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--inv-eta", type=float, nargs="+",
                       help=f"1/eta grid (default {list(DEFAULT_INV_ETA_GRID)})")
    sweep.add_argument("--out", help="output CSV path")
    sweep.set_defaults(func=_cmd_sweep)

    rate = sub.add_parser("rate", help="fit a log-log rate to a T,gap CSV curve")
    rate.add_argument("--curve", required=True)
    rate.add_argument("--tail", type=float, default=0.5)
    rate.add_argument("--out")
    rate.set_defaults(func=_cmd_rate)

    verify = sub.add_parser("verify", help="recheck bound flags from raw logs")
    verify.add_argument("--dir", required=True)
    verify.set_defaults(func=_cmd_verify)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
