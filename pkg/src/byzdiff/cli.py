"""Command-line entry point: ``byzdiff simulate|experiment|bounds|plot-data``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.

``simulate --trace FILE`` writes one JSON object per line, keys sorted,
told apart by ``type``:

    config   n, t, fan_out, protocol, block_size, perturbation fields, seed
    failure  faulty ids, behaviors by id, spam_budget, knows_genuine,
             spam_target, victim
    update   id, intro_round, initial_set, genuine      (one per update)
    round    round, max_fanin, and per-replica lists sent, recv_correct,
             recv_correct_nonempty, recv_faulty          (one per round)
    accept   replica, update, round                      (one per acceptance)
    end      final_round, terminated

``terminated`` is false when the round cap fired before every correct
replica accepted every genuine update.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import analysis
from .adversary import Behavior, SpamTarget
from .core import ConfigError, InvalidParameter, PerturbationConfig, SystemConfig, validate_config
from .engine import StopRule, run_trial, trace_to_jsonl
from .experiment import (
    BUILTINS,
    DEFAULT_PLOT_METRICS,
    GENUINE_ID,
    AdversarySpec,
    AlphaRule,
    builtin,
    emit_plot_data,
    load_specs,
    parse_protocol,
    read_rows,
    run_experiment,
    setup_trial,
)
from .metrics import compute_fanin, default_window, delay_sample

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("byzdiff")


def _alpha(text: str, n: int, t: int) -> int:
    return AlphaRule.parse(text)(n, t)


def cmd_simulate(args) -> int:
    config = SystemConfig(
        n=args.n,
        t=args.t,
        fan_out=args.fan_out,
        protocol=parse_protocol(args.protocol, args.t),
        perturbation=PerturbationConfig(args.perturb_prob, args.drop_fraction, args.max_delay),
        seed=args.seed,
    )
    validated = validate_config(config)
    for a in validated.advisories:
        log.warning("advisory: %s", a)
    adversary = AdversarySpec(
        Behavior(args.behavior),
        args.faulty,
        args.spam_budget,
        not args.no_genuine,
        SpamTarget(args.spam_target),
    )
    cfg, schedule, failure = setup_trial(config, _alpha(args.alpha, args.n, args.t), adversary, 0)
    trace = run_trial(cfg, schedule, failure, StopRule(args.max_rounds))
    l, k = default_window(trace, GENUINE_ID)
    fan = compute_fanin(trace, windows=[(l, k)])
    report = {
        "delay": delay_sample(trace, GENUINE_ID),
        "terminated": trace.terminated,
        "final_round": trace.final_round,
        "alpha": schedule[0].alpha,
        "faulty": sorted(failure.faulty_set),
        "fanin_mean_max": fan.mean_max,
        "fanin_peak": fan.peak,
        "fanin_amortized": fan.amortized[(l, k)],
        "advisories": list(validated.advisories),
    }
    if len(schedule) > 1:
        report["spurious_accepts"] = int((trace.accept_round[1][trace.correct_mask] >= 0).sum())
    if args.trace:
        Path(args.trace).write_text(trace_to_jsonl(trace))
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_experiment(args) -> int:
    if args.name in BUILTINS:
        specs = [builtin(args.name)]
    else:
        path = Path(args.name)
        if not path.exists():
            raise ConfigError([InvalidParameter("experiment", f"{args.name!r} is neither a built-in {BUILTINS} nor a file")])
        specs = load_specs(path.read_text())
        if args.section:
            specs = [s for s in specs if s.name == args.section]
    out = Path(args.out)
    for spec in specs:
        if args.seed is not None:
            spec = replace(spec, base=spec.base.with_seed(args.seed))
        if args.trials is not None:
            spec = replace(spec, trials=args.trials)
        if args.values:
            spec = replace(spec, values=tuple(args.values))
        csv_path = spec.csv_path or out / f"{spec.name}.csv"
        json_path = spec.json_path or out / f"{spec.name}.json"
        result = run_experiment(spec, workers=args.workers, csv_path=csv_path, json_path=json_path)
        for a in result.summary["advisories"]:
            log.warning("advisory: %s", a)
        print(f"{spec.name}: {len(result.rows)} rows -> {csv_path}")
        if args.plot:
            for p in emit_plot_data(result.rows, out / "plot"):
                print(f"  {p}")
    return EXIT_OK


def cmd_bounds(args) -> int:
    n, t, f = args.n, args.t, args.fan_out
    alpha = _alpha(args.alpha, n, t)
    ell = args.ell if args.ell is not None else 4 * t
    out = {"params": {"n": n, "t": t, "alpha": alpha, "fan_out": f, "ell": ell}}
    if alpha <= n:
        out["counting_lower_bound"] = analysis.counting_lower_bound(n, alpha, t, f)
    if t <= alpha:
        out["coupon_R"] = analysis.coupon_R(alpha, t)
        out["random_delay_form"] = analysis.random_delay_form(n, alpha, t, f).value
        out["tree_delay_form"] = analysis.tree_delay_form(n, alpha, t, f, ell).value
    out["fanin_forms"] = {b.name: b.value for b in analysis.fanin_forms(n, t, f, ell)}
    out["tradeoff_applies"] = analysis.tradeoff_applies(n, t)
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_plot_data(args) -> int:
    rows = read_rows(Path(args.csv).read_text())
    metrics = DEFAULT_PLOT_METRICS if args.metrics is None else tuple(m for m in args.metrics.split(",") if m)
    for p in emit_plot_data(rows, args.out, metrics):
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="byzdiff", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one trial and print its delay and fan-in")
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--t", type=int, required=True)
    sim.add_argument("--fan-out", type=int, default=1)
    sim.add_argument("--protocol", default="random", help="random | ltree:<ℓ> | tree | round_robin")
    sim.add_argument("--alpha", default="t_plus_1", help="<int> | t_plus_1 | sqrt_2tn")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--behavior", default="silent", choices=[b.value for b in Behavior])
    sim.add_argument("--faulty", type=int, default=None, help="faulty count (default t-1)")
    sim.add_argument("--spam-budget", type=int, default=1)
    sim.add_argument("--spam-target", default="single", choices=[s.value for s in SpamTarget])
    sim.add_argument("--no-genuine", action="store_true", help="spam carries spurious updates only")
    sim.add_argument("--perturb-prob", type=float, default=0.0)
    sim.add_argument("--drop-fraction", type=float, default=0.5)
    sim.add_argument("--max-delay", type=int, default=2)
    sim.add_argument("--max-rounds", type=int, default=None)
    sim.add_argument("--trace", help="write the JSON-lines trace here")
    sim.set_defaults(func=cmd_simulate)

    exp = sub.add_parser("experiment", help="run a built-in experiment or a spec file")
    exp.add_argument("name", help=f"one of {', '.join(BUILTINS)} or a spec file path")
    exp.add_argument("--section", help="run only this section of a spec file")
    exp.add_argument("--out", default="results")
    exp.add_argument("--seed", type=int, default=None, help="override the experiment seed")
    exp.add_argument("--trials", type=int, default=None)
    exp.add_argument("--values", type=int, nargs="+", help="override the sweep values")
    exp.add_argument("--workers", type=int, default=None, help="worker processes (default $BYZDIFF_WORKERS or 1)")
    exp.add_argument("--plot", action="store_true", help="also write plot-data files")
    exp.set_defaults(func=cmd_experiment)

    bnd = sub.add_parser("bounds", help="print closed-form bounds for a parameter tuple")
    bnd.add_argument("--n", type=int, required=True)
    bnd.add_argument("--t", type=int, required=True)
    bnd.add_argument("--alpha", default="t_plus_1")
    bnd.add_argument("--fan-out", type=int, default=1)
    bnd.add_argument("--ell", type=int, default=None, help="block size (default 4t)")
    bnd.set_defaults(func=cmd_bounds)

    plot = sub.add_parser("plot-data", help="turn a result CSV into x/y/stderr series files")
    plot.add_argument("csv")
    plot.add_argument("--out", default="plot")
    plot.add_argument("--metrics", default=None, help="comma-separated metric names")
    plot.set_defaults(func=cmd_plot_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidParameter, ValueError, KeyError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        print("interrupted; partial results were flushed", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:  # noqa: BLE001
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
