#!/usr/bin/env python

import argparse
import shutil
import signal
import sys
from importlib.metadata import version
from pathlib import Path

import numpy as np
import shtab

from pyrcn.config import MODES, RunSpec, echo, parse_overrides
from pyrcn.counter import CounterParams, TargetSpec, markov_tail_bound, provision_from_target, steady_state
from pyrcn.errors import ConfigError, PyrcnError
from pyrcn.export import SUPPORTED_LANGUAGES, TableExporter, sibling
from pyrcn.hysteresis import (
    HysteresisParams,
    Which,
    closed_recursions,
    first_passage_mean_busy,
    first_passage_mean_return,
    oracle_passage_times,
    renewal_occupancy,
    replacement_rate_hysteresis,
    retune_mu_for_target,
    scenario_table,
    sojourn_cdf,
)
from pyrcn.miqcp import export_miqcp
from pyrcn.netfile import read_network
from pyrcn.netsim import simulate_network
from pyrcn.network import (
    AvailabilityProfile,
    FixedK,
    FlowMode,
    OptimizedK,
    ServiceAccounting,
    expected_occupancy,
    provision_network,
    solve_flow,
    stability,
)
from pyrcn.optimizer import CostWeights, cost_curve, minimize, minimize_with_return_cap, objective
from pyrcn.placement import solve_exact
from pyrcn.reductions import (
    KnapsackInstance,
    PartitionInstance,
    check_knapsack,
    check_partition,
    verify_reductions,
    write_instances,
)
from pyrcn.simulator import HorizonKind, SimConfig, simulate_counter, simulate_fractional_K
from pyrcn.utils import get_logger

EXIT_OK = 0
EXIT_VERDICT = 1
EXIT_ERROR = 2


def get_main_parser():
    def formatter(prog):
        width = min(shutil.get_terminal_size().columns // 3, 80)
        return argparse.ArgumentDefaultsHelpFormatter(prog, max_help_position=width)

    parser = argparse.ArgumentParser(
        prog="pyrcn",
        formatter_class=formatter,
        description='Use "%(prog)s command_name --help" to get detailed help to a specific command',
    )
    for grp in parser._action_groups:
        if grp.title == "options":
            grp.title = "Options"
        elif grp.title == "positional arguments":
            grp.title = "Commands"

    parser.add_argument(
        "-V",
        "--version",
        help="Print version information and quit",
        action="store_true",
    )
    parser.add_argument(
        "-v",
        "--verbosity",
        help="Set verbosity level (default: info)",
        choices=["warning", "info", "debug"],
        default="info",
    )
    parser.add_argument(
        "--debug-logfile",
        help="Dump debug logs to a file",
        type=Path,
        default=None,
    )
    parser.add_argument(
        "--debug-log-filter",
        help="Filter debug log types",
        default=None,
    )

    parser_cmd = parser.add_subparsers(help="Desired action to perform", dest="command")

    # help
    parser_cmd.add_parser(
        "help",
        help="Print this help message",
        description="Print help message",
        add_help=False,
    )

    # parent subparser with the arguments every run takes
    parser_run_args = argparse.ArgumentParser(add_help=False)
    parser_run_args.add_argument(
        "--in",
        dest="inputs",
        help="key=value config file or network description; may be repeated",
        metavar="PATH",
        type=Path,
        action="append",
        default=[],
    )
    parser_run_args.add_argument(
        "--format",
        dest="export_format",
        choices=("csv", "json"),
        default="csv",
        help="The output table format: CSV with a header row or one JSON object per line.",
    )
    parser_run_args.add_argument(
        "--out",
        help="Output table file; companion files are written next to it. Prints to stdout when omitted",
        metavar="PATH",
        type=Path,
        default=None,
    )
    parser_run_args.add_argument("--seed", help="Seed of every random stream", type=int, default=0)
    parser_run_args.add_argument(
        "--set",
        dest="overrides",
        help="Override a configuration key; may be repeated",
        metavar="KEY=VALUE",
        action="append",
        default=[],
    )

    # parent subparser for the flow mode
    parser_mode = argparse.ArgumentParser(add_help=False)
    parser_mode.add_argument(
        "--mode",
        help="Flow balance: every request entering a cache (verbatim_flow) or only misses (miqcp_flow)",
        choices=MODES,
        default="verbatim_flow",
    )

    # parent subparser for lang option
    parser_lang = argparse.ArgumentParser(add_help=False)
    parser_lang.add_argument(
        "-l",
        "--lang",
        help='Two letter language code or "auto" for system language.',
        choices=["auto", *sorted(SUPPORTED_LANGUAGES)],
        default="en",
    )

    # parent subparser for decimal-localization option
    parser_decimal_localization = argparse.ArgumentParser(add_help=False)
    parser_decimal_localization.add_argument(
        "--decimal-localization",
        action=argparse.BooleanOptionalAction,
        default=False,
        help="Whether to localize decimal numbers printed to the console.",
    )

    common = [parser_run_args, parser_lang, parser_decimal_localization]

    info = "Steady state of a single reinforced counter: pi_up, gamma, E[B], E[R] and Markov tail bounds"
    parser_cmd.add_parser("analyze", formatter_class=formatter, parents=common, help=info, description=info)

    info = "Threshold K minimizing the weighted tick and return-time cost at a fixed occupancy"
    parser_cmd.add_parser("optimize", formatter_class=formatter, parents=common, help=info, description=info)

    info = (
        "Counter with hysteresis: retune mu for every K_h and tabulate the sojourn metrics."
        + " With --out, the CDFs of B and R are written next to the table"
    )
    parser_cmd.add_parser("hysteresis", formatter_class=formatter, parents=common, help=info, description=info)

    info = "Flow balance, stability and response time of a cache network"
    parser_cmd.add_parser(
        "network", formatter_class=formatter, parents=[*common, parser_mode], help=info, description=info
    )

    info = "Optimal static placement of files on a cache network, or its MIQCP model text"
    parser_cmd.add_parser(
        "placement", formatter_class=formatter, parents=[*common, parser_mode], help=info, description=info
    )

    info = "Build the Partition or Knapsack placement instances and check both sides agree"
    parser_cmd.add_parser("reduce", formatter_class=formatter, parents=common, help=info, description=info)

    info = "Simulate a counter, a counter with fractional threshold or a cache network"
    parser_cmd.add_parser(
        "simulate", formatter_class=formatter, parents=[*common, parser_mode], help=info, description=info
    )

    # completion
    info = "Print shell tab completion"
    parser_completion = parser_cmd.add_parser(
        "completion",
        formatter_class=formatter,
        help=info,
        description=info,
    )
    shtab.add_argument_to(parser_completion, "shell", parent=parser)
    return parser


def exit_gracefully(signum, frame):
    # restore the original signal handler as otherwise evil things will happen
    # in input when CTRL+C is pressed, and our signal handler is not re-entrant
    global original_sigint
    signal.signal(signal.SIGINT, original_sigint)

    try:
        if input("\nReally quit? (y/n)> ").lower().startswith("y"):
            exit(1)

    except KeyboardInterrupt:
        print("Ok ok, quitting")
        exit(1)

    # restore the exit gracefully handler here
    signal.signal(signal.SIGINT, exit_gracefully)


def _flow_mode(spec: RunSpec) -> FlowMode:
    return FlowMode(spec.mode)


def _accounting(spec: RunSpec) -> ServiceAccounting:
    try:
        return ServiceAccounting(spec["accounting"])
    except ValueError:
        choices = ", ".join(a.value for a in ServiceAccounting)
        raise ConfigError(f"accounting must be one of {choices}, got {spec['accounting']!r}") from None


def _network(spec: RunSpec):
    if spec.network is None:
        raise ConfigError(f"{spec.command} needs a network description, pass it with --in")
    net, profile = read_network(spec.network)
    if profile is None:
        profile = AvailabilityProfile(np.zeros((net.C, net.F)))
    return net, profile


def cmd_analyze(spec: RunSpec, exporter: TableExporter, fp) -> int:
    lambda_, K = spec["lambda"], spec["K"]
    if spec["pi_up"] is not None:
        target = TargetSpec(spec["pi_up"], lambda_, K)
        params = provision_from_target(target).params(target)
    else:
        params = CounterParams(lambda_, spec["mu"], K)
    state = steady_state(params)
    row = {
        "lambda": params.lambda_,
        "mu": params.mu,
        "K": params.K,
        "rho": state.rho,
        "pi_up": state.pi_up,
        "gamma": state.gamma,
        "mean_busy": state.mean_busy,
        "mean_return": state.mean_return,
        "r": spec["r"],
        "markov_busy": markov_tail_bound(state.mean_busy, spec["r"]),
        "markov_return": markov_tail_bound(state.mean_return, spec["r"]),
    }
    exporter.export_to(spec.out, [row], fp)
    return EXIT_OK


def cmd_optimize(spec: RunSpec, exporter: TableExporter, fp) -> int:
    log = get_logger(__name__)
    pi_up, lambda_ = spec["pi_up"], spec["lambda"]
    weights = CostWeights(spec["alpha"], spec["beta"], spec["K_max"])
    if spec["R_star"] is not None:
        K_star = minimize_with_return_cap(weights, pi_up, lambda_, spec["R_star"])
        cost = objective(K_star, weights, pi_up, lambda_)
    else:
        K_star, cost = minimize(weights, pi_up, lambda_)
    target = TargetSpec(pi_up, lambda_, K_star)
    provisioning = provision_from_target(target)
    optimum = {
        "K_star": K_star,
        "cost": cost,
        "mu": provisioning.mu,
        "gamma": provisioning.gamma,
        "mean_return": provisioning.mean_return,
    }
    log.info(f"K*={K_star:.6g}, cost={cost:.6g}")
    if not spec["sweep"]:
        exporter.export_to(spec.out, [optimum], fp)
        return EXIT_OK

    step = spec["K_step"]
    if not step > 0:
        raise ConfigError(f"K_step must be > 0, got {step}")
    grid = np.arange(0.0, weights.K_max + step / 2, step)
    grid = grid[grid <= weights.K_max]
    costs = cost_curve(weights, pi_up, lambda_, grid)
    curve = []
    for K, c in zip(grid, costs):
        p = provision_from_target(TargetSpec(pi_up, lambda_, float(K)))
        curve.append({"K": float(K), "cost": float(c), "mu": p.mu, "gamma": p.gamma, "mean_return": p.mean_return})
    exporter.export_to(spec.out, curve, fp)
    if spec.out is not None:
        exporter.export_to(sibling(spec.out, "optimum"), [optimum])
    return EXIT_OK


def cmd_hysteresis(spec: RunSpec, exporter: TableExporter, fp) -> int:
    lambda_, pi_up, K = spec["lambda"], spec["pi_up"], spec["K"]
    K_h_values = [int(k) for k in spec["K_h"]]
    rows = scenario_table(lambda_, pi_up, K, K_h_values, t=spec["t"])
    exporter.export_to(spec.out, rows, fp)
    if spec.out is None:
        return EXIT_OK

    grid = np.linspace(0.0, spec["grid_max"], spec["grid_points"])
    for row in rows:
        params = HysteresisParams(lambda_, row["mu"], K, row["K_h"])
        cdf_rows = [{"t": float(t)} for t in grid]
        for which in Which:
            for r, value in zip(cdf_rows, sojourn_cdf(params, which, grid)):
                r[f"cdf_{which.value}"] = float(value)
        exporter.export_to(sibling(spec.out, f"cdf_Kh{row['K_h']}"), cdf_rows)

    if spec["recursions"]:
        # closed recursions against first passage, at the mu that holds pi_up with K_h = K
        params = HysteresisParams(lambda_, retune_mu_for_target(pi_up, lambda_, K, K), K, K)
        closed = closed_recursions(params, K + 1)
        exact = oracle_passage_times(params, K + 1)
        table = [
            {
                "K_h": K - gap,
                "nu_closed": closed.nu[gap],
                "nu_first_passage": exact.nu[gap],
                "xi_closed": closed.xi[gap],
                "xi_first_passage": exact.xi[gap],
            }
            for gap in range(K + 1)
        ]
        exporter.export_to(sibling(spec.out, "recursions"), table)
    return EXIT_OK


def cmd_network(spec: RunSpec, exporter: TableExporter, fp) -> int:
    log = get_logger(__name__)
    net, profile = _network(spec)
    solution = solve_flow(
        net, profile, mode=_flow_mode(spec), workers=spec["workers"], queue_length=spec["queue_length"]
    )
    report = stability(net, solution)
    occupancy = expected_occupancy(profile, net, samples=spec["samples"], seed=spec.seed)
    rows = [
        {
            "cache": i + 1,
            "alpha": float(solution.alpha_cache[i]),
            "eta": float(net.eta[i]),
            "slack": float(report.slack[i]),
            "stable": bool(report.slack[i] > 0),
            "expected_occupancy": float(occupancy.expected[i]),
            "overflow": float(occupancy.overflow[i]),
        }
        for i in range(net.C)
    ]
    exporter.export_to(spec.out, rows, fp)
    log.info(f"E[N]={solution.EN:.6g}, E[T]={solution.ET:.6g}")

    if spec.out is not None:
        contents = [
            {"cache": i + 1, "file": c + 1, "pi": float(profile.pi[i, c]), "alpha": float(solution.alpha[i, c])}
            for i in range(net.C)
            for c in range(net.F)
        ]
        exporter.export_to(sibling(spec.out, "contents"), contents)
        summary = {"Lambda": net.total_demand, "EN": solution.EN, "ET": solution.ET, "stable": report.stable}
        exporter.export_to(sibling(spec.out, "summary"), [summary])

    if spec["K"] is not None or spec["optimize_K"]:
        if spec["optimize_K"]:
            policy = OptimizedK(CostWeights(spec["alpha"], spec["beta"]))
        else:
            policy = FixedK(spec["K"])
        counters = [
            {
                "cache": p.cache + 1,
                "file": p.content + 1,
                "pi_target": p.pi_target,
                "arrival_rate": p.arrival_rate,
                "status": p.status,
                "K": p.params.K if p.params else None,
                "mu": p.params.mu if p.params else None,
            }
            for p in provision_network(net, profile, policy)
        ]
        if spec.out is not None:
            exporter.export_to(sibling(spec.out, "counters"), counters)
        else:
            fp.write("\n")
            exporter.export(fp, counters)

    if not report.stable:
        log.warning("Network is unstable: " + ", ".join(f"cache {i + 1}" for i in np.flatnonzero(report.slack <= 0)))
        return EXIT_VERDICT
    return EXIT_OK


def cmd_placement(spec: RunSpec, exporter: TableExporter, fp) -> int:
    log = get_logger(__name__)
    net, _ = _network(spec)
    if spec["export_model"]:
        text = export_miqcp(net)
        if spec.out is None:
            fp.write(text)
        else:
            spec.out.write_text(text, encoding="utf-8")
            log.info(f"Wrote {spec.out}")
        return EXIT_OK

    result = solve_exact(
        net,
        mode=_flow_mode(spec),
        accounting=_accounting(spec),
        strict=spec["strict"],
        method=spec["method"],
        workers=spec["workers"],
    )
    if result.placement is None:
        rows = [{"feasible": False, "objective": result.objective, "violated": result.violated}]
    else:
        rows = [
            {
                "cache": i + 1,
                "files": " ".join(str(f + 1) for f in result.placement.files_at(i)),
                "load": float(result.load[i]),
                "eta": float(net.eta[i]),
                "feasible": result.feasible,
                "objective": result.objective,
            }
            for i in range(net.C)
        ]
    exporter.export_to(spec.out, rows, fp)
    if not result.feasible:
        log.warning(f"No feasible placement ({result.violated})")
        return EXIT_VERDICT
    log.info(f"Optimal placement, sum of alpha = {result.objective:.6g}\n{result.placement}")
    return EXIT_OK


def cmd_reduce(spec: RunSpec, exporter: TableExporter, fp) -> int:
    kind = spec["kind"]
    if kind == "partition":
        instance = PartitionInstance(tuple(int(v) for v in spec["values"]))
        rows = [check_partition(instance)]
        paths = write_instances(spec.out, pt=instance) if spec.out is not None else []
    elif kind == "knapsack":
        weights, values = spec["weights"], spec["item_values"]
        if len(weights) != len(values):
            raise ConfigError(f"weights and item_values differ in length: {len(weights)} != {len(values)}")
        instance = KnapsackInstance(spec["c"], tuple(zip(weights, values)))
        rows = [check_knapsack(instance)]
        paths = write_instances(spec.out, kp=instance) if spec.out is not None else []
    elif kind == "verify":
        rows = verify_reductions(
            spec["max_n"], spec["max_value"], spec["knapsack_max_n"], spec["knapsack_trials"], seed=spec.seed
        )
        paths = []
    else:
        raise ConfigError(f"kind must be partition, knapsack or verify, got {kind!r}")

    if spec.out is not None:
        # --out names a directory here, the instances go into it next to the verdicts
        spec.out.mkdir(parents=True, exist_ok=True)
        exporter.export_to(spec.out / f"verdicts.{exporter.format}", rows)
        get_logger(__name__).info(f"Wrote {len(paths)} instance files to {spec.out}")
    else:
        exporter.export(fp, rows)
    return EXIT_OK if all(row["agree"] for row in rows) else EXIT_VERDICT


def _sim_config(spec: RunSpec, network: bool) -> SimConfig:
    kind = spec["horizon_kind"] or ("time" if network else "events")
    try:
        horizon_kind = HorizonKind(kind)
    except ValueError:
        raise ConfigError(f"horizon_kind must be events or time, got {kind!r}") from None
    horizon = spec["horizon"]
    if horizon is None:
        horizon = 2000.0 if horizon_kind is HorizonKind.TIME else 1e6
    return SimConfig(
        seed=spec.seed,
        horizon=float(horizon),
        horizon_kind=horizon_kind,
        warmup=spec["warmup"],
        replications=spec["replications"],
        batches=spec["batches"],
        workers=spec["workers"],
    )


def cmd_simulate(spec: RunSpec, exporter: TableExporter, fp) -> int:
    log = get_logger(__name__)
    kind = spec["kind"]
    if kind == "network":
        net, profile = _network(spec)
        cfg = _sim_config(spec, network=True)
        if spec["live"]:
            provisions = provision_network(net, profile, FixedK(spec["K"]))
            report = simulate_network(
                net, provisions, cfg, accounting=_accounting(spec), pi_targets=profile, K_h_gap=int(spec["K_h_gap"])
            )
        else:
            report = simulate_network(net, profile, cfg, accounting=_accounting(spec))
        flow = solve_flow(net, profile, mode=_flow_mode(spec))
        rows = report.rows()
        for row in rows:
            if row["metric"].startswith("alpha_"):
                row["exact"] = float(flow.alpha_cache[int(row["metric"].split("_")[1]) - 1])
            elif row["metric"].startswith("pi_"):
                _, i, c = row["metric"].split("_")
                row["exact"] = float(profile.pi[int(i) - 1, int(c) - 1])
    elif kind == "counter":
        cfg = _sim_config(spec, network=False)
        lambda_, mu, K = spec["lambda"], spec["mu"], spec["K"]
        K_h = spec["K_h"] if spec["K_h"] is not None else K
        if int(K) != K:
            raise ConfigError(f"kind=counter needs an integer K, got {K}; use kind=fractional")
        params = HysteresisParams(lambda_, mu, int(K), int(K_h))
        report = simulate_counter(params, cfg)
        rows = report.rows()
        if mu > lambda_:
            exact = {
                "pi_up": renewal_occupancy(params),
                "gamma": replacement_rate_hysteresis(params),
                "mean_busy": first_passage_mean_busy(params),
                "mean_return": first_passage_mean_return(params),
            }
            # the inserting request is a hit too
            exact["hit_ratio"] = exact["pi_up"] + exact["gamma"] / lambda_
            for row in rows:
                row["exact"] = exact.get(row["metric"])
        if spec.out is not None:
            for which in ("B", "R"):
                samples, cdf = report.ecdf(which)
                exporter.export_to(
                    sibling(spec.out, f"ecdf_{which}"),
                    [{"t": float(t), "ecdf": float(p)} for t, p in zip(samples, cdf)],
                )
    elif kind == "fractional":
        cfg = _sim_config(spec, network=False)
        report = simulate_fractional_K(spec["K"], spec["lambda"], spec["mu"], cfg)
        rows = report.rows()
        for row in rows:
            if row["metric"] == "pi_up":
                row["exact"] = report.extra.get("pi_up_exact")
            elif row["metric"] == "gamma":
                row["exact"] = report.extra.get("gamma_exact")
        for name in ("pi_up_cycle_weighted", "pi_up_convex_combination"):
            if name in report.extra:
                rows.append({"metric": name, "estimate": None, "stderr": None, "exact": report.extra[name]})
    else:
        raise ConfigError(f"kind must be counter, fractional or network, got {kind!r}")

    exporter.export_to(spec.out, rows, fp)
    if report.flags:
        log.warning("; ".join(report.flags))
        return EXIT_VERDICT
    return EXIT_OK


COMMANDS = {
    "analyze": cmd_analyze,
    "optimize": cmd_optimize,
    "hysteresis": cmd_hysteresis,
    "network": cmd_network,
    "placement": cmd_placement,
    "reduce": cmd_reduce,
    "simulate": cmd_simulate,
}


def run(args, fp=None) -> int:
    """Resolve the configuration of a parsed command line, echo it and run the command."""
    fp = fp if fp is not None else sys.stdout
    log = get_logger(__name__)
    try:
        spec = RunSpec.resolve(
            args.command,
            inputs=args.inputs,
            out=args.out,
            overrides=parse_overrides(args.overrides),
            seed=args.seed,
            mode=getattr(args, "mode", "verbatim_flow"),
        )
        echo(spec)
        exporter = TableExporter(
            lang=args.lang, decimal_localization=args.decimal_localization, format=args.export_format
        )
        return COMMANDS[args.command](spec, exporter, fp)
    except PyrcnError as e:
        log.error(str(e))
        return EXIT_ERROR


def main(argv=None):
    # store the original SIGINT handler
    global original_sigint
    original_sigint = signal.getsignal(signal.SIGINT)
    signal.signal(signal.SIGINT, exit_gracefully)

    parser = get_main_parser()
    args = parser.parse_args(argv)

    log = get_logger(__name__, args.verbosity, args.debug_logfile, args.debug_log_filter)
    if args.verbosity.upper() == "DEBUG":
        log.debug("logging is set to debug")

    if args.command in COMMANDS:
        sys.exit(run(args))
    elif args.command == "help":
        parser.print_help()
    elif args.version:
        installed_version = version("pyrcn")
        print(installed_version)
    else:
        parser.print_help()


if __name__ == "__main__":
    main()
