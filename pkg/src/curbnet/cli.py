"""
Command-line entry point.

Exit codes: 0 success, 1 usage, 2 parse or invalid input, 3 model/solver
failure, 4 simulation configuration error.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    DataError,
    block_parameters,
    clamp_load,
    fit_exponential_interarrivals,
    read_occupancy,
    read_supply,
    read_transactions,
)
from .formats import FormatError, load_params, load_topology, read_manifest, write_report
from .network import TopologyError, estimate_from_occupancy, stability_check
from .queue import InvalidQueueError
from .simulator import (
    DETERMINISTIC,
    EMPIRICAL,
    EXPONENTIAL,
    NETWORK_METRICS,
    SimConfig,
    SimulationConfigError,
    ServiceDistribution,
    convergence_series,
    default_service,
    replicate,
)
from .solver import ConvergenceError, StabilityError

log = logging.getLogger("curbnet")

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_MODEL, EXIT_SIM = 0, 1, 2, 3, 4
SEED_ENV = "CURBNET_SEED"
PATH_ARGS = ("topology", "occupancy", "params", "transactions", "supply")
SERVICE_KINDS = {"exp": EXPONENTIAL, "det": DETERMINISTIC, "empirical": EMPIRICAL}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _canonical_argv(parser, args):
    """Fully explicit argv for ``args`` (paths absolute, no --out/--workers)."""
    argv = [args.command]
    positional = []
    for action in parser._actions:
        dest = action.dest
        if dest in ("help", "out", "workers", "command") or isinstance(action, argparse._HelpAction):
            continue
        value = getattr(args, dest, None)
        if dest in PATH_ARGS and value is not None:
            value = str(Path(value).resolve())
        if not action.option_strings:
            positional.append(str(value))
        elif isinstance(action, argparse._StoreTrueAction):
            if value:
                argv.append(action.option_strings[0])
        elif value is not None:
            argv += [action.option_strings[0], str(value)]
    return argv + positional


def _manifest(parser, args):
    inputs = {}
    for dest in PATH_ARGS:
        value = getattr(args, dest, None)
        if value is not None:
            inputs[dest] = {"path": str(Path(value).resolve()), "sha256": _sha256(value)}
    return {
        "tool": "curbnet",
        "version": __version__,
        "command": args.command,
        "argv": _canonical_argv(parser, args),
        "inputs": inputs,
    }


def _emit(args, parser, rows, started):
    manifest = _manifest(parser, args)
    write_report(args.out, rows, manifest)
    elapsed = time.perf_counter() - started
    run_info = {"manifest": manifest, "wall_clock_seconds": elapsed}
    Path(str(args.out) + ".run.json").write_text(json.dumps(run_info, indent=2, sort_keys=True) + "\n")
    log.info("%s: wrote %s in %.2fs", args.command, args.out, elapsed)


# ---------------------------------------------------------------------------
# shared helpers


def _load_inputs(args):
    topology, samples = load_topology(args.topology)
    rates, service = {}, {}
    if getattr(args, "params", None):
        rates, service = load_params(args.params)
    unknown = (set(rates) | set(service)) - set(topology.node_ids)
    if unknown:
        raise FormatError(f"parameter file names unknown node(s): {sorted(unknown)}")
    if rates:
        topology = topology.with_exogenous_rates(rates)
    return topology, samples, service


def _load_occupancies(args, topology):
    raw = read_occupancy(args.occupancy, lenient=args.lenient)
    if not raw:
        raise DataError(f"{args.occupancy}: no occupancy records")
    missing = [n for n in topology.node_ids if n not in raw]
    if missing:
        raise DataError(f"{args.occupancy}: no occupancy for node(s) {', '.join(missing)}")
    extra = sorted(set(raw) - set(topology.node_ids))
    if extra:
        raise DataError(f"{args.occupancy}: unknown node(s) {', '.join(extra)}")
    return {n: clamp_load(raw[n], args.cap) for n in topology.node_ids}


def _service_map(topology, kind, samples, overrides):
    kind = SERVICE_KINDS[kind]
    if kind == EMPIRICAL:
        lacking = [n for n in topology.node_ids if n not in samples and n not in overrides]
        if lacking:
            raise SimulationConfigError(
                f"empirical service needs duration samples for node(s) {', '.join(lacking)}"
            )
        service = {n: ServiceDistribution.empirical(s) for n, s in samples.items()}
    else:
        service = default_service(topology, kind)
    service.update(overrides)
    return service


def _check_dead_ends(topology, allow):
    dead = [n for n in topology.node_ids if topology.out_degree(n) == 0]
    if dead and not allow:
        raise SimulationConfigError(
            f"node(s) {', '.join(dead)} have no out-edges; rejected tasks would have nowhere to go"
        )
    return "drop" if dead else "error"


def _sim_config(args, topology, service, dead_end):
    return SimConfig(
        topology=topology,
        horizon=args.horizon,
        service=service,
        warmup=args.warmup,
        seed=args.seed,
        replications=args.replications,
        convergence_bucket=getattr(args, "convergence", None) or getattr(args, "bucket", None),
        dead_end=dead_end,
    )


def _summary_rows(name, values):
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return []
    std = values.std(ddof=1) if values.size > 1 else 0.0
    return [
        ("*", f"{name}_mean", float(values.mean()), None, None),
        ("*", f"{name}_std", float(std), None, None),
        ("*", f"{name}_median", float(np.median(values)), None, None),
    ]


def transit_growing(checkpoints, floor=10):
    """Heuristic flag: tasks in transit at the end well above the midpoint level."""
    c = np.asarray(checkpoints, dtype=float)
    if c.size < 6:
        return False
    mid = c[2:5].mean()
    return bool(c[-3:].mean() > max(1.5 * mid, floor))


# ---------------------------------------------------------------------------
# commands


def cmd_solve(args):
    topology, _, _ = _load_inputs(args)
    occ = _load_occupancies(args, topology)
    estimates = estimate_from_occupancy(topology, occ)
    rows = []
    for node_id, est in estimates.items():
        rows += [
            (node_id, "occupancy", est.occupancy, None, None),
            (node_id, "total_arrival_rate", est.total_arrival_rate, None, None),
            (node_id, "blocking", est.blocking, None, None),
            (node_id, "rejection_rate", est.rejection_rate, None, None),
            (node_id, "implied_exogenous_share", est.implied_exogenous_share, None, None),
        ]
    negative = sum(1 for e in estimates.values() if e.implied_exogenous_share < 0)
    rows.append(("*", "negative_exogenous_count", negative, None, None))
    return rows


def _report_rows(reps, prefix=""):
    rows = []
    ids = reps.node_ids
    for metric in ("occupancy", "rejection_rate", "rejection_count", "arrival_count"):
        values = reps.node_values(metric)
        for r, report in enumerate(reps.reports):
            for j, node_id in enumerate(ids):
                v = values[r, j]
                rows.append((node_id, prefix + metric, int(v) if metric.endswith("count") else v, r, None))
        mean, std = reps.mean(metric), reps.std(metric)
        for node_id in ids:
            rows.append((node_id, prefix + metric, float(mean[node_id]), "mean", None))
            rows.append((node_id, prefix + metric, float(std[node_id]), "std", None))
    for metric in NETWORK_METRICS:
        for r, report in enumerate(reps.reports):
            rows.append(("*", prefix + metric, getattr(report, metric), r, None))
        rows.append(("*", prefix + metric, reps.mean(metric), "mean", None))
        rows.append(("*", prefix + metric, reps.std(metric), "std", None))
    return rows


def cmd_simulate(args):
    topology, samples, overrides = _load_inputs(args)
    dead_end = _check_dead_ends(topology, args.allow_dead_ends)
    service = _service_map(topology, args.service, samples, overrides)
    config = _sim_config(args, topology, service, dead_end)
    stability = stability_check(topology)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        reps = replicate(config, workers=args.workers)
    rows = _report_rows(reps)
    rows.append(("*", "stable_capacity_condition", stability.stable_capacity_condition, None, None))
    rows.append(("*", "stable_rate_condition", stability.stable_rate_condition, None, None))
    checkpoints = np.mean([r.in_transit_checkpoints for r in reps.reports], axis=0)
    for t, c in zip(reps.reports[0].checkpoint_times, checkpoints):
        rows.append(("*", "in_transit", float(c), "mean", t))
    growing = transit_growing(checkpoints)
    rows.append(("*", "transit_growing", growing, None, None))
    if growing or not stability.stable_capacity_condition:
        log.warning("tasks in transit appear to grow; the configuration may be unstable")
    if config.convergence_bucket is not None:
        for node_id in reps.node_ids:
            series = np.mean([r.occupancy_series[node_id] for r in reps.reports], axis=0)
            times = np.minimum(
                (np.arange(len(series)) + 1) * config.convergence_bucket, config.horizon
            )
            rows += [(node_id, "occupancy_series", float(v), "mean", float(t)) for t, v in zip(times, series)]
    return rows


def cmd_convergence(args):
    topology, samples, overrides = _load_inputs(args)
    dead_end = _check_dead_ends(topology, args.allow_dead_ends)
    service = _service_map(topology, args.service, samples, overrides)
    config = _sim_config(args, topology, service, dead_end)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        conv = convergence_series(config, workers=args.workers)
    rows = []
    for node_id, series in conv.occupancy.items():
        rows += [(node_id, "occupancy_series", float(v), "mean", float(t)) for t, v in zip(conv.times, series)]
    rows += [("*", "occupancy_series", float(v), "mean", float(t)) for t, v in zip(conv.times, conv.network_mean)]
    return rows


def cmd_validate(args):
    topology, samples, overrides = _load_inputs(args)
    dead_end = _check_dead_ends(topology, args.allow_dead_ends)
    occ = _load_occupancies(args, topology)
    estimates = estimate_from_occupancy(topology, occ)
    rates = {n: max(e.implied_exogenous_share, 0.0) for n, e in estimates.items()}
    fitted = topology.with_exogenous_rates(rates)
    service = _service_map(fitted, args.service, samples, overrides)
    config = _sim_config(args, fitted, service, dead_end)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        reps = replicate(config, workers=args.workers)
    sim_occ, sim_rej = reps.mean("occupancy"), reps.mean("rejection_rate")
    rows, occ_err, rej_err = [], [], []
    for node_id, est in estimates.items():
        e_occ = float(sim_occ[node_id]) - occ[node_id]
        e_rej = float(sim_rej[node_id]) - est.rejection_rate
        occ_err.append(e_occ)
        rej_err.append(e_rej)
        rows += [
            (node_id, "observed_occupancy", occ[node_id], None, None),
            (node_id, "exogenous_rate_used", rates[node_id], None, None),
            (node_id, "implied_exogenous_share", est.implied_exogenous_share, None, None),
            (node_id, "simulated_occupancy", float(sim_occ[node_id]), "mean", None),
            (node_id, "occupancy_error", e_occ, None, None),
            (node_id, "model_rejection_rate", est.rejection_rate, None, None),
            (node_id, "simulated_rejection_rate", float(sim_rej[node_id]), "mean", None),
            (node_id, "rejection_rate_error", e_rej, None, None),
        ]
    rows += _summary_rows("occupancy_error", occ_err)
    rows += _summary_rows("rejection_rate_error", rej_err)
    rows.append(("*", "negative_exogenous_count", sum(1 for e in estimates.values() if e.implied_exogenous_share < 0), None, None))
    return rows


def cmd_fit(args):
    transactions = read_transactions(args.transactions, lenient=args.lenient)
    supply = read_supply(args.supply, lenient=args.lenient)
    params = block_parameters(transactions, supply, strict=not args.lenient)
    rows = []
    for block, p in params.items():
        rows += [
            (block, "supply", p.supply, None, None),
            (block, "mean_paid_minutes", p.mean_paid_minutes, None, None),
            (block, "median_paid_minutes", p.median_paid_minutes, None, None),
            (block, "service_rate", p.service_rate, None, None),
        ]
        try:
            fit = fit_exponential_interarrivals(transactions, block)
        except DataError as exc:
            log.warning("%s", exc)
            continue
        rows += [
            (block, "arrival_rate", fit.rate, None, None),
            (block, "arrival_rate_se", fit.standard_error, None, None),
            (block, "sample_count", fit.sample_count, None, None),
            (block, "ks_statistic", fit.ks_statistic, None, None),
            (block, "ks_large", fit.ks_statistic > fit.ks_critical, None, None),
        ]
    return rows


COMMANDS = {
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
    "convergence": cmd_convergence,
    "fit": cmd_fit,
}


def _default_seed():
    value = os.environ.get(SEED_ENV)
    if value is None:
        return 0
    try:
        return int(value)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {value!r}")


def build_parser(default_seed=0):
    parser = _Parser(prog="curbnet", description="Finite-capacity queue networks for curbside parking.")
    parser.add_argument("--version", action="version", version=f"curbnet {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def sim_flags(p, horizon):
        p.add_argument("--horizon", type=float, default=horizon)
        p.add_argument("--warmup", type=float, default=None, help="default: horizon/5 (0 for convergence)")
        p.add_argument("--seed", type=int, default=default_seed, help=f"default: ${SEED_ENV} or 0")
        p.add_argument("--replications", type=int, default=1)
        p.add_argument("--service", choices=sorted(SERVICE_KINDS), default="exp")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--allow-dead-ends", action="store_true", help="drop tasks rejected at nodes without out-edges")

    p = sub.add_parser("solve", help="estimate arrival and rejection rates from occupancy")
    p.add_argument("topology")
    p.add_argument("occupancy")
    p.add_argument("--cap", type=float, default=0.99)
    p.add_argument("--lenient", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("simulate", help="simulate the network")
    p.add_argument("topology")
    p.add_argument("--params")
    sim_flags(p, 1000.0)
    p.add_argument("--convergence", type=float, default=None, metavar="BUCKET")
    p.add_argument("--out", required=True)

    p = sub.add_parser("validate", help="solve from occupancy, re-simulate, report errors")
    p.add_argument("topology")
    p.add_argument("occupancy")
    p.add_argument("--params")
    p.add_argument("--cap", type=float, default=0.99)
    p.add_argument("--lenient", action="store_true")
    sim_flags(p, 1000.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("convergence", help="occupancy time series from an empty network")
    p.add_argument("topology")
    p.add_argument("--params")
    sim_flags(p, 100.0)
    p.add_argument("--bucket", type=float, default=1.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit", help="block parameters and inter-transaction fits")
    p.add_argument("transactions")
    p.add_argument("supply")
    p.add_argument("--lenient", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("replay", help="re-run the command recorded in a report")
    p.add_argument("report")
    p.add_argument("--out", required=True)
    return parser


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser = build_parser(_default_seed())
    except UsageError as exc:
        print(f"curbnet: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    if args.command == "replay":
        try:
            recorded = read_manifest(args.report)["argv"]
        except (OSError, FormatError, KeyError, ValueError) as exc:
            print(f"curbnet: {exc}", file=sys.stderr)
            return EXIT_PARSE
        return main(recorded + ["--out", args.out])

    if args.command == "convergence" and args.warmup is None:
        args.warmup = 0.0
    started = time.perf_counter()
    try:
        rows = COMMANDS[args.command](args)
        _emit(args, _subparser(parser, args.command), rows, started)
    except (FormatError, DataError, TopologyError, InvalidQueueError, OSError) as exc:
        print(f"curbnet: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (StabilityError, ConvergenceError) as exc:
        print(f"curbnet: model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except SimulationConfigError as exc:
        print(f"curbnet: simulation config error: {exc}", file=sys.stderr)
        return EXIT_SIM
    except ValueError as exc:
        print(f"curbnet: model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    return EXIT_OK


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
