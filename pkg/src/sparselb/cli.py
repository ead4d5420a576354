"""Command-line experiment driver.

Subcommands wrap the library modules: graph generation and certification,
simulation, steady-state estimation, coupled runs, mean-field integration,
trajectory comparison, and canned experiment recipes. Every output CSV
starts with a '#'-metadata block echoing the configuration and seed, so a
result file is reproducible from its own header.

Exit codes: 0 success, 1 usage or bad parameters, 2 runtime invariant
violation (coupling margin, policy normalization), 3 I/O or file format.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from . import graph as graphs
from . import meanfield, properties, simulator
from .graph import GraphFormatError, GraphSpec
from .policy import policy_from_name
from .records import (
    check_compatible_metadata,
    compare_trajectories,
    read_trajectory_csv,
    write_coupled_csv,
    write_metadata,
    write_steady_csv,
    write_trajectory_csv,
)
from .simulator import InvariantViolation

_FAMILIES = {
    "fixed-degree-log2": graphs.log_squared_degree_family,
    "fixed-degree-log": graphs.log_degree_family,
    "errg-log2": graphs.errg_log_squared_family,
    "geometric-log2": graphs.geometric_log_squared_family,
}


class CliUsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we own exit codes
        raise CliUsageError(message)


def _int_list(text: str) -> list[int]:
    """Comma-separated ints; 'a..b' tokens expand to inclusive ranges."""
    out: list[int] = []
    for token in text.split(","):
        token = token.strip()
        if ".." in token:
            lo, hi = token.split("..", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif token:
            out.append(int(token))
    return out


def _float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _sim_metadata(args, command: str, extra: Optional[dict] = None) -> dict:
    meta = {"command": command}
    for key in ("lam", "d", "depth", "seed", "horizon", "service", "sample_interval"):
        if hasattr(args, key) and getattr(args, key) is not None:
            name = "lambda" if key == "lam" else key
            meta[name] = getattr(args, key)
    if extra:
        meta.update(extra)
    return meta


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    spec = GraphSpec(
        kind=args.kind,
        n=args.n,
        m=args.m if args.m is not None else args.n,
        c=args.c,
        p=args.p,
        radius=args.radius,
        seed=args.seed,
    )
    g = spec.build()
    graphs.write_graph(g, args.out)
    retries = g.meta.get("retries", 0)
    print(
        f"wrote {args.out}: N={g.n_servers} M={g.n_dispatchers} E={g.n_edges} "
        f"connected={g.is_connected} retries={retries}"
    )
    return 0


def cmd_check(args) -> int:
    g = graphs.read_graph(args.graph)
    uniform, argmax = properties.uniform_subcriticality_metric(g, args.d)
    optimal = gamma_size = None
    if args.optimal:
        report = properties.optimal_subcriticality_load(g, args.d)
        optimal, gamma_size = report.optimal_load, report.gamma_support_size
    rows = []
    for eps in args.epsilons:
        rep = properties.sparsity_deficiency(
            g, eps, mode=args.mode, budget=args.budget, seed=args.seed
        )
        rows.append((eps, rep))
    with open(args.out, "w", encoding="utf-8") as fh:
        write_metadata(
            fh,
            {
                "command": "check",
                "graph": args.graph,
                "d": args.d,
                "mode": args.mode,
                "budget": args.budget,
                "seed": args.seed,
            },
        )
        fh.write(
            "epsilon,deficiency,mode,subsets_probed,witness_size,"
            "uniform_metric,argmax_server,optimal_load,gamma_support_size\n"
        )
        opt = "" if optimal is None else f"{optimal:.6f}"
        gsz = "" if gamma_size is None else str(gamma_size)
        for eps, rep in rows:
            fh.write(
                f"{eps:.12g},{rep.deficiency:.12g},{rep.mode},{rep.subsets_probed},"
                f"{len(rep.witness_subset)},{uniform:.12g},{argmax},{opt},{gsz}\n"
            )
    print(f"wrote {args.out}: uniform_metric={uniform:.6f}" + (f" optimal_load={opt}" if opt else ""))
    return 0


def cmd_simulate(args) -> int:
    g = graphs.read_graph(args.graph)
    record = simulator.simulate(
        g,
        args.d,
        args.lam,
        args.horizon,
        service=args.service,
        sample_interval=args.sample_interval,
        seed=args.seed,
        depth=args.depth,
        allow_disconnected=args.allow_disconnected,
        allow_overload=args.allow_overload,
    )
    write_trajectory_csv(record, args.out, _sim_metadata(args, "simulate", {"graph": args.graph}))
    print(
        f"wrote {args.out}: events={record.event_count} arrivals={record.arrival_count} "
        f"departures={record.departure_count}"
    )
    return 0


def cmd_steady(args) -> int:
    g = graphs.read_graph(args.graph)
    summary = simulator.steady_state(
        g,
        args.d,
        args.lam,
        warmup=args.warmup,
        measure=args.measure,
        replicas=args.replicas,
        service=args.service,
        seed=args.seed,
        depth=args.depth,
        allow_disconnected=args.allow_disconnected,
        allow_overload=args.allow_overload,
    )
    meta = _sim_metadata(args, "steady", {"graph": args.graph})
    meta.update({"warmup": summary.config["warmup"], "measure": args.measure, "replicas": args.replicas})
    write_steady_csv(summary, args.out, meta)
    print(f"wrote {args.out}: mean_qlen={summary.mean_qlen:.6f} +- {summary.mean_qlen_stderr:.6f}")
    return 0


def cmd_coupled(args) -> int:
    g = graphs.read_graph(args.graph)
    coupled = simulator.coupled_simulate(
        g,
        args.d,
        args.lam,
        args.horizon,
        seed=args.seed,
        sample_interval=args.sample_interval,
        depth=args.depth,
        allow_disconnected=args.allow_disconnected,
    )
    write_coupled_csv(coupled, args.out, _sim_metadata(args, "coupled", {"graph": args.graph}))
    frac = coupled.mismatch_count / max(1, coupled.arrival_count)
    print(
        f"wrote {args.out}: events={coupled.event_count} delta={coupled.mismatch_count} "
        f"mismatch_fraction={frac:.4f} margin_min={coupled.margin_min}"
    )
    return 0


def cmd_ode(args) -> int:
    depth = args.depth if args.depth is not None else meanfield.default_depth(args.lam, args.d)
    if args.start == "empty":
        q0 = meanfield.empty_occupancy(depth)
    elif args.start == "fixed-point":
        q0 = meanfield.fixed_point(args.lam, args.d, depth)
    else:
        raise CliUsageError(f"unknown start state {args.start!r}")
    policy = policy_from_name(args.policy) if args.policy else None
    result = meanfield.integrate_ode(
        args.lam,
        q0,
        args.horizon,
        depth=depth,
        d=args.d,
        policy=policy,
        step=args.step,
        sample_interval=args.sample_interval,
    )
    meta = _sim_metadata(args, "ode")
    meta["depth"] = depth
    write_trajectory_csv(result.record, args.out, meta)
    print(f"wrote {args.out}: steps={result.steps_taken} rejected={result.steps_rejected}")
    return 0


def cmd_compare(args) -> int:
    rec_a, meta_a = read_trajectory_csv(args.a)
    rec_b, meta_b = read_trajectory_csv(args.b)
    check_compatible_metadata(meta_a, meta_b)
    sup, l1 = compare_trajectories(rec_a, rec_b, levels=args.levels)
    print(f"sup_distance={sup:.8f} l1_distance={l1:.8f}")
    return 0


def cmd_trend(args) -> int:
    if args.family not in _FAMILIES:
        raise CliUsageError(f"unknown family {args.family!r}; choose from {sorted(_FAMILIES)}")
    family = _FAMILIES[args.family]()
    rows = properties.sparsity_trend(
        family,
        args.epsilons,
        args.sizes,
        args.seeds,
        budget=args.budget,
    )
    properties.write_trend_csv(
        rows,
        args.out,
        {
            "command": "trend",
            "family": args.family,
            "sizes": ",".join(map(str, args.sizes)),
            "seeds": ",".join(map(str, args.seeds)),
            "budget": args.budget,
        },
    )
    print(f"wrote {args.out}: {len(rows)} rows")
    return 0


# ---------------------------------------------------------------------------
# canned recipes


def _steady_mean(graph, lam, d, seed, service="exponential", warmup=50.0, measure=100.0, replicas=3):
    summary = simulator.steady_state(
        graph, d, lam, warmup=warmup, measure=measure, replicas=replicas,
        service=service, seed=seed,
    )
    return summary.mean_qlen, summary.mean_qlen_stderr


def _fixed_point_mean_qlen(lam: float, d: int) -> float:
    q = meanfield.fixed_point(lam, d, meanfield.default_depth(lam, d))
    return float(q[1:].sum())


def cmd_reproduce(args) -> int:
    recipe = args.recipe
    out = args.out or f"{recipe}.csv"
    lam, d, seed = args.lam, args.d, args.seed
    meta = {"command": f"reproduce {recipe}", "lambda": lam, "d": d, "seed": seed}

    if recipe == "erg-trajectories":
        sizes = args.sizes or [100, 1000]
        depth = args.depth or 12
        horizon = args.horizon or 20.0
        with open(out, "w", encoding="utf-8") as fh:
            write_metadata(fh, {**meta, "sizes": sizes, "horizon": horizon, "depth": depth})
            fh.write("source,t," + ",".join(f"q{i}" for i in range(1, depth + 1)) + ",overflow\n")

            def emit(source, record):
                for s, t in enumerate(record.sample_times):
                    row = ",".join(f"{v:.12g}" for v in record.occupancy[s, :depth])
                    fh.write(f"{source},{t:.12g},{row},{int(record.overflow[s])}\n")

            for n in sizes:
                g = graphs.errg_log_squared_family().build(n, seed)
                rec = simulator.simulate(
                    g, d, lam, horizon, seed=seed, depth=depth, allow_disconnected=True
                )
                emit(f"sim-N{n}", rec)
            ode = meanfield.integrate_ode(
                lam, meanfield.empty_occupancy(depth), horizon, depth=depth, d=d
            )
            emit("ode", ode.record)
        print(f"wrote {out}")
        return 0

    if recipe == "degree-sweep":
        sizes = args.sizes or [250, 1000, 4000]
        families = [
            graphs.constant_degree_family(4),
            graphs.log_degree_family(),
            graphs.log_squared_degree_family(),
        ]
        target = _fixed_point_mean_qlen(lam, d)
        with open(out, "w", encoding="utf-8") as fh:
            write_metadata(fh, {**meta, "sizes": sizes, "target": f"{target:.6f}"})
            fh.write("family,N,mean_qlen,stderr\n")
            for family in families:
                for n in sizes:
                    g = family.build(n, seed)
                    mean, se = _steady_mean(g, lam, d, seed)
                    fh.write(f"{family.name},{n},{mean:.6f},{se:.6f}\n")
        print(f"wrote {out} (fully flexible target {target:.4f})")
        return 0

    if recipe == "lambda-sweep":
        sizes = args.sizes or [250, 1000, 4000]
        lambdas = args.lambdas or [0.5, 0.65, 0.8]
        family = graphs.errg_log_squared_family()
        with open(out, "w", encoding="utf-8") as fh:
            write_metadata(fh, {**meta, "sizes": sizes, "lambdas": lambdas})
            fh.write("lambda,N,mean_qlen,stderr,target,gap\n")
            for lam_i in lambdas:
                target = _fixed_point_mean_qlen(lam_i, d)
                for n in sizes:
                    g = family.build(n, seed)
                    mean, se = _steady_mean(g, lam_i, d, seed)
                    fh.write(
                        f"{lam_i},{n},{mean:.6f},{se:.6f},{target:.6f},{abs(mean - target):.6f}\n"
                    )
        print(f"wrote {out}")
        return 0

    if recipe == "service-sweep":
        sizes = args.sizes or [1000]
        family = graphs.errg_log_squared_family()
        with open(out, "w", encoding="utf-8") as fh:
            write_metadata(fh, {**meta, "sizes": sizes})
            fh.write("service,N,mean_qlen,stderr\n")
            for kind in ("exponential", "deterministic", "pareto"):
                for n in sizes:
                    g = family.build(n, seed)
                    mean, se = _steady_mean(g, lam, d, seed, service=kind)
                    fh.write(f"{kind},{n},{mean:.6f},{se:.6f}\n")
        print(f"wrote {out}")
        return 0

    if recipe == "geometric-vs-errg":
        sizes = args.sizes or [250, 1000]
        target = _fixed_point_mean_qlen(lam, d)
        with open(out, "w", encoding="utf-8") as fh:
            write_metadata(fh, {**meta, "sizes": sizes, "target": f"{target:.6f}"})
            fh.write("family,N,mean_qlen,stderr,target\n")
            for family in (graphs.errg_log_squared_family(), graphs.geometric_log_squared_family()):
                for n in sizes:
                    g = family.build(n, seed)
                    mean, se = _steady_mean(g, lam, d, seed)
                    fh.write(f"{family.name},{n},{mean:.6f},{se:.6f},{target:.6f}\n")
        print(f"wrote {out}")
        return 0

    raise CliUsageError(
        f"unknown recipe {recipe!r}; choose from erg-trajectories, degree-sweep, "
        f"lambda-sweep, service-sweep, geometric-vs-errg"
    )


# ---------------------------------------------------------------------------
# parser assembly


def _add_common(sub, *, graph_input=False, sim_params=False):
    sub.add_argument("--config", help="JSON file with defaults for this command's flags")
    sub.add_argument("--seed", type=int, default=0)
    if graph_input:
        sub.add_argument("--graph", required=True, help="path to a BPG v1 graph file")
    if sim_params:
        sub.add_argument("--d", type=int, default=2)
        sub.add_argument("--lambda", dest="lam", type=float, default=0.8)
        sub.add_argument("--depth", type=int, default=simulator.DEFAULT_DEPTH)
        sub.add_argument("--allow-disconnected", action="store_true")


def build_parser() -> tuple[_Parser, dict]:
    parser = _Parser(prog="sparselb", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)
    registry = {}

    p = subs.add_parser("gen", help="generate a compatibility graph file")
    p.add_argument("--kind", required=True,
                   choices=["complete", "matching", "fixed-degree", "inhomogeneous", "geometric", "braess"])
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--c", type=int, default=None)
    p.add_argument("--p", type=float, default=None)
    p.add_argument("--radius", type=float, default=None)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_gen)
    registry["gen"] = p

    p = subs.add_parser("check", help="certify sparsity and load conditions")
    _add_common(p, graph_input=True)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--epsilons", type=_float_list, default=[0.1])
    p.add_argument("--mode", choices=["exact", "sampled"], default="sampled")
    p.add_argument("--budget", type=int, default=2048)
    p.add_argument("--optimal", action="store_true", help="also solve the exact min-max load")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_check)
    registry["check"] = p

    p = subs.add_parser("simulate", help="run one trajectory")
    _add_common(p, graph_input=True, sim_params=True)
    p.add_argument("--horizon", type=float, default=20.0)
    p.add_argument("--service", choices=["exponential", "deterministic", "pareto"], default="exponential")
    p.add_argument("--sample-interval", dest="sample_interval", type=float, default=0.1)
    p.add_argument("--allow-overload", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)
    registry["simulate"] = p

    p = subs.add_parser("steady", help="estimate steady-state occupancy")
    _add_common(p, graph_input=True, sim_params=True)
    p.add_argument("--warmup", type=float, default=None)
    p.add_argument("--measure", type=float, default=200.0)
    p.add_argument("--replicas", type=int, default=8)
    p.add_argument("--service", choices=["exponential", "deterministic", "pareto"], default="exponential")
    p.add_argument("--allow-overload", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_steady)
    registry["steady"] = p

    p = subs.add_parser("coupled", help="coupled run against the fully flexible twin")
    _add_common(p, graph_input=True, sim_params=True)
    p.add_argument("--horizon", type=float, default=10.0)
    p.add_argument("--sample-interval", dest="sample_interval", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_coupled)
    registry["coupled"] = p

    p = subs.add_parser("ode", help="integrate the mean-field occupancy ODE")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--lambda", dest="lam", type=float, default=0.8)
    p.add_argument("--horizon", type=float, default=20.0)
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--sample-interval", dest="sample_interval", type=float, default=0.1)
    p.add_argument("--start", choices=["empty", "fixed-point"], default="empty")
    p.add_argument("--policy", default=None, help='route through a named policy, e.g. "jsq-d:2"')
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_ode)
    registry["ode"] = p

    p = subs.add_parser("compare", help="sup and l1 distance between two trajectory CSVs")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--levels", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_compare)
    registry["compare"] = p

    p = subs.add_parser("trend", help="sparsity/load metrics across a size sweep")
    p.add_argument("--family", required=True)
    p.add_argument("--sizes", type=_int_list, default=[250, 1000])
    p.add_argument("--seeds", type=_int_list, default=list(range(10)))
    p.add_argument("--epsilons", type=_float_list, default=[0.1])
    p.add_argument("--budget", type=int, default=256)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_trend)
    registry["trend"] = p

    p = subs.add_parser("reproduce", help="canned experiment recipes")
    p.add_argument("recipe")
    p.add_argument("--sizes", type=_int_list, default=None)
    p.add_argument("--lambdas", type=_float_list, default=None)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--lambda", dest="lam", type=float, default=0.8)
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--out", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_reproduce)
    registry["reproduce"] = p

    return parser, registry


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser, registry = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "config", None):
            with open(args.config, "r", encoding="utf-8") as fh:
                overrides = json.load(fh)
            sub = registry[args.command]
            dest_of = {}
            for action in sub._actions:
                for opt in action.option_strings:
                    dest_of[opt.lstrip("-")] = action.dest
            mapped = {
                dest_of.get(key, key.replace("-", "_")): value
                for key, value in overrides.items()
            }
            sub.set_defaults(**mapped)
            args = parser.parse_args(argv)  # explicit flags still win
        return args.func(args)
    except CliUsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 2
    except (GraphFormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
