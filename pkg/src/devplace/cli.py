"""Command-line entry point.

Subcommands: generate, train, baseline, bruteforce, report, selftest.
Exit codes: 0 success, 1 usage/input error, 2 infeasibility outcome (no
feasible placement exists or was found).
"""

from __future__ import annotations

import argparse
import sys

from . import baselines, generators, harness
from . import trainer as trainer_mod
from .graph import GraphError, coalesce_sole_consumers, load_graph, save_graph
from .policy import save_checkpoint
from .simulator import (TopologyError, default_topology, load_topology, simulate)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_topology_arg(value):
    """Topology file path, or a builtin spec like 'cpu+2gpu' / 'cpu+4gpu'."""
    if value.startswith("cpu+") and value.endswith("gpu"):
        return default_topology(num_gpus=int(value[4:-3]))
    return load_topology(value)


def _usage_error(message):
    print(f"error: {message}", file=sys.stderr)
    return EXIT_USAGE


def _load_instance(args):
    graph = load_graph(args.graph)
    topo = _load_topology_arg(args.topology)
    return coalesce_sole_consumers(graph), topo


def _cmd_generate(args):
    spec = generators.GeneratorSpec(
        family=args.family, layers=args.layers, steps=args.steps,
        hidden=args.hidden, batch=args.batch, blocks=args.blocks,
        branches=args.branches, chain=args.chain, seed=args.seed,
        cost_scale=args.cost_scale, byte_scale=args.byte_scale,
    )
    graph = generators.generate(spec)
    gg = coalesce_sole_consumers(graph)
    save_graph(graph, args.out)
    print(f"wrote {args.out}: {graph.num_ops} ops, {gg.num_groups} groups "
          f"({generators.expected_group_count(spec)} expected)")
    return EXIT_OK


def _cmd_train(args):
    gg, topo = _load_instance(args)
    config = trainer_mod.TrainerConfig(
        k=args.k, total_updates=args.updates,
        success_only_after=args.success_only_after,
        learning_rate=args.lr, seed=args.seed, controllers=args.controllers,
        failing_signal=args.failing_signal, noise_sigma=args.noise_sigma,
    )
    result = trainer_mod.train(gg, topo, config)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(trainer_mod.log_to_csv(result.log))
        print(f"wrote training log to {args.out}")
    if not result.found_feasible:
        print("no feasible placement found")
        return EXIT_INFEASIBLE
    if args.checkpoint:
        template = trainer_mod.policy_template(gg, topo, config)
        save_checkpoint(template.with_flat(result.final_params), args.checkpoint)
        print(f"wrote checkpoint to {args.checkpoint}")
    placement = "-".join(map(str, result.best_placement))
    print(f"best makespan: {result.best_makespan} seconds")
    print(f"best placement: {placement}")
    return EXIT_OK


def _cmd_baseline(args):
    gg, topo = _load_instance(args)
    result = harness.run_experiment(
        gg, topo, [harness.make_strategy(args.kind, seed=args.seed)],
        results_path=args.out, profile_path=args.profile_out,
    )
    row = result.rows[0]
    if row.placement is None:
        print(f"{row.strategy}: no feasible placement")
        return EXIT_INFEASIBLE
    print(f"{row.strategy}: makespan {row.makespan} seconds, feasible={row.feasible}")
    return EXIT_OK if row.feasible else EXIT_INFEASIBLE


def _cmd_bruteforce(args):
    gg, topo = _load_instance(args)
    try:
        placement, makespan = baselines.brute_force(gg, topo, cap=args.cap)
    except baselines.NoFeasiblePlacement:
        print("no feasible placement exists")
        return EXIT_INFEASIBLE
    except baselines.SearchSpaceTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"optimal makespan: {makespan} seconds")
    print(f"optimal placement: {'-'.join(map(str, placement))}")
    if args.out:
        harness.run_experiment(gg, topo, [("bruteforce", lambda *_: placement)],
                               results_path=args.out)
    return EXIT_OK


def _cmd_report(args):
    gg, topo = _load_instance(args)
    try:
        placement = [int(x) for x in args.placement.split("-")]
    except ValueError:
        return _usage_error(f"--placement must look like 0-1-0, got {args.placement!r}")
    report = simulate(gg, topo, placement)
    result = harness.run_experiment(gg, topo, [("given", lambda *_: placement)],
                                    results_path=args.out,
                                    profile_path=args.profile_out)
    print(f"makespan: {report.makespan_seconds} seconds, feasible={report.feasible}")
    for dev in topo.devices:
        print(f"  device {dev.id} ({dev.kind}): busy {report.per_device_busy_seconds[dev.id]:.6f}s, "
              f"transfer {report.per_device_transfer_seconds[dev.id]:.6f}s, "
              f"peak {report.per_device_peak_bytes[dev.id]} bytes")
    return EXIT_OK if result.rows[0].feasible else EXIT_INFEASIBLE


def _cmd_selftest(args):
    spec = generators.GeneratorSpec("rnnlm_grid", layers=1, steps=2, seed=args.seed)
    gg = coalesce_sole_consumers(generators.generate(spec))
    topo = default_topology(num_gpus=2)
    failures = []

    def check(name, ok):
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        if not ok:
            failures.append(name)

    check("generator group count",
          gg.num_groups == generators.expected_group_count(spec))
    optimum, best = baselines.brute_force(gg, topo)
    result = harness.run_experiment(
        gg, topo, ["single:1", "expert:2", "mincut", "mincut_gpu", "random:64"])
    for row in result.rows:
        check(f"oracle dominance vs {row.strategy}",
              row.makespan is None or best <= row.makespan)
    replay = simulate(gg, topo, optimum).makespan_seconds
    check("bruteforce replay", replay == best)
    return EXIT_OK if not failures else EXIT_INFEASIBLE


def build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--graph", help="graph JSON file")
    common.add_argument("--topology", help="topology JSON file or builtin 'cpu+<N>gpu'")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="output file")

    parser = _Parser(prog="devplace",
                     description="Device placement: RL policy, simulator, baselines.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="emit a synthetic graph")
    p.add_argument("--family", required=True, choices=generators.FAMILIES)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--steps", type=int, default=4)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--blocks", type=int, default=2)
    p.add_argument("--branches", type=int, default=3)
    p.add_argument("--chain", type=int, default=2)
    p.add_argument("--cost-scale", type=float, default=1.0)
    p.add_argument("--byte-scale", type=float, default=1.0)
    p.set_defaults(fn=_cmd_generate, needs=("out",))

    p = sub.add_parser("train", parents=[common], help="train the placement policy")
    p.add_argument("--updates", type=int, default=200)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--controllers", type=int, default=1)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--success-only-after", type=int, default=5000)
    p.add_argument("--failing-signal", type=float, default=None)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--checkpoint", help="write final policy parameters here")
    p.set_defaults(fn=_cmd_train, needs=("graph", "topology"))

    p = sub.add_parser("baseline", parents=[common], help="run one baseline strategy")
    p.add_argument("--kind", required=True,
                   help="single:<dev> | single_cpu | single_gpu | expert:<parts> | "
                        "mincut | mincut_gpu | random:<budget> | bruteforce | rl")
    p.add_argument("--profile-out", help="per-device profile CSV")
    p.set_defaults(fn=_cmd_baseline, needs=("graph", "topology"))

    p = sub.add_parser("bruteforce", parents=[common], help="exhaustive optimum")
    p.add_argument("--cap", type=int, default=1 << 20)
    p.set_defaults(fn=_cmd_bruteforce, needs=("graph", "topology"))

    p = sub.add_parser("report", parents=[common], help="profile a given placement")
    p.add_argument("--placement", required=True, help="device ids joined by '-'")
    p.add_argument("--profile-out", help="per-device profile CSV")
    p.set_defaults(fn=_cmd_report, needs=("graph", "topology"))

    p = sub.add_parser("selftest", parents=[common], help="quick built-in pipeline check")
    p.set_defaults(fn=_cmd_selftest, needs=())

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    for name in args.needs:
        if getattr(args, name, None) is None:
            return _usage_error(f"--{name} is required for '{args.command}'")
    try:
        return args.fn(args)
    except (GraphError, TopologyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
