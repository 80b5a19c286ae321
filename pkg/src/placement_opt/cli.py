"""Command-line entry point: datagen | simulate | place | train | evaluate | oracle.

Every command is reproducible from its inputs and seeds; machine-readable
outputs land under --out, configs are echoed next to them, and any validation
failure exits nonzero with a single `error: ...` line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import baselines, datagen, placement_env, trainer
from .graph_core import load_graph
from .placement_env import BYTES_PER_GB, RewardConfig
from .policy_gnn import PolicyConfig
from .sim_engine import Placement, load_placement, load_topology, simulate

DOT_COLORS = [
    "lightblue",
    "lightcoral",
    "lightgreen",
    "gold",
    "plum",
    "lightsalmon",
    "paleturquoise",
    "khaki",
]


class CliError(ValueError):
    pass


def _read(path):
    try:
        with open(path) as f:
            return f.read()
    except OSError as e:
        raise CliError(f"cannot read {path}: {e.strerror}") from e


def _outdir(args):
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _write(path, text):
    with open(path, "w") as f:
        f.write(text)


def placement_dot(graph, placement: Placement) -> str:
    lines = ["digraph placement {", "  rankdir=TB;"]
    for v in range(graph.num_nodes):
        color = DOT_COLORS[placement.assignment[v] % len(DOT_COLORS)]
        lines.append(
            f'  n{v} [label="{v}\\nd{placement.assignment[v]}", style=filled, fillcolor={color}];'
        )
    for u, v in sorted(graph.edges):
        lines.append(f"  n{u} -> n{v};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _emit_dot(args, out, graph, placement, stem):
    if getattr(args, "emit_dot", False):
        _write(os.path.join(out, f"{stem}.dot"), placement_dot(graph, placement))


def cmd_datagen(args):
    out = _outdir(args)
    spec = datagen.FamilySpec(
        family=args.family,
        count=args.count,
        train_fraction=args.train_fraction,
        blocks=args.blocks,
        branches_lo=args.branches[0],
        branches_hi=args.branches[1],
        branch_ops_lo=args.branch_ops[0],
        branch_ops_hi=args.branch_ops[1],
        layers_lo=args.layers[0],
        layers_hi=args.layers[1],
        unroll_lo=args.unroll[0],
        unroll_hi=args.unroll[1],
        compute_lo=args.compute[0],
        compute_hi=args.compute[1],
        bytes_lo=args.tensor_bytes[0],
        bytes_hi=args.tensor_bytes[1],
        seed=args.seed,
    )
    manifest = datagen.write_dataset(out, spec)
    print(f"wrote {len(manifest['members'])} graphs to {out}")
    return 0


def cmd_simulate(args):
    out = _outdir(args)
    graph = load_graph(_read(args.graph))
    topology = load_topology(_read(args.topology))
    placement = load_placement(_read(args.placement), graph.num_nodes)
    result = simulate(graph, topology, placement)
    doc = result.to_document(graph, placement)
    _write(os.path.join(out, "simulation.json"), doc)
    _emit_dot(args, out, graph, placement, "placement")
    peak = max(result.peak_memory_bytes)
    print(f"makespan {result.makespan_seconds:.6f} s")
    print(f"peak memory {peak / BYTES_PER_GB:.3f} GB")
    print(f"transfers {len(result.transfers)}, events {result.event_count}")
    return 0


SCHEMES = ("single_device", "random", "mincut", "expert")


def _run_scheme(name, graph, topology, seed, mincut_cfg=None):
    if name == "single_device":
        return baselines.place_single_device(graph, topology)
    if name == "random":
        return baselines.place_random(graph, topology, seed)
    if name == "mincut":
        return baselines.place_balanced_mincut(graph, topology, mincut_cfg).placement
    if name == "expert":
        return baselines.place_expert_chain(graph, topology)
    raise CliError(f"unknown scheme {name!r} (choose from {', '.join(SCHEMES)})")


def cmd_place(args):
    out = _outdir(args)
    graph = load_graph(_read(args.graph))
    topology = load_topology(_read(args.topology))
    cfg = baselines.PartitionerConfig(
        balance_tolerance=args.balance_tolerance, refinement_passes=args.refinement_passes
    )
    placement = _run_scheme(args.scheme, graph, topology, args.seed, cfg)
    result = simulate(graph, topology, placement)
    _write(os.path.join(out, f"placement_{args.scheme}.json"), placement.to_document(graph.name))
    _write(os.path.join(out, f"simulation_{args.scheme}.json"), result.to_document(graph, placement))
    _emit_dot(args, out, graph, placement, f"placement_{args.scheme}")
    print(f"{args.scheme}: makespan {result.makespan_seconds:.6f} s")
    return 0


_RUN_CONFIG_KEYS = {"topology", "dataset", "family", "out", "seed", "env", "policy", "trainer"}
_ENV_KEYS = {"mode", "memory_threshold_gb", "penalty_per_gb", "reward_scale", "init_mode"}
_POLICY_KEYS = {"message_rounds", "mode", "head_hidden"}
_TRAINER_KEYS = {
    "episodes",
    "workers",
    "lr_start",
    "lr_end",
    "entropy_start",
    "entropy_end",
    "baseline_window",
    "randomize_visit_order",
    "threads",
}


def _check_keys(doc, allowed, where):
    unknown = set(doc) - allowed
    if unknown:
        raise CliError(f"unknown {where} key(s): {', '.join(sorted(unknown))}")


def load_run_config(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise CliError(f"config is not valid JSON: {e}") from e
    _check_keys(doc, _RUN_CONFIG_KEYS, "config")
    if "topology" not in doc:
        raise CliError("config needs a 'topology' path")
    if ("dataset" in doc) == ("family" in doc):
        raise CliError("config needs exactly one of 'dataset' or 'family'")
    _check_keys(doc.get("env", {}), _ENV_KEYS, "env")
    _check_keys(doc.get("policy", {}), _POLICY_KEYS, "policy")
    _check_keys(doc.get("trainer", {}), _TRAINER_KEYS, "trainer")
    return doc


def _reward_config(env_doc):
    return RewardConfig(
        mode=env_doc.get("mode", placement_env.INTERMEDIATE),
        memory_threshold_bytes=env_doc.get("memory_threshold_gb", 10.7) * BYTES_PER_GB,
        penalty_per_gb=env_doc.get("penalty_per_gb", 2.0),
        reward_scale=env_doc.get("reward_scale"),
    )


def cmd_train(args):
    doc = load_run_config(_read(args.config))
    out = args.out or doc.get("out") or "."
    os.makedirs(out, exist_ok=True)
    _write(os.path.join(out, "run_config.json"), json.dumps(doc, indent=2))

    topology = load_topology(_read(args.topology or doc["topology"]))
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    if "dataset" in doc:
        _, train_graphs, _ = datagen.read_dataset(doc["dataset"])
    else:
        fam = datagen.FamilySpec(**doc["family"])
        graphs = datagen.generate_family(fam)
        train_graphs, _ = datagen.split(graphs, fam.train_fraction, fam.seed)

    env_doc = doc.get("env", {})
    reward_cfg = _reward_config(env_doc)
    policy_doc = doc.get("policy", {})
    policy_cfg = PolicyConfig(
        num_devices=topology.num_devices,
        message_rounds=policy_doc.get("message_rounds", 8),
        mode=policy_doc.get("mode", "full"),
        head_hidden=policy_doc.get("head_hidden"),
    )
    trainer_doc = dict(doc.get("trainer", {}))
    if args.threads is not None:
        trainer_doc["threads"] = args.threads
    cfg = trainer.TrainerConfig(seed=seed, init_mode=env_doc.get("init_mode", "all_device_0"), **trainer_doc)

    result = trainer.train(policy_cfg, cfg, train_graphs, topology, reward_cfg)
    curve_path = os.path.join(out, "learning_curve.csv")
    trainer.write_curve(curve_path, result.curve)
    ckpt_path = os.path.join(out, "checkpoint.json")
    trainer.save_policy_checkpoint(ckpt_path, result.params, result.adam)
    best_path = os.path.join(out, "best_placements.json")
    _write(
        best_path,
        json.dumps(
            {
                name: {"assignment": list(p), "runtime_s": r}
                for name, (p, r) in sorted(result.best_placements.items())
            },
            indent=2,
        ),
    )
    print(f"trained {cfg.episodes} epochs on {len(train_graphs)} graphs")
    print(f"checkpoint: {ckpt_path}")
    print(f"learning curve: {curve_path}")
    return 0


EVAL_SCHEMES = ("zero_shot", "random", "single_device", "mincut", "expert", "exhaustive")
EVAL_COLUMNS = ["graph", "scheme", "penalized_runtime_s", "makespan_s", "peak_memory_bytes"]


def cmd_evaluate(args):
    out = _outdir(args)
    params, _, _, _ = trainer.load_policy_checkpoint(args.checkpoint)
    topology = load_topology(_read(args.topology))
    _, _, test_graphs = datagen.read_dataset(args.dataset)
    if not test_graphs:
        raise CliError(f"dataset {args.dataset} has no test graphs")
    reward_cfg = RewardConfig(mode=placement_env.TERMINAL)

    rows = []
    for graph in test_graphs:
        candidates = {}
        pred = trainer.predict_placement(
            params, graph, topology, reward_cfg, n_samples=args.samples, seed=args.seed
        )
        candidates["zero_shot"] = pred.placement
        candidates["random"] = baselines.place_random(graph, topology, args.seed)
        candidates["single_device"] = baselines.place_single_device(graph, topology)
        candidates["mincut"] = baselines.place_balanced_mincut(graph, topology).placement
        candidates["expert"] = baselines.place_expert_chain(graph, topology)
        exhaustive_ok = topology.num_devices**graph.num_nodes <= args.budget
        if exhaustive_ok:
            candidates["exhaustive"], _ = baselines.exhaustive_search(graph, topology, reward_cfg)
        for scheme in EVAL_SCHEMES:
            if scheme not in candidates:
                continue
            runtime, result = placement_env.evaluate_placement(
                graph, topology, candidates[scheme], reward_cfg
            )
            rows.append(
                {
                    "graph": graph.name,
                    "scheme": scheme,
                    "penalized_runtime_s": runtime,
                    "makespan_s": result.makespan_seconds,
                    "peak_memory_bytes": max(result.peak_memory_bytes),
                }
            )

    report_path = os.path.join(out, "evaluation.csv")
    with open(report_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=EVAL_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    print(f"evaluated {len(test_graphs)} test graphs -> {report_path}")
    for scheme in EVAL_SCHEMES:
        vals = [r["penalized_runtime_s"] for r in rows if r["scheme"] == scheme]
        if vals:
            print(f"  {scheme}: mean {np.mean(vals):.4f} s over {len(vals)} graphs")
    return 0


def cmd_oracle(args):
    out = _outdir(args)
    graph = load_graph(_read(args.graph))
    topology = load_topology(_read(args.topology))
    placement, runtime = baselines.exhaustive_search(graph, topology, budget=args.budget)
    _write(os.path.join(out, "placement_exhaustive.json"), placement.to_document(graph.name))
    _emit_dot(args, out, graph, placement, "placement_exhaustive")
    print(f"exhaustive optimum: {runtime:.6f} s")
    print(f"assignment: {list(placement.assignment)}")
    return 0


def _add_common(p, out_required=False):
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--threads", type=int, default=None, help="parallelism bound")
    p.add_argument("--emit-dot", action="store_true", help="write a DOT file colored by device")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="placement-opt",
        description="Device placement for computation DAGs: simulate, train, compare.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate a synthetic graph dataset")
    p.add_argument("--family", choices=datagen.FAMILIES, required=True)
    p.add_argument("--count", type=int, default=32, help="graphs in the dataset (default 32)")
    p.add_argument("--train-fraction", type=float, default=0.5, help="train split fraction (default 0.5)")
    p.add_argument("--blocks", type=int, default=2, help="blocks per branch_blocks graph")
    p.add_argument("--branches", type=int, nargs=2, default=[2, 3], metavar=("LO", "HI"))
    p.add_argument("--branch-ops", type=int, nargs=2, default=[2, 4], metavar=("LO", "HI"))
    p.add_argument("--layers", type=int, nargs=2, default=[2, 3], metavar=("LO", "HI"))
    p.add_argument("--unroll", type=int, nargs=2, default=[3, 6], metavar=("LO", "HI"))
    p.add_argument("--compute", type=float, nargs=2, default=[0.5, 4.0], metavar=("LO", "HI"))
    p.add_argument("--tensor-bytes", type=float, nargs=2, default=[1.0e6, 8.0e6], metavar=("LO", "HI"))
    _add_common(p, out_required=True)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("simulate", help="simulate a placement and report the timeline")
    p.add_argument("--graph", required=True)
    p.add_argument("--topology", required=True)
    p.add_argument("--placement", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("place", help="run a baseline placement scheme")
    p.add_argument("--scheme", choices=SCHEMES, required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--topology", required=True)
    p.add_argument("--balance-tolerance", type=float, default=0.2)
    p.add_argument("--refinement-passes", type=int, default=2)
    _add_common(p)
    p.set_defaults(func=cmd_place)

    p = sub.add_parser("train", help="train a placement policy from a run config")
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--topology", help="topology path (overrides config)")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--emit-dot", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="compare a checkpoint against baselines on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--topology", required=True)
    p.add_argument("--samples", type=int, default=0, help="extra sampled rollouts per graph")
    p.add_argument("--budget", type=int, default=2**20, help="max placements for the exhaustive column")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("oracle", help="exhaustive search for the optimal placement")
    p.add_argument("--graph", required=True)
    p.add_argument("--topology", required=True)
    p.add_argument("--budget", type=int, default=2**20)
    _add_common(p)
    p.set_defaults(func=cmd_oracle)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as e:
        msg = str(e).replace("\n", " ")
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
