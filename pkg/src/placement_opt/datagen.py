"""Seeded synthetic graph families with train/test splits.

Three families cover the structural range the learned policy is evaluated on:

* ``branch_blocks``: a chain of blocks, each an entry node fanning out to a
  few parallel branches that rejoin (inception-style vision blocks).
* ``encoder_decoder``: two stacks of L layers unrolled over T steps with
  chain edges along time and depth, plus per-step attention nodes bridging
  the encoder's top layer into the decoder (NMT-style). Node count is
  2*L*T cells + T attention nodes.
* ``layered_random``: random DAGs with edges only between consecutive layers.

Costs and tensor sizes are uniform draws from the configured ranges; the same
spec and seed always regenerate byte-identical documents.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, asdict

import numpy as np

from .graph_core import ComputationGraph, OpGroup, load_graph, save_graph

BRANCH_BLOCKS = "branch_blocks"
ENCODER_DECODER = "encoder_decoder"
LAYERED_RANDOM = "layered_random"
FAMILIES = (BRANCH_BLOCKS, ENCODER_DECODER, LAYERED_RANDOM)


class DatagenError(ValueError):
    pass


@dataclass(frozen=True)
class FamilySpec:
    family: str
    count: int = 32
    train_fraction: float = 0.5
    blocks: int = 2
    branches_lo: int = 2
    branches_hi: int = 3
    branch_ops_lo: int = 2
    branch_ops_hi: int = 4
    layers_lo: int = 2
    layers_hi: int = 3
    unroll_lo: int = 3
    unroll_hi: int = 6
    compute_lo: float = 0.5
    compute_hi: float = 4.0
    bytes_lo: float = 1.0e6
    bytes_hi: float = 8.0e6
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DatagenError(f"unknown family {self.family!r}")
        if self.count < 2:
            raise DatagenError("count must be >= 2")
        if not (0.0 < self.train_fraction < 1.0):
            raise DatagenError("train_fraction must be in (0, 1)")
        for lo, hi, what in (
            (self.branches_lo, self.branches_hi, "branches"),
            (self.branch_ops_lo, self.branch_ops_hi, "branch_ops"),
            (self.layers_lo, self.layers_hi, "layers"),
            (self.unroll_lo, self.unroll_hi, "unroll"),
            (self.compute_lo, self.compute_hi, "compute"),
            (self.bytes_lo, self.bytes_hi, "bytes"),
        ):
            if lo > hi:
                raise DatagenError(f"{what} range is empty ({lo} > {hi})")


def _rand_cost(rng, spec):
    return float(rng.uniform(spec.compute_lo, spec.compute_hi))


def _rand_bytes(rng, spec):
    return float(rng.uniform(spec.bytes_lo, spec.bytes_hi))


def _branch_blocks(rng, spec, name):
    nodes, edges = [], []

    def add_node():
        v = len(nodes)
        nodes.append(
            OpGroup(id=v, compute_seconds=(_rand_cost(rng, spec),), output_bytes=_rand_bytes(rng, spec))
        )
        return v

    prev_join = None
    for _ in range(spec.blocks):
        entry = add_node()
        if prev_join is not None:
            edges.append((prev_join, entry))
        k = int(rng.integers(spec.branches_lo, spec.branches_hi + 1))
        join = None
        branch_tails = []
        for _ in range(k):
            length = int(rng.integers(spec.branch_ops_lo, spec.branch_ops_hi + 1))
            prev = entry
            for _ in range(length):
                v = add_node()
                edges.append((prev, v))
                prev = v
            branch_tails.append(prev)
        join = add_node()
        for tail in branch_tails:
            edges.append((tail, join))
        prev_join = join
    return ComputationGraph.build(name, nodes, edges)


def _encoder_decoder(rng, spec, name):
    layers = int(rng.integers(spec.layers_lo, spec.layers_hi + 1))
    unroll = int(rng.integers(spec.unroll_lo, spec.unroll_hi + 1))
    nodes, edges = [], []

    def add_node():
        v = len(nodes)
        nodes.append(
            OpGroup(id=v, compute_seconds=(_rand_cost(rng, spec),), output_bytes=_rand_bytes(rng, spec))
        )
        return v

    enc = [[add_node() for _ in range(unroll)] for _ in range(layers)]
    dec = [[add_node() for _ in range(unroll)] for _ in range(layers)]
    att = [add_node() for _ in range(unroll)]
    for stack in (enc, dec):
        for l in range(layers):
            for t in range(unroll):
                if t + 1 < unroll:
                    edges.append((stack[l][t], stack[l][t + 1]))
                if l + 1 < layers:
                    edges.append((stack[l][t], stack[l + 1][t]))
    for t in range(unroll):
        for t_enc in range(unroll):
            edges.append((enc[layers - 1][t_enc], att[t]))
        edges.append((att[t], dec[0][t]))
    return ComputationGraph.build(name, nodes, edges)


def encoder_decoder_node_count(layers: int, unroll: int) -> int:
    return 2 * layers * unroll + unroll


def _layered_random(rng, spec, name):
    n_layers = int(rng.integers(spec.layers_lo, spec.layers_hi + 1))
    widths = [int(rng.integers(spec.branches_lo, spec.branches_hi + 1)) for _ in range(n_layers)]
    nodes, edges = [], []
    layer_ids = []
    for width in widths:
        ids = []
        for _ in range(width):
            v = len(nodes)
            nodes.append(
                OpGroup(id=v, compute_seconds=(_rand_cost(rng, spec),), output_bytes=_rand_bytes(rng, spec))
            )
            ids.append(v)
        layer_ids.append(ids)
    for i in range(1, n_layers):
        for v in layer_ids[i]:
            parents = [u for u in layer_ids[i - 1] if rng.random() < 0.5]
            if not parents:
                parents = [layer_ids[i - 1][int(rng.integers(len(layer_ids[i - 1])))]]
            for u in parents:
                edges.append((u, v))
    return ComputationGraph.build(name, nodes, edges)


_BUILDERS = {
    BRANCH_BLOCKS: _branch_blocks,
    ENCODER_DECODER: _encoder_decoder,
    LAYERED_RANDOM: _layered_random,
}


def generate_family(spec: FamilySpec) -> list[ComputationGraph]:
    """All graphs of the family, deterministically from the spec seed."""
    out = []
    for i in range(spec.count):
        rng = np.random.default_rng([spec.seed, i])
        name = f"{spec.family}-{spec.seed}-{i:03d}"
        out.append(_BUILDERS[spec.family](rng, spec, name))
    return out


def split(graphs: list, fraction: float, seed: int):
    """Seeded shuffle; first ceil(fraction * N) graphs train, rest test."""
    if not (0.0 < fraction < 1.0):
        raise DatagenError("fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(graphs))
    n_train = math.ceil(fraction * len(graphs))
    train = [graphs[i] for i in order[:n_train]]
    test = [graphs[i] for i in order[n_train:]]
    return train, test


def write_dataset(directory: str, spec: FamilySpec) -> dict:
    """Emit graph documents plus a manifest; returns the manifest dict."""
    os.makedirs(directory, exist_ok=True)
    graphs = generate_family(spec)
    train, test = split(graphs, spec.train_fraction, spec.seed)
    train_names = {g.name for g in train}
    members = []
    for g in graphs:
        fname = f"{g.name}.json"
        with open(os.path.join(directory, fname), "w") as f:
            f.write(save_graph(g))
        members.append({"name": g.name, "file": fname, "split": "train" if g.name in train_names else "test"})
    manifest = {"spec": asdict(spec), "seed": spec.seed, "members": members}
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)
    return manifest


def read_dataset(directory: str):
    """Returns (manifest, train graphs, test graphs)."""
    with open(os.path.join(directory, "manifest.json")) as f:
        manifest = json.load(f)
    train, test = [], []
    for entry in manifest["members"]:
        with open(os.path.join(directory, entry["file"])) as f:
            g = load_graph(f.read())
        (train if entry["split"] == "train" else test).append(g)
    return manifest, train, test
