import pytest

from placement_opt.graph_core import ComputationGraph, OpGroup
from placement_opt.sim_engine import Device, DeviceTopology


def make_graph(name, costs, bytes_out, edges):
    """costs / bytes_out are per-node scalars, edges a set of (u, v)."""
    nodes = [
        OpGroup(id=i, compute_seconds=(float(c),), output_bytes=float(b))
        for i, (c, b) in enumerate(zip(costs, bytes_out))
    ]
    return ComputationGraph.build(name, nodes, set(edges))


def make_topology(n_devices=2, memory=12e9, bandwidth=1e6, scales=None):
    scales = scales or [1.0] * n_devices
    return DeviceTopology(
        devices=tuple(Device(id=i, memory_bytes=memory, compute_scale=scales[i]) for i in range(n_devices)),
        bandwidth_bytes_per_sec=bandwidth,
    )


def random_dag(rng, max_nodes=8, edge_prob=0.4, cost_range=(0.1, 5.0), bytes_range=(0.0, 4.0)):
    n = int(rng.integers(2, max_nodes + 1))
    edges = set()
    for v in range(1, n):
        for u in range(v):
            if rng.random() < edge_prob:
                edges.add((u, v))
    costs = rng.uniform(*cost_range, size=n)
    sizes = rng.uniform(*bytes_range, size=n)
    return make_graph("random", costs, sizes, edges)


@pytest.fixture
def diamond():
    # The hand-traced fixture: a feeds b and c, both feed d.
    return make_graph(
        "diamond",
        costs=[1.0, 2.0, 2.0, 1.0],
        bytes_out=[2e6, 0.0, 2e6, 0.0],
        edges={(0, 1), (0, 2), (1, 3), (2, 3)},
    )


@pytest.fixture
def diamond_placement():
    from placement_opt.sim_engine import Placement

    return Placement((0, 0, 1, 0))


@pytest.fixture
def two_device():
    return make_topology(2)


@pytest.fixture
def chain2():
    return make_graph("chain2", costs=[2.0, 3.0], bytes_out=[0.0, 0.0], edges={(0, 1)})
