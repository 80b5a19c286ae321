"""MDP over placements: one episode visits every node once and re-places it.

State features per node: [normalized compute time, normalized output bytes,
one-hot current device, visited flag, current flag], so the feature dimension
is |D| + 4. Rewards come from the memory-penalized runtime of the simulated
placement, either once at the end of the episode (terminal mode) or as the
per-step improvement (intermediate mode).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import sim_engine
from .graph_core import ComputationGraph, topological_order
from .sim_engine import DeviceTopology, Placement, SimulationResult

BYTES_PER_GB = 1.0e9

TERMINAL = "terminal"
INTERMEDIATE = "intermediate"


class EnvError(ValueError):
    pass


@dataclass(frozen=True)
class RewardConfig:
    mode: str = INTERMEDIATE
    memory_threshold_bytes: float = 10.7 * BYTES_PER_GB
    penalty_per_gb: float = 2.0  # seconds per GB over threshold
    reward_scale: float | None = None  # None: use R(p0) per episode, floored at 1e-6

    def __post_init__(self):
        if self.mode not in (TERMINAL, INTERMEDIATE):
            raise EnvError(f"unknown reward mode {self.mode!r}")
        if self.penalty_per_gb < 0:
            raise EnvError("penalty_per_gb must be >= 0")
        if not self.memory_threshold_bytes > 0:
            raise EnvError("memory_threshold_bytes must be positive")
        if self.reward_scale is not None and not self.reward_scale > 0:
            raise EnvError("reward_scale must be positive")


def penalized_runtime(result: SimulationResult, topology: DeviceTopology, cfg: RewardConfig) -> float:
    """Makespan plus penalty_per_gb * GB of peak memory above the threshold."""
    m = max(result.peak_memory_bytes)
    r = result.makespan_seconds
    if m <= cfg.memory_threshold_bytes:
        return r
    return r + cfg.penalty_per_gb * (m - cfg.memory_threshold_bytes) / BYTES_PER_GB


def evaluate_placement(graph, topology, placement, cfg: RewardConfig):
    """Simulate a placement and return (penalized runtime, SimulationResult)."""
    result = sim_engine.simulate(graph, topology, placement)
    return penalized_runtime(result, topology, cfg), result


@dataclass(frozen=True)
class EpisodeState:
    graph: ComputationGraph
    placement: tuple[int, ...]
    visited: tuple[bool, ...]
    current_node: int | None
    step_index: int
    visit_order: tuple[int, ...]
    reward_scale: float
    cached_runtime: float | None  # R of the current placement (intermediate mode)

    @property
    def done(self) -> bool:
        return self.step_index >= len(self.visit_order)


def reset(
    graph: ComputationGraph,
    topology: DeviceTopology,
    cfg: RewardConfig,
    init_mode: str = "all_device_0",
    init_seed: int | None = None,
    order_seed: int | None = None,
) -> EpisodeState:
    """Start an episode. init_mode is 'all_device_0' or 'random' (seeded)."""
    n = graph.num_nodes
    if init_mode == "all_device_0":
        placement = (0,) * n
    elif init_mode == "random":
        rng = np.random.default_rng(init_seed)
        placement = tuple(int(d) for d in rng.integers(topology.num_devices, size=n))
    else:
        raise EnvError(f"unknown init_mode {init_mode!r}")

    order = tuple(topological_order(graph, order_seed))
    cached = None
    scale = cfg.reward_scale
    if cfg.mode == INTERMEDIATE or scale is None:
        r0, _ = evaluate_placement(graph, topology, Placement(placement), cfg)
        if cfg.mode == INTERMEDIATE:
            cached = r0
        if scale is None:
            scale = max(r0, 1e-6)
    return EpisodeState(
        graph=graph,
        placement=placement,
        visited=(False,) * n,
        current_node=order[0] if n else None,
        step_index=0,
        visit_order=order,
        reward_scale=scale,
        cached_runtime=cached,
    )


def featurize(state: EpisodeState, topology: DeviceTopology) -> np.ndarray:
    """Raw per-node feature matrix, shape (|V|, |D| + 4)."""
    graph = state.graph
    n = graph.num_nodes
    m = topology.num_devices
    feats = np.zeros((n, m + 4), dtype=np.float64)
    max_c = graph.max_compute_seconds()
    max_b = graph.max_output_bytes()
    for v in range(n):
        g = graph.nodes[v]
        feats[v, 0] = g.cost_on(0) / max_c if max_c > 0 else 0.0
        feats[v, 1] = g.output_bytes / max_b if max_b > 0 else 0.0
        feats[v, 2 + state.placement[v]] = 1.0
        feats[v, m + 2] = 1.0 if state.visited[v] else 0.0
        feats[v, m + 3] = 1.0 if v == state.current_node else 0.0
    return feats


def feature_dim(num_devices: int) -> int:
    return num_devices + 4


def step(state: EpisodeState, action: int, topology: DeviceTopology, cfg: RewardConfig):
    """Apply a device choice for the current node.

    Returns (next_state, reward, done). Terminal mode: reward is 0 except
    -R(final)/scale at the last step. Intermediate mode: (R_before -
    R_after)/scale at every step, so improvements are positive.
    """
    if state.done:
        raise EnvError("step() after episode end")
    if not (0 <= action < topology.num_devices):
        raise EnvError(f"invalid device {action}")

    v = state.current_node
    placement = list(state.placement)
    placement[v] = action
    placement = tuple(placement)
    visited = list(state.visited)
    visited[v] = True
    t_next = state.step_index + 1
    done = t_next >= len(state.visit_order)
    nxt = None if done else state.visit_order[t_next]

    reward = 0.0
    cached = state.cached_runtime
    if cfg.mode == INTERMEDIATE:
        if placement == state.placement:
            r_after = cached
        else:
            r_after, _ = evaluate_placement(state.graph, topology, Placement(placement), cfg)
        reward = (cached - r_after) / state.reward_scale
        cached = r_after
    elif done:
        r_final, _ = evaluate_placement(state.graph, topology, Placement(placement), cfg)
        reward = -r_final / state.reward_scale
        cached = r_final

    next_state = replace(
        state,
        placement=placement,
        visited=tuple(visited),
        current_node=nxt,
        step_index=t_next,
        cached_runtime=cached,
    )
    return next_state, reward, done


def final_runtime(state: EpisodeState, topology: DeviceTopology, cfg: RewardConfig) -> float:
    """Penalized runtime of a finished episode's placement."""
    if state.cached_runtime is not None:
        return state.cached_runtime
    r, _ = evaluate_placement(state.graph, topology, Placement(state.placement), cfg)
    return r
