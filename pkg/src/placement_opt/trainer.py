"""REINFORCE training loop with a per-(graph, step) moving-average baseline.

Each epoch, W logical workers draw a graph from a seeded per-epoch shuffle,
run one episode against the shared parameter snapshot, and compute their own
gradients. Gradients merge in worker-index order and a single Adam step is
applied, so results are bit-identical regardless of how many threads actually
execute the rollouts. Learning rate and entropy weight decay linearly across
epochs.
"""

from __future__ import annotations

import csv
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import placement_env
from .neural_primitives import AdamState, adam_step, entropy, load_checkpoint, save_checkpoint
from .placement_env import RewardConfig
from .policy_gnn import PolicyConfig, PolicyParameters, init_policy, policy_backward, policy_forward
from .sim_engine import DeviceTopology, Placement


class TrainerError(ValueError):
    pass


@dataclass
class TrainerConfig:
    episodes: int = 200  # epochs; each epoch runs `workers` episodes
    workers: int = 8
    lr_start: float = 1e-3
    lr_end: float = 1e-4
    entropy_start: float = 1e-2
    entropy_end: float = 1e-3
    baseline_window: int = 10
    init_mode: str = "all_device_0"
    randomize_visit_order: bool = False
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.workers < 1:
            raise TrainerError("workers must be >= 1")
        if self.baseline_window < 1:
            raise TrainerError("baseline_window must be >= 1")
        if not (self.lr_start >= self.lr_end >= 0):
            raise TrainerError("need lr_start >= lr_end >= 0")
        if not (self.entropy_start >= self.entropy_end >= 0):
            raise TrainerError("need entropy_start >= entropy_end >= 0")

    def lr_at(self, epoch: int) -> float:
        return _linear(self.lr_start, self.lr_end, epoch, self.episodes)

    def entropy_at(self, epoch: int) -> float:
        return _linear(self.entropy_start, self.entropy_end, epoch, self.episodes)


def _linear(start, end, i, total):
    if total <= 1:
        return start
    frac = min(i, total - 1) / (total - 1)
    return start + (end - start) * frac


class BaselineTable:
    """Per (graph, step) ring buffer of the last w cumulative rewards."""

    def __init__(self, window: int):
        self.window = window
        self._buf: dict[tuple[str, int], deque] = {}

    def value(self, graph_name: str, t: int) -> float:
        buf = self._buf.get((graph_name, t))
        if not buf:
            return 0.0
        return sum(buf) / len(buf)

    def push(self, graph_name: str, cumulative: np.ndarray):
        for t, g in enumerate(cumulative):
            self._buf.setdefault((graph_name, t), deque(maxlen=self.window)).append(float(g))


@dataclass
class EpisodeTrace:
    graph_name: str
    tapes: list
    actions: list[int]
    rewards: list[float]
    entropies: list[float]
    final_placement: tuple[int, ...]
    final_runtime: float  # penalized seconds
    initial_runtime: float | None


def _sample(probs: np.ndarray, rng: np.random.Generator) -> int:
    u = rng.random()
    a = int(np.searchsorted(np.cumsum(probs), u))
    return min(a, len(probs) - 1)


def rollout(
    params: PolicyParameters,
    graph,
    topology: DeviceTopology,
    reward_cfg: RewardConfig,
    rng: np.random.Generator,
    init_mode: str = "all_device_0",
    randomize_order: bool = False,
    action_override=None,
    greedy: bool = False,
) -> EpisodeTrace:
    """One full episode. action_override fixes the action sequence (tests);
    greedy takes argmax (smallest device id on exact ties)."""
    order_seed = int(rng.integers(2**31)) if randomize_order else None
    init_seed = int(rng.integers(2**31)) if init_mode == "random" else None
    state = placement_env.reset(
        graph, topology, reward_cfg, init_mode=init_mode, init_seed=init_seed, order_seed=order_seed
    )
    initial_runtime = state.cached_runtime
    tapes, actions, rewards, entropies = [], [], [], []
    while not state.done:
        probs, tape = policy_forward(state, topology, params)
        if action_override is not None:
            a = int(action_override[state.step_index])
        elif greedy:
            a = int(np.argmax(probs))
        else:
            a = _sample(probs, rng)
        state, reward, _ = placement_env.step(state, a, topology, reward_cfg)
        tapes.append(tape)
        actions.append(a)
        rewards.append(reward)
        entropies.append(entropy(probs))
    return EpisodeTrace(
        graph_name=graph.name,
        tapes=tapes,
        actions=actions,
        rewards=rewards,
        entropies=entropies,
        final_placement=state.placement,
        final_runtime=placement_env.final_runtime(state, topology, reward_cfg),
        initial_runtime=initial_runtime,
    )


def cumulative_rewards(trace: EpisodeTrace) -> np.ndarray:
    return np.cumsum(np.asarray(trace.rewards, dtype=np.float64)[::-1])[::-1]


def compute_advantages(trace: EpisodeTrace, table: BaselineTable, update: bool = True) -> np.ndarray:
    """A_t = (cumulative reward from t) - baseline, baselines read before the
    episode's own cumulative rewards enter the table."""
    cum = cumulative_rewards(trace)
    adv = np.array([cum[t] - table.value(trace.graph_name, t) for t in range(len(cum))])
    if update:
        table.push(trace.graph_name, cum)
    return adv


@dataclass
class EpochStats:
    epoch: int
    lr: float
    entropy_weight: float
    grad_norm: float
    per_graph_runtime: dict[str, float]  # mean final penalized runtime
    mean_entropy: float


def train_epoch(
    params: PolicyParameters,
    graphs: list,
    topology: DeviceTopology,
    cfg: TrainerConfig,
    reward_cfg: RewardConfig,
    epoch: int,
    table: BaselineTable,
    adam: AdamState,
) -> tuple[EpochStats, list[EpisodeTrace]]:
    """One synchronous epoch: W rollouts, summed gradients, one Adam step."""
    if not graphs:
        raise TrainerError("empty training set")
    shuffle_rng = np.random.default_rng([cfg.seed, epoch, 0xD15])
    order = shuffle_rng.permutation(len(graphs))
    picks = [graphs[order[w % len(graphs)]] for w in range(cfg.workers)]

    def run(w):
        worker_rng = np.random.default_rng([cfg.seed, epoch, w])
        return rollout(
            params,
            picks[w],
            topology,
            reward_cfg,
            worker_rng,
            init_mode=cfg.init_mode,
            randomize_order=cfg.randomize_visit_order,
        )

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            traces = list(pool.map(run, range(cfg.workers)))
    else:
        traces = [run(w) for w in range(cfg.workers)]

    # Workers are synchronous: all advantages use the pre-epoch baselines,
    # then episodes enter the table in worker order.
    advantages = [compute_advantages(tr, table, update=False) for tr in traces]
    for tr in traces:
        table.push(tr.graph_name, cumulative_rewards(tr))

    beta = cfg.entropy_at(epoch)
    flat = params.flat_params()
    grads = [np.zeros_like(p) for p in flat]

    def backward(w):
        tr = traces[w]
        _, g = policy_backward(tr.tapes, tr.actions, advantages[w], beta, params)
        return g

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            worker_grads = list(pool.map(backward, range(cfg.workers)))
    else:
        worker_grads = [backward(w) for w in range(cfg.workers)]
    for g in worker_grads:  # fixed worker-index order
        for acc, gi in zip(grads, g):
            acc += gi

    lr = cfg.lr_at(epoch)
    adam_step(flat, grads, adam, lr_scale=lr)

    per_graph = {}
    for tr in traces:
        per_graph.setdefault(tr.graph_name, []).append(tr.final_runtime)
    stats = EpochStats(
        epoch=epoch,
        lr=lr,
        entropy_weight=beta,
        grad_norm=float(np.sqrt(sum(float((g * g).sum()) for g in grads))),
        per_graph_runtime={k: float(np.mean(v)) for k, v in per_graph.items()},
        mean_entropy=float(np.mean([e for tr in traces for e in tr.entropies])),
    )
    return stats, traces


CURVE_COLUMNS = ["epoch", "graph", "mean_runtime_s", "best_runtime_s", "mean_entropy", "grad_norm", "lr", "entropy_w"]


@dataclass
class TrainResult:
    params: PolicyParameters
    adam: AdamState
    curve: list[dict]
    best_placements: dict[str, tuple[tuple[int, ...], float]]  # graph -> (placement, runtime)


def train(
    policy_cfg: PolicyConfig,
    cfg: TrainerConfig,
    graphs: list,
    topology: DeviceTopology,
    reward_cfg: RewardConfig | None = None,
) -> TrainResult:
    """Run cfg.episodes epochs and track the best placement per graph."""
    reward_cfg = reward_cfg or RewardConfig()
    params = init_policy(policy_cfg, seed=cfg.seed)
    adam = AdamState.for_params(params.flat_params(), lr=1.0)
    table = BaselineTable(cfg.baseline_window)
    curve = []
    best: dict[str, tuple[tuple[int, ...], float]] = {}
    for epoch in range(cfg.episodes):
        stats, traces = train_epoch(params, graphs, topology, cfg, reward_cfg, epoch, table, adam)
        for tr in traces:
            cur = best.get(tr.graph_name)
            if cur is None or tr.final_runtime < cur[1]:
                best[tr.graph_name] = (tr.final_placement, tr.final_runtime)
        for gname in sorted(stats.per_graph_runtime):
            curve.append(
                {
                    "epoch": epoch,
                    "graph": gname,
                    "mean_runtime_s": stats.per_graph_runtime[gname],
                    "best_runtime_s": best[gname][1],
                    "mean_entropy": stats.mean_entropy,
                    "grad_norm": stats.grad_norm,
                    "lr": stats.lr,
                    "entropy_w": stats.entropy_weight,
                }
            )
    return TrainResult(params=params, adam=adam, curve=curve, best_placements=best)


def write_curve(path, curve):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CURVE_COLUMNS)
        writer.writeheader()
        writer.writerows(curve)


def save_policy_checkpoint(path, params: PolicyParameters, adam: AdamState | None, rng=None, extra=None):
    header = {"policy": params.config.to_header()}
    if extra:
        header.update(extra)
    save_checkpoint(path, params.flat_params(), adam, rng, extra=header)


def load_policy_checkpoint(path):
    """Returns (PolicyParameters, AdamState | None, rng | None, extra)."""
    flat, adam, rng, extra = load_checkpoint(path)
    cfg = PolicyConfig.from_header(extra["policy"])
    params = init_policy(cfg, seed=0)
    template = params.flat_params()
    if len(template) != len(flat):
        raise TrainerError("checkpoint parameter count mismatch")
    for dst, src in zip(template, flat):
        if dst.shape != src.shape:
            raise TrainerError("checkpoint parameter shape mismatch")
        dst[...] = src
    return params, adam, rng, extra


@dataclass
class Prediction:
    placement: Placement
    runtime_seconds: float  # penalized
    makespan_seconds: float
    peak_memory_bytes: tuple[float, ...]


def predict_placement(
    params: PolicyParameters,
    graph,
    topology: DeviceTopology,
    reward_cfg: RewardConfig | None = None,
    n_samples: int = 0,
    seed: int = 0,
    init_mode: str = "all_device_0",
) -> Prediction:
    """One greedy rollout plus n sampled rollouts; best penalized runtime wins."""
    if params.config.num_devices != topology.num_devices:
        raise TrainerError(
            f"checkpoint is for {params.config.num_devices} devices, topology has {topology.num_devices}"
        )
    reward_cfg = reward_cfg or RewardConfig(mode=placement_env.TERMINAL)
    rng = np.random.default_rng(seed)
    candidates = [rollout(params, graph, topology, reward_cfg, rng, init_mode=init_mode, greedy=True)]
    for _ in range(n_samples):
        candidates.append(rollout(params, graph, topology, reward_cfg, rng, init_mode=init_mode))
    best = min(candidates, key=lambda tr: (tr.final_runtime, tr.final_placement))
    placement = Placement(best.final_placement)
    runtime, result = placement_env.evaluate_placement(graph, topology, placement, reward_cfg)
    return Prediction(
        placement=placement,
        runtime_seconds=runtime,
        makespan_seconds=result.makespan_seconds,
        peak_memory_bytes=result.peak_memory_bytes,
    )
