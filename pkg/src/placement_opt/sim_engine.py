"""Discrete-event execution simulator for placed computation graphs.

Per device there is a FIFO queue of runnable ops and a FIFO queue of pending
outbound transfers (one op runs per device at a time; one transfer occupies a
device's bus at a time). An op becomes runnable once every parent has finished
and every off-device parent tensor has arrived. Transfer duration is
output_bytes / bandwidth(src, dst); colocated edges cost nothing and never
touch a bus. A tensor needed by several consumers on one destination device
is shipped there once.

Determinism rules (shared with the reference oracle below):
  * queue entries are ordered by (time entered, node id) for ops and by
    (time entered, producer id, destination id) for transfers;
  * events pop in (timestamp, sequence) order;
  * at each distinct timestamp, all completions (including cascades through
    zero-duration work) are processed before any non-zero-duration dispatch.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass

from .graph_core import ComputationGraph

OP_DONE = "OpDone"
TRANSFER_DONE = "TransferDone"
WAKEUP = "Wakeup"


class SimError(ValueError):
    """Invalid simulation input."""


@dataclass(frozen=True)
class SimEvent:
    """One scheduled event; the heap pops in (timestamp, sequence) order."""

    kind: str  # OP_DONE, TRANSFER_DONE, or WAKEUP
    timestamp: float
    sequence: int
    payload: object  # node id for ops, (node, dst device) for transfers


@dataclass(frozen=True)
class Device:
    id: int
    memory_bytes: float
    compute_scale: float = 1.0


@dataclass(frozen=True)
class DeviceTopology:
    """Devices plus pairwise bandwidth (scalar = uniform)."""

    devices: tuple[Device, ...]
    bandwidth_bytes_per_sec: object  # float or |D|x|D| nested tuples

    def __post_init__(self):
        if len(self.devices) < 1:
            raise SimError("topology needs at least one device")
        for i, d in enumerate(self.devices):
            if d.id != i:
                raise SimError("device ids must be dense 0..|D|-1")
            if not d.memory_bytes > 0:
                raise SimError(f"device {i}: memory_bytes must be positive")
            if not d.compute_scale > 0:
                raise SimError(f"device {i}: compute_scale must be positive")
        bw = self.bandwidth_bytes_per_sec
        if isinstance(bw, (int, float)):
            if not bw > 0:
                raise SimError("bandwidth must be positive")
        else:
            m = len(self.devices)
            if len(bw) != m or any(len(row) != m for row in bw):
                raise SimError("bandwidth matrix must be |D|x|D|")
            for i in range(m):
                for j in range(m):
                    if i != j and not bw[i][j] > 0:
                        raise SimError(f"bandwidth[{i}][{j}] must be positive")

    @property
    def num_devices(self) -> int:
        return len(self.devices)

    def bandwidth(self, src: int, dst: int) -> float:
        bw = self.bandwidth_bytes_per_sec
        if isinstance(bw, (int, float)):
            return float(bw)
        return float(bw[src][dst])


def load_topology(data) -> DeviceTopology:
    """Parse the topology JSON document."""
    if isinstance(data, (bytes, str)):
        try:
            doc = json.loads(data)
        except json.JSONDecodeError as e:
            raise SimError(f"not valid JSON: {e}") from e
    else:
        doc = data
    devs = []
    for i, dd in enumerate(doc.get("devices", ())):
        devs.append(
            Device(
                id=int(dd.get("id", i)),
                memory_bytes=float(dd["memory_bytes"]),
                compute_scale=float(dd.get("compute_scale", 1.0)),
            )
        )
    bw = doc.get("bandwidth_bytes_per_sec")
    if bw is None:
        raise SimError("topology document missing bandwidth_bytes_per_sec")
    if not isinstance(bw, (int, float)):
        bw = tuple(tuple(float(x) for x in row) for row in bw)
    else:
        bw = float(bw)
    return DeviceTopology(devices=tuple(sorted(devs, key=lambda d: d.id)), bandwidth_bytes_per_sec=bw)


def save_topology(topology: DeviceTopology) -> str:
    bw = topology.bandwidth_bytes_per_sec
    doc = {
        "devices": [
            {"id": d.id, "memory_bytes": d.memory_bytes, "compute_scale": d.compute_scale}
            for d in topology.devices
        ],
        "bandwidth_bytes_per_sec": bw if isinstance(bw, (int, float)) else [list(r) for r in bw],
    }
    return json.dumps(doc, indent=2)


@dataclass(frozen=True)
class Placement:
    """Total node -> device assignment."""

    assignment: tuple[int, ...]

    @staticmethod
    def from_mapping(mapping, num_nodes: int) -> "Placement":
        out = [None] * num_nodes
        for k, v in mapping.items():
            out[int(k)] = int(v)
        if any(d is None for d in out):
            missing = [i for i, d in enumerate(out) if d is None]
            raise SimError(f"placement missing nodes {missing}")
        return Placement(assignment=tuple(out))

    def to_document(self, graph_name: str) -> str:
        return json.dumps(
            {"graph": graph_name, "assignment": {str(i): d for i, d in enumerate(self.assignment)}},
            indent=2,
        )


def load_placement(data, num_nodes: int) -> Placement:
    doc = json.loads(data) if isinstance(data, (bytes, str)) else data
    return Placement.from_mapping(doc["assignment"], num_nodes)


@dataclass(frozen=True)
class TransferRecord:
    node: int  # producer of the tensor
    src: int
    dst: int
    start: float
    end: float


@dataclass(frozen=True)
class SimulationResult:
    makespan_seconds: float
    peak_memory_bytes: tuple[float, ...]
    node_spans: tuple[tuple[float, float], ...]
    transfers: tuple[TransferRecord, ...]
    event_count: int

    def to_document(self, graph: ComputationGraph, placement: Placement) -> str:
        """Timeline export for external visualization."""
        return json.dumps(
            {
                "graph": graph.name,
                "makespan_seconds": self.makespan_seconds,
                "peak_memory_bytes": list(self.peak_memory_bytes),
                "event_count": self.event_count,
                "nodes": [
                    {"id": v, "device": placement.assignment[v], "start": s, "end": e}
                    for v, (s, e) in enumerate(self.node_spans)
                ],
                "transfers": [
                    {"node": t.node, "src": t.src, "dst": t.dst, "start": t.start, "end": t.end}
                    for t in self.transfers
                ],
            },
            indent=2,
        )


def _check_inputs(graph: ComputationGraph, topology: DeviceTopology, placement: Placement):
    n = graph.num_nodes
    m = topology.num_devices
    if len(placement.assignment) != n:
        raise SimError(f"placement covers {len(placement.assignment)} of {n} nodes")
    for v, d in enumerate(placement.assignment):
        if not (0 <= d < m):
            raise SimError(f"node {v} placed on invalid device {d}")
    for g in graph.nodes:
        if len(g.compute_seconds) not in (1, m):
            raise SimError(
                f"node {g.id}: cost vector length {len(g.compute_seconds)} "
                f"incompatible with {m} devices"
            )


def _durations(graph, topology, placement):
    return [
        graph.nodes[v].cost_on(placement.assignment[v]) * topology.devices[placement.assignment[v]].compute_scale
        for v in range(graph.num_nodes)
    ]


def _transfer_pairs(graph, placement):
    """Cross-device (producer, dst device) pairs, deduplicated."""
    pairs = set()
    for v in range(graph.num_nodes):
        for c in graph.children[v]:
            if placement.assignment[c] != placement.assignment[v]:
                pairs.add((v, placement.assignment[c]))
    return pairs


class _SortedQueue:
    """FIFO-in-time queue; same-instant arrivals order by the id key."""

    def __init__(self):
        self._heap = []

    def push(self, key):
        heapq.heappush(self._heap, key)

    def pop(self):
        return heapq.heappop(self._heap)

    def peek(self):
        return self._heap[0]

    def __len__(self):
        return len(self._heap)


def simulate(graph: ComputationGraph, topology: DeviceTopology, placement: Placement) -> SimulationResult:
    """Run the event simulation and profile memory. See module docstring."""
    _check_inputs(graph, topology, placement)
    n = graph.num_nodes
    dur = _durations(graph, topology, placement)
    dev_of = placement.assignment

    q_op = [_SortedQueue() for _ in range(topology.num_devices)]
    q_tr = [_SortedQueue() for _ in range(topology.num_devices)]
    dev_busy = [False] * topology.num_devices
    bus_busy = [False] * topology.num_devices

    deps_left = [len(graph.parents[v]) for v in range(n)]
    transfer_requested = set()

    node_start = [0.0] * n
    node_end = [0.0] * n
    transfer_span = {}
    transfers = []

    events = []  # heap of (timestamp, sequence, SimEvent)
    seq = 0
    event_count = 0

    def push_event(t, kind, payload):
        nonlocal seq
        heapq.heappush(events, (t, seq, SimEvent(kind=kind, timestamp=t, sequence=seq, payload=payload)))
        seq += 1

    def enqueue_ready(v, t):
        q_op[dev_of[v]].push((t, v))

    def request_transfers(v, t):
        src = dev_of[v]
        for c in graph.children[v]:
            dst = dev_of[c]
            if dst != src and (v, dst) not in transfer_requested:
                transfer_requested.add((v, dst))
                q_tr[src].push((t, v, dst))

    def start_op(d, t):
        _, v = q_op[d].pop()
        dev_busy[d] = True
        node_start[v] = t
        push_event(t + dur[v], OP_DONE, v)

    def start_transfer(d, t):
        _, v, dst = q_tr[d].pop()
        bus_busy[d] = True
        length = graph.nodes[v].output_bytes / topology.bandwidth(d, dst)
        transfer_span[(v, dst)] = (t, t + length)
        push_event(t + length, TRANSFER_DONE, (v, dst))

    def handle_completion(t, kind, payload):
        if kind == OP_DONE:
            v = payload
            d = dev_of[v]
            node_end[v] = t
            dev_busy[d] = False
            request_transfers(v, t)
            for c in graph.children[v]:
                if dev_of[c] == d:
                    deps_left[c] -= 1
                    if deps_left[c] == 0:
                        enqueue_ready(c, t)
        else:
            v, dst = payload
            src = dev_of[v]
            bus_busy[src] = False
            ts, te = transfer_span[(v, dst)]
            transfers.append(TransferRecord(node=v, src=src, dst=dst, start=ts, end=te))
            for c in graph.children[v]:
                if dev_of[c] == dst:
                    deps_left[c] -= 1
                    if deps_left[c] == 0:
                        enqueue_ready(c, t)

    # Sources enter their device queues at t=0 in id order.
    for v in range(n):
        if deps_left[v] == 0:
            enqueue_ready(v, 0.0)

    clock = 0.0
    while True:
        if not events:
            pending = any(len(q) for q in q_op) or any(len(q) for q in q_tr)
            if not pending:
                break
            # Only whole-timestamp dispatch below can drain these.
        else:
            clock = events[0][0]
            # Completion phase: drain all completions at this timestamp,
            # including zero-duration cascades started within it.
        while True:
            while events and events[0][0] == clock:
                _, _, ev = heapq.heappop(events)
                event_count += 1
                handle_completion(clock, ev.kind, ev.payload)
            # Zero-duration dispatch pass (a wakeup that finishes instantly).
            fired = False
            for d in range(topology.num_devices):
                if not dev_busy[d] and len(q_op[d]):
                    v = q_op[d].peek()[1]
                    if dur[v] == 0.0:
                        event_count += 1  # Wakeup
                        start_op(d, clock)
                        fired = True
                if not bus_busy[d] and len(q_tr[d]):
                    _, v, dst = q_tr[d].peek()
                    if graph.nodes[v].output_bytes == 0.0:
                        event_count += 1  # Wakeup
                        start_transfer(d, clock)
                        fired = True
            if not fired and not (events and events[0][0] == clock):
                break
        # Non-zero dispatch pass for this timestamp.
        for d in range(topology.num_devices):
            if not dev_busy[d] and len(q_op[d]):
                event_count += 1  # Wakeup
                start_op(d, clock)
            if not bus_busy[d] and len(q_tr[d]):
                event_count += 1  # Wakeup
                start_transfer(d, clock)
        if not events:
            if any(len(q) for q in q_op) or any(len(q) for q in q_tr):
                raise SimError("simulation stalled with queued work")  # unreachable on valid DAGs
            break

    if any(deps_left[v] > 0 for v in range(n)):
        raise SimError("simulation ended with unexecuted ops")  # unreachable on valid DAGs

    makespan = max(node_end, default=0.0)
    transfers = tuple(sorted(transfers, key=lambda r: (r.start, r.node, r.dst)))
    spans = tuple(zip(node_start, node_end))
    peaks = memory_profile(spans, transfers, makespan, graph, topology, placement)
    return SimulationResult(
        makespan_seconds=makespan,
        peak_memory_bytes=peaks,
        node_spans=spans,
        transfers=transfers,
        event_count=event_count,
    )


def memory_profile(node_spans, transfers, makespan, graph, topology, placement):
    """Per-device peak bytes from the timeline.

    A tensor is allocated on its producer's device at the producer's start and
    on each destination at transfer start. It is freed on a device when the
    last reader there (consumer op end, or outbound transfer end on the
    producer side) completes; sink outputs stay live until the makespan.
    Allocations at an instant count before frees at the same instant.
    """
    n = graph.num_nodes
    dev_of = placement.assignment
    outbound = {}  # (producer, dst) -> transfer record
    for tr in transfers:
        outbound[(tr.node, tr.dst)] = tr

    intervals = []  # (device, start, end, bytes)
    for v in range(n):
        size = graph.nodes[v].output_bytes
        if size <= 0:
            continue
        d = dev_of[v]
        start_v, end_v = node_spans[v]
        dsts = sorted({dev_of[c] for c in graph.children[v] if dev_of[c] != d})
        readers = [node_spans[c][1] for c in graph.children[v] if dev_of[c] == d]
        readers += [outbound[(v, dst)].end for dst in dsts]
        free_at = max(readers) if graph.children[v] else makespan
        intervals.append((d, start_v, free_at, size))
        for dst in dsts:
            tr = outbound[(v, dst)]
            last_use = max(node_spans[c][1] for c in graph.children[v] if dev_of[c] == dst)
            intervals.append((dst, tr.start, last_use, size))

    peaks = [0.0] * topology.num_devices
    by_dev = {}
    for d, s, e, size in intervals:
        by_dev.setdefault(d, []).append((s, 0, size))  # alloc sorts before free at same t
        by_dev[d].append((e, 1, -size))
    for d, points in by_dev.items():
        live = 0.0
        for _, _, delta in sorted(points):
            live += delta
            peaks[d] = max(peaks[d], live)
    return tuple(peaks)


def oracle_simulate(graph: ComputationGraph, topology: DeviceTopology, placement: Placement) -> float:
    """Reference makespan by fixed-point timeline relaxation.

    Shares no scheduling code with simulate(): repeatedly recomputes every
    node's earliest start and every transfer's bus slot, serializing each
    device by (ready time, node id) and each bus by (enqueue time, producer,
    destination), until the timeline stops changing. Intended for small
    instances.
    """
    _check_inputs(graph, topology, placement)
    n = graph.num_nodes
    dur = _durations(graph, topology, placement)
    dev_of = placement.assignment
    pairs = sorted(_transfer_pairs(graph, placement))

    end = [0.0] * n
    arrival = {p: 0.0 for p in pairs}

    limit = 4 * (n + len(pairs)) + 16
    for _ in range(limit):
        # Bus schedules from current op end times.
        new_arrival = {}
        for src in range(topology.num_devices):
            queue = sorted(
                ((end[v], v, dst) for (v, dst) in pairs if dev_of[v] == src),
            )
            bus_free = 0.0
            for enq, v, dst in queue:
                start = max(enq, bus_free)
                bus_free = start + graph.nodes[v].output_bytes / topology.bandwidth(src, dst)
                new_arrival[(v, dst)] = bus_free

        # Ready times from parents and arrivals.
        ready = [0.0] * n
        for v in range(n):
            r = 0.0
            for p in graph.parents[v]:
                if dev_of[p] == dev_of[v]:
                    r = max(r, end[p])
                else:
                    r = max(r, new_arrival[(p, dev_of[v])])
            ready[v] = r

        # Device serialization in (ready, id) order.
        new_end = [0.0] * n
        for d in range(topology.num_devices):
            queue = sorted((ready[v], v) for v in range(n) if dev_of[v] == d)
            free = 0.0
            for r, v in queue:
                start = max(r, free)
                free = start + dur[v]
                new_end[v] = free

        if new_end == end and new_arrival == arrival:
            break
        end, arrival = new_end, new_arrival
    else:
        raise SimError("oracle relaxation did not converge")

    return max(end, default=0.0)
