"""Computation-graph data model: validation, reachability, coarsening, serialization.

A graph is a DAG of op groups. Each group carries a per-device compute cost
vector (a single entry is broadcast to all devices at simulation time) and the
byte size of its output tensor. Node ids are densified to 0..n-1 on load;
original ids are kept in ``members``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field


class GraphError(ValueError):
    """Invalid graph document or graph operation."""


@dataclass(frozen=True)
class OpGroup:
    """One atomically-placed group of operations."""

    id: int
    compute_seconds: tuple[float, ...]  # len 1 = same cost on every device
    output_bytes: float
    members: tuple[str, ...] = ()

    def __post_init__(self):
        if self.id < 0:
            raise GraphError(f"node id {self.id} is negative")
        if len(self.compute_seconds) == 0:
            raise GraphError(f"node {self.id}: empty compute cost vector")
        for c in self.compute_seconds:
            if not (c >= 0.0) or c != c or c == float("inf"):
                raise GraphError(f"node {self.id}: compute cost {c} not finite and >= 0")
        if not (self.output_bytes >= 0.0):
            raise GraphError(f"node {self.id}: output_bytes {self.output_bytes} negative")

    def cost_on(self, device: int) -> float:
        """Compute seconds on a device; a length-1 vector is broadcast."""
        if len(self.compute_seconds) == 1:
            return self.compute_seconds[0]
        return self.compute_seconds[device]


@dataclass(frozen=True)
class ComputationGraph:
    """Immutable DAG of op groups with dense ids 0..n-1."""

    name: str
    nodes: tuple[OpGroup, ...]
    edges: frozenset[tuple[int, int]]
    parents: tuple[tuple[int, ...], ...] = field(repr=False, default=())
    children: tuple[tuple[int, ...], ...] = field(repr=False, default=())

    @staticmethod
    def build(name, nodes, edges) -> "ComputationGraph":
        """Validate and index a graph; nodes must already have dense ids."""
        nodes = tuple(sorted(nodes, key=lambda g: g.id))
        n = len(nodes)
        ids = [g.id for g in nodes]
        if ids != list(range(n)):
            seen = set()
            for i in ids:
                if i in seen:
                    raise GraphError(f"duplicate node id {i}")
                seen.add(i)
            raise GraphError(f"node ids {ids} are not dense 0..{n - 1}")
        edge_set = set()
        for u, v in edges:
            if u == v:
                raise GraphError(f"self-loop on node {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise GraphError(f"edge ({u}, {v}) references a missing node")
            if (u, v) in edge_set:
                raise GraphError(f"duplicate edge ({u}, {v})")
            edge_set.add((u, v))
        parents = [[] for _ in range(n)]
        children = [[] for _ in range(n)]
        for u, v in sorted(edge_set):
            children[u].append(v)
            parents[v].append(u)
        g = ComputationGraph(
            name=name,
            nodes=nodes,
            edges=frozenset(edge_set),
            parents=tuple(tuple(p) for p in parents),
            children=tuple(tuple(c) for c in children),
        )
        cycle = _find_cycle(g)
        if cycle is not None:
            raise GraphError("cycle detected: " + " -> ".join(map(str, cycle)))
        return g

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def max_compute_seconds(self) -> float:
        """Graph-wide maximum of the device-0 compute cost (feature scaling)."""
        return max((g.cost_on(0) for g in self.nodes), default=0.0)

    def max_output_bytes(self) -> float:
        return max((g.output_bytes for g in self.nodes), default=0.0)


def _find_cycle(graph: ComputationGraph):
    """Return one cycle as a node list, or None if the graph is acyclic."""
    n = graph.num_nodes
    color = [0] * n  # 0 unvisited, 1 on stack, 2 done
    parent = [-1] * n
    for root in range(n):
        if color[root]:
            continue
        stack = [(root, iter(graph.children[root]))]
        color[root] = 1
        while stack:
            u, it = stack[-1]
            advanced = False
            for v in it:
                if color[v] == 0:
                    color[v] = 1
                    parent[v] = u
                    stack.append((v, iter(graph.children[v])))
                    advanced = True
                    break
                if color[v] == 1:
                    cycle = [v, u]
                    w = u
                    while w != v:
                        w = parent[w]
                        cycle.append(w)
                    cycle.reverse()
                    return cycle
            if not advanced:
                color[u] = 2
                stack.pop()
    return None


def load_graph(data) -> ComputationGraph:
    """Parse and validate a graph document (JSON text/bytes or a parsed dict).

    Sparse node ids are remapped to 0..n-1 in increasing original-id order;
    a remapped node with no declared members records its original id there.
    """
    if isinstance(data, (bytes, str)):
        try:
            doc = json.loads(data)
        except json.JSONDecodeError as e:
            raise GraphError(f"not valid JSON: {e}") from e
    else:
        doc = data
    if not isinstance(doc, dict) or "nodes" not in doc:
        raise GraphError("graph document must be an object with a 'nodes' list")

    raw_nodes = doc["nodes"]
    orig_ids = []
    for nd in raw_nodes:
        if "id" not in nd:
            raise GraphError("node without an 'id'")
        orig_ids.append(int(nd["id"]))
    if len(set(orig_ids)) != len(orig_ids):
        dup = sorted(i for i in set(orig_ids) if orig_ids.count(i) > 1)
        raise GraphError(f"duplicate node id {dup[0]}")
    remap = {orig: new for new, orig in enumerate(sorted(orig_ids))}
    sparse = orig_ids and sorted(orig_ids) != list(range(len(orig_ids)))

    nodes = []
    for nd in raw_nodes:
        orig = int(nd["id"])
        cost = nd.get("cost", 0.0)
        if isinstance(cost, (int, float)):
            cost_vec = (float(cost),)
        else:
            cost_vec = tuple(float(c) for c in cost)
        members = tuple(str(m) for m in nd.get("members", ()))
        if sparse and not members and remap[orig] != orig:
            members = (str(orig),)
        nodes.append(
            OpGroup(
                id=remap[orig],
                compute_seconds=cost_vec,
                output_bytes=float(nd.get("output_bytes", 0.0)),
                members=members,
            )
        )

    edges = []
    for e in doc.get("edges", ()):
        u, v = int(e[0]), int(e[1])
        if u not in remap or v not in remap:
            raise GraphError(f"edge ({u}, {v}) references a missing node")
        edges.append((remap[u], remap[v]))

    return ComputationGraph.build(str(doc.get("name", "")), nodes, edges)


def save_graph(graph: ComputationGraph) -> str:
    """Serialize back to the JSON document schema (round-trips load_graph)."""
    doc = {
        "name": graph.name,
        "nodes": [
            {
                "id": g.id,
                "cost": list(g.compute_seconds) if len(g.compute_seconds) > 1 else g.compute_seconds[0],
                "output_bytes": g.output_bytes,
                **({"members": list(g.members)} if g.members else {}),
            }
            for g in graph.nodes
        ],
        "edges": sorted([u, v] for u, v in graph.edges),
    }
    return json.dumps(doc, indent=2)


@dataclass(frozen=True)
class ReachabilityIndex:
    """Transitive-closure bitsets: bit u of ancestors[v] set iff u can reach v."""

    ancestors: tuple[int, ...]
    descendants: tuple[int, ...]

    def parallel_mask(self, v: int) -> int:
        n = len(self.ancestors)
        full = (1 << n) - 1
        return full & ~(self.ancestors[v] | self.descendants[v] | (1 << v))


def reachability(graph: ComputationGraph) -> ReachabilityIndex:
    """Transitive closure via bitset sweeps in topological order."""
    n = graph.num_nodes
    order = topological_order(graph)
    anc = [0] * n
    for v in order:
        bits = 0
        for p in graph.parents[v]:
            bits |= anc[p] | (1 << p)
        anc[v] = bits
    desc = [0] * n
    for v in reversed(order):
        bits = 0
        for c in graph.children[v]:
            bits |= desc[c] | (1 << c)
        desc[v] = bits
    return ReachabilityIndex(ancestors=tuple(anc), descendants=tuple(desc))


def bitset_to_ids(bits: int):
    out = []
    i = 0
    while bits:
        if bits & 1:
            out.append(i)
        bits >>= 1
        i += 1
    return out


def relation_sets(index: ReachabilityIndex, v: int):
    """(ancestor ids, descendant ids, parallel ids) of v; disjoint, cover V minus v."""
    n = len(index.ancestors)
    if not (0 <= v < n):
        raise GraphError(f"node id {v} out of range 0..{n - 1}")
    return (
        bitset_to_ids(index.ancestors[v]),
        bitset_to_ids(index.descendants[v]),
        bitset_to_ids(index.parallel_mask(v)),
    )


def topological_order(graph: ComputationGraph, seed=None):
    """Kahn's algorithm. Deterministic min-id tie-break without a seed;
    uniform choice among ready nodes with one."""
    import heapq

    n = graph.num_nodes
    indeg = [len(graph.parents[v]) for v in range(n)]
    order = []
    if seed is None:
        ready = [v for v in range(n) if indeg[v] == 0]
        heapq.heapify(ready)
        while ready:
            v = heapq.heappop(ready)
            order.append(v)
            for c in graph.children[v]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    heapq.heappush(ready, c)
    else:
        import numpy as np

        rng = np.random.default_rng(seed)
        ready = sorted(v for v in range(n) if indeg[v] == 0)
        while ready:
            v = ready.pop(int(rng.integers(len(ready))))
            order.append(v)
            fresh = []
            for c in graph.children[v]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    fresh.append(c)
            ready.extend(sorted(fresh))
    if len(order) != n:
        raise GraphError("cycle detected during topological sort")
    return order


def _add_costs(a: tuple[float, ...], b: tuple[float, ...]) -> tuple[float, ...]:
    # Element-wise with length-1 broadcast, so per-device totals are conserved.
    if len(a) == len(b):
        return tuple(x + y for x, y in zip(a, b))
    if len(a) == 1:
        return tuple(a[0] + y for y in b)
    if len(b) == 1:
        return tuple(x + b[0] for x in a)
    raise GraphError(f"cannot add cost vectors of lengths {len(a)} and {len(b)}")


def merge_and_colocate(graph: ComputationGraph, target_size: int, cost_threshold: float):
    """Coarsen by repeatedly merging the cheapest node into a neighbor.

    The cost metric is output_bytes. Merging continues while the graph is
    larger than ``target_size`` or some node is cheaper than
    ``cost_threshold``. The chosen node is absorbed by the successor fed by
    the largest tensor (its own output, so ties resolve to the smallest
    successor id) or, lacking successors, the predecessor with the largest
    output. A merge that would create a cycle (an alternative path between
    the pair) is skipped in favor of the next candidate. Isolated nodes are
    never merged.

    Returns (coarse graph, mapping original id -> coarse id).
    """
    if target_size < 1:
        raise GraphError(f"target size {target_size} must be >= 1")

    # Mutable adjacency over surviving nodes.
    n = graph.num_nodes
    alive = set(range(n))
    children = {v: set(graph.children[v]) for v in range(n)}
    parents = {v: set(graph.parents[v]) for v in range(n)}
    cost = {v: graph.nodes[v].output_bytes for v in range(n)}
    compute = {v: graph.nodes[v].compute_seconds for v in range(n)}
    members = {v: [v] for v in range(n)}
    absorbed_into = {}

    def path_exists(src, dst, skip_edge):
        # DFS over current adjacency, ignoring one direct edge.
        stack = [src]
        seen = {src}
        while stack:
            u = stack.pop()
            for w in children[u]:
                if (u, w) == skip_edge:
                    continue
                if w == dst:
                    return True
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return False

    def pick_target(v):
        # Successor fed by the largest tensor; every out-edge of v carries
        # v's own output, so this reduces to the smallest safe successor id.
        # A reachability-minimal successor is always safe (any alternative
        # path's first hop is a successor that reaches it), so the pred
        # branch is taken only when v has no successors at all.
        for s in sorted(children[v]):
            if not path_exists(v, s, skip_edge=(v, s)):
                return s, "succ"
        for p in sorted(parents[v], key=lambda q: (-cost[q], q)):
            if not path_exists(p, v, skip_edge=(p, v)):
                return p, "pred"
        return None, None

    while len(alive) > 1:
        need_size = len(alive) > target_size
        candidates = sorted(
            (v for v in alive if children[v] or parents[v]),
            key=lambda v: (cost[v], v),
        )
        if not need_size:
            candidates = [v for v in candidates if cost[v] < cost_threshold]
        if not candidates:
            break
        merged = False
        for v in candidates:
            target, kind = pick_target(v)
            if target is None:
                continue
            # Absorb v into target.
            if kind == "succ":
                still_external = bool(children[v] - {target})
                new_out = cost[target] + (cost[v] if still_external else 0.0)
            else:
                # v had no successors; its tensor fed nothing.
                new_out = cost[target]
            compute[target] = _add_costs(compute[target], compute[v])
            cost[target] = new_out
            members[target].extend(members[v])
            for c in list(children[v]):
                parents[c].discard(v)
                if c != target:
                    children[target].add(c)
                    parents[c].add(target)
            for p in list(parents[v]):
                children[p].discard(v)
                if p != target:
                    children[p].add(target)
                    parents[target].add(p)
            children[target].discard(target)
            parents[target].discard(target)
            children.pop(v)
            parents.pop(v)
            alive.remove(v)
            absorbed_into[v] = target
            merged = True
            break
        if not merged:
            break

    # Rebuild with dense ids, preserving relative order of survivors.
    survivors = sorted(alive)
    new_id = {v: i for i, v in enumerate(survivors)}
    colocation = {}
    for orig in range(n):
        root = orig
        while root in absorbed_into:
            root = absorbed_into[root]
        colocation[orig] = new_id[root]

    coarse_nodes = []
    for v in survivors:
        orig_members = []
        for m in sorted(members[v]):
            g = graph.nodes[m]
            orig_members.extend(g.members if g.members else (str(m),))
        coarse_nodes.append(
            OpGroup(
                id=new_id[v],
                compute_seconds=compute[v],
                output_bytes=cost[v],
                members=tuple(orig_members),
            )
        )
    coarse_edges = set()
    for v in survivors:
        for c in children[v]:
            coarse_edges.add((new_id[v], new_id[c]))
    coarse = ComputationGraph.build(graph.name, coarse_nodes, coarse_edges)
    return coarse, colocation
