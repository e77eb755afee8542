"""Computation graphs and their coarsening into co-location groups.

A graph is a DAG of operations with per-op compute cost, output shape and
resident parameter bytes; edges carry the tensor bytes moved when the two
endpoints land on different devices.  Before placement the graph is coarsened:
manual groups are applied as seeds, then any group whose entire output is
consumed by a single other group is merged into it, repeatedly, until a fixed
point.  The grouped graph is the unit everything downstream (policy,
simulator, baselines) operates on.
"""

from __future__ import annotations

import heapq
import json
import math
import os
from collections import Counter
from dataclasses import dataclass, field


class GraphError(ValueError):
    """Schema violation in a graph document or in-memory construction."""


class CycleError(GraphError):
    """Graph contains a cycle; ``cycle`` holds the op ids of one offender."""

    def __init__(self, message: str, cycle: list[int]):
        super().__init__(message)
        self.cycle = cycle


@dataclass(frozen=True)
class Operation:
    """One node of the computation graph.

    ``compute_cost`` is work in abstract seconds on a rate-1.0 device.
    ``output_shape`` is the dims of the produced tensor; an empty list means
    the op produces no tensor (e.g. a parameter-update sink).
    ``param_bytes`` are resident parameter bytes charged to whichever device
    hosts the op.
    """

    id: int
    name: str
    op_type: str
    compute_cost: float
    output_shape: tuple[int, ...] = ()
    param_bytes: int = 0

    def output_elems(self) -> int:
        """Element count of the output tensor, 0 if the op has no output."""
        if not self.output_shape:
            return 0
        return math.prod(self.output_shape)


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    tensor_bytes: int


class ComputationGraph:
    """Validated DAG of operations; immutable after construction."""

    def __init__(self, ops, edges, manual_groups=None):
        self.ops: list[Operation] = list(ops)
        self.edges: list[Edge] = list(edges)
        self.manual_groups: list[list[int]] = [list(g) for g in (manual_groups or [])]
        self._validate()
        self.topo_order: list[int] = self._toposort()
        # op id -> list of consumer op ids / producer op ids
        self.out_ids: list[list[int]] = [[] for _ in self.ops]
        self.in_ids: list[list[int]] = [[] for _ in self.ops]
        for e in self.edges:
            self.out_ids[e.src].append(e.dst)
            self.in_ids[e.dst].append(e.src)

    @property
    def num_ops(self) -> int:
        return len(self.ops)

    def total_compute_cost(self) -> float:
        return math.fsum(op.compute_cost for op in self.ops)

    def total_param_bytes(self) -> int:
        return sum(op.param_bytes for op in self.ops)

    def _validate(self):
        m = len(self.ops)
        seen = set()
        for i, op in enumerate(self.ops):
            if op.id != i:
                raise GraphError(
                    f"op ids must be dense 0..{m - 1} in order; position {i} has id {op.id}"
                )
            if op.id in seen:
                raise GraphError(f"duplicate op id {op.id}")
            seen.add(op.id)
            if not (op.compute_cost >= 0.0) or not math.isfinite(op.compute_cost):
                raise GraphError(f"op {op.id} ({op.name}): compute_cost must be finite and >= 0")
            if op.param_bytes < 0:
                raise GraphError(f"op {op.id} ({op.name}): param_bytes must be >= 0")
            if any(d < 1 for d in op.output_shape):
                raise GraphError(f"op {op.id} ({op.name}): output_shape dims must be >= 1")
        for e in self.edges:
            if not (0 <= e.src < m):
                raise GraphError(f"edge {e.src}->{e.dst}: dangling src id {e.src}")
            if not (0 <= e.dst < m):
                raise GraphError(f"edge {e.src}->{e.dst}: dangling dst id {e.dst}")
            if e.src == e.dst:
                raise GraphError(f"self-edge on op {e.src}")
            if e.tensor_bytes < 0:
                raise GraphError(f"edge {e.src}->{e.dst}: tensor_bytes must be >= 0")
        claimed = set()
        for group in self.manual_groups:
            for i in group:
                if not (0 <= i < m):
                    raise GraphError(f"manual_groups references unknown op id {i}")
                if i in claimed:
                    raise GraphError(f"manual_groups overlap on op id {i}")
                claimed.add(i)

    def _toposort(self) -> list[int]:
        m = len(self.ops)
        indeg = [0] * m
        out = [[] for _ in range(m)]
        for e in self.edges:
            indeg[e.dst] += 1
            out[e.src].append(e.dst)
        ready = [i for i in range(m) if indeg[i] == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            v = heapq.heappop(ready)
            order.append(v)
            for w in out[v]:
                indeg[w] -= 1
                if indeg[w] == 0:
                    heapq.heappush(ready, w)
        if len(order) < m:
            cycle = self._find_cycle(set(range(m)) - set(order), out)
            names = ", ".join(f"{self.ops[i].name}({i})" for i in cycle)
            raise CycleError(f"graph contains a cycle through: {names}", cycle)
        return order

    def _find_cycle(self, remaining: set[int], out) -> list[int]:
        # Every remaining node lies on or upstream of a cycle within the
        # remaining set, so a walk that only visits remaining nodes must
        # eventually revisit one.
        start = min(remaining)
        path, pos = [], {}
        v = start
        while v not in pos:
            pos[v] = len(path)
            path.append(v)
            v = min(w for w in out[v] if w in remaining)
        return path[pos[v]:]


@dataclass(frozen=True)
class Group:
    """Co-location group: the unit the policy places on a device."""

    id: int
    members: tuple[int, ...]
    compute_cost: float
    param_bytes: int
    out_bytes: int  # bytes of every tensor produced by members, incl. intra-group edges
    type_counts: dict[str, int] = field(hash=False, compare=False, default_factory=dict)


@dataclass(frozen=True)
class GroupEdge:
    src: int
    dst: int
    tensor_bytes: int


class GroupedGraph:
    """Coarsened graph whose nodes are co-location groups.

    Group ids are assigned in ascending order of each group's smallest member
    op id, which makes grouping output independent of merge order.
    """

    def __init__(self, graph: ComputationGraph, partition):
        self.graph = graph
        parts = sorted((tuple(sorted(p)) for p in partition), key=lambda p: p[0])
        self.membership: list[int] = [-1] * graph.num_ops
        groups = []
        for gid, members in enumerate(parts):
            for op_id in members:
                self.membership[op_id] = gid
            cost = math.fsum(graph.ops[i].compute_cost for i in members)
            pbytes = sum(graph.ops[i].param_bytes for i in members)
            counts = Counter(graph.ops[i].op_type for i in members)
            groups.append(
                Group(
                    id=gid,
                    members=members,
                    compute_cost=cost,
                    param_bytes=pbytes,
                    out_bytes=0,
                    type_counts=dict(counts),
                )
            )
        if any(g < 0 for g in self.membership):
            raise GraphError("partition does not cover every op")
        out_bytes = [0] * len(groups)
        edge_bytes: dict[tuple[int, int], int] = {}
        edge_count: dict[tuple[int, int], int] = {}
        for e in graph.edges:
            gs, gd = self.membership[e.src], self.membership[e.dst]
            out_bytes[gs] += e.tensor_bytes
            if gs != gd:
                key = (gs, gd)
                edge_bytes[key] = edge_bytes.get(key, 0) + e.tensor_bytes
                edge_count[key] = edge_count.get(key, 0) + 1
        self.groups: list[Group] = [
            Group(g.id, g.members, g.compute_cost, g.param_bytes, out_bytes[g.id], g.type_counts)
            for g in groups
        ]
        self.group_edges: list[GroupEdge] = [
            GroupEdge(s, d, b) for (s, d), b in sorted(edge_bytes.items())
        ]
        self.out_groups: list[list[int]] = [[] for _ in self.groups]
        self.in_groups: list[list[int]] = [[] for _ in self.groups]
        for ge in self.group_edges:
            self.out_groups[ge.src].append(ge.dst)
            self.in_groups[ge.dst].append(ge.src)
        self.topo: list[int] = self._toposort()
        self.topo_rank: list[int] = [0] * len(self.groups)
        for r, gid in enumerate(self.topo):
            self.topo_rank[gid] = r

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    def total_compute_cost(self) -> float:
        return math.fsum(g.compute_cost for g in self.groups)

    def output_elem_counts(self, gid: int) -> list[int]:
        """Element counts of tensors produced by the group's members (nonzero only)."""
        counts = [self.graph.ops[i].output_elems() for i in self.groups[gid].members]
        return [c for c in counts if c > 0]

    def _toposort(self) -> list[int]:
        # Kahn with a min-heap keyed by group id; group ids ascend with the
        # smallest member op id, giving the documented deterministic tie-break.
        n = len(self.groups)
        indeg = [len(self.in_groups[i]) for i in range(n)]
        ready = [i for i in range(n) if indeg[i] == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            v = heapq.heappop(ready)
            order.append(v)
            for w in self.out_groups[v]:
                indeg[w] -= 1
                if indeg[w] == 0:
                    heapq.heappush(ready, w)
        if len(order) < n:
            # Sole-consumer merging cannot create cycles, so this traces back
            # to a manual group whose members sandwich an outside op.
            raise GraphError(
                "grouping creates a cycle between groups; manual_groups must "
                "not contain two ops connected through an op outside the group"
            )
        return order


def topo_order(gg: GroupedGraph) -> list[int]:
    """Deterministic topological order of group ids (ties: smallest member op id)."""
    return list(gg.topo)


def _coalesce_partition(graph: ComputationGraph, sweep_key=None) -> list[tuple[int, ...]]:
    """Merge sole-consumer groups to a fixed point; returns member tuples.

    ``sweep_key`` orders merge candidates within a sweep (tests use it to
    check confluence); default is ascending group representative id.
    """
    parent = list(range(graph.num_ops))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    members: dict[int, list[int]] = {i: [i] for i in range(graph.num_ops)}
    for seed in graph.manual_groups:
        if len(seed) < 2:
            continue
        root = min(find(i) for i in seed)
        merged = []
        for i in seed:
            r = find(i)
            if r != root:
                merged.extend(members.pop(r))
                parent[r] = root
        members[root].extend(merged)

    key = sweep_key or (lambda root: root)
    changed = True
    while changed:
        changed = False
        for root in sorted(members.keys(), key=key):
            if root not in members:  # absorbed earlier this sweep
                continue
            targets = set()
            for op_id in members[root]:
                for dst in graph.out_ids[op_id]:
                    t = find(dst)
                    if t != root:
                        targets.add(t)
            if len(targets) != 1:
                continue
            other = targets.pop()
            # Canonical representative is the smaller root so group labels
            # stay tied to the smallest member op id.
            keep, drop = (root, other) if root < other else (other, root)
            parent[drop] = keep
            members[keep].extend(members.pop(drop))
            changed = True
    return [tuple(sorted(v)) for v in members.values()]


def coalesce_sole_consumers(graph: ComputationGraph) -> GroupedGraph:
    """Apply manual groups, then recursively merge groups whose entire output
    feeds a single other group, treating groups as operations after each pass.
    """
    return GroupedGraph(graph, _coalesce_partition(graph))


def singleton_groups(graph: ComputationGraph) -> GroupedGraph:
    """Grouped view with one group per op (no coarsening)."""
    return GroupedGraph(graph, [(i,) for i in range(graph.num_ops)])


def graph_from_dict(doc) -> ComputationGraph:
    """Build and validate a graph from the documented mapping schema."""
    if not isinstance(doc, dict):
        raise GraphError("graph document must be a mapping")
    unknown = set(doc) - {"ops", "edges", "manual_groups"}
    if unknown:
        raise GraphError(f"unknown top-level keys: {sorted(unknown)}")
    raw_ops = doc.get("ops")
    if not isinstance(raw_ops, list):
        raise GraphError("'ops' must be a list")
    ops = []
    for entry in raw_ops:
        if not isinstance(entry, dict) or "id" not in entry or "type" not in entry \
                or "cost" not in entry:
            raise GraphError(f"op entry needs at least id/type/cost: {entry!r}")
        ops.append(
            Operation(
                id=int(entry["id"]),
                name=str(entry.get("name", f"op{entry['id']}")),
                op_type=str(entry["type"]),
                compute_cost=float(entry["cost"]),
                output_shape=tuple(int(d) for d in entry.get("output_shape", [])),
                param_bytes=int(entry.get("param_bytes", 0)),
            )
        )
    ops.sort(key=lambda o: o.id)
    edges = []
    for entry in doc.get("edges", []):
        if not isinstance(entry, dict) or "src" not in entry or "dst" not in entry:
            raise GraphError(f"edge entry needs src/dst: {entry!r}")
        edges.append(Edge(int(entry["src"]), int(entry["dst"]), int(entry.get("bytes", 0))))
    return ComputationGraph(ops, edges, doc.get("manual_groups"))


def graph_to_dict(graph: ComputationGraph) -> dict:
    doc = {
        "ops": [
            {
                "id": op.id,
                "name": op.name,
                "type": op.op_type,
                "cost": op.compute_cost,
                "output_shape": list(op.output_shape),
                "param_bytes": op.param_bytes,
            }
            for op in graph.ops
        ],
        "edges": [
            {"src": e.src, "dst": e.dst, "bytes": e.tensor_bytes} for e in graph.edges
        ],
    }
    if graph.manual_groups:
        doc["manual_groups"] = [list(g) for g in graph.manual_groups]
    return doc


def load_graph(source: str | os.PathLike) -> ComputationGraph:
    """Load a graph from a JSON document on disk."""
    with open(source, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise GraphError(f"not valid JSON: {exc}") from exc
    return graph_from_dict(doc)


def save_graph(graph: ComputationGraph, path: str | os.PathLike):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(graph_to_dict(graph), fh, indent=1, sort_keys=True)
        fh.write("\n")
