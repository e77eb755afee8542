"""Shared instance builders for the test suite.

Random graphs use integer-valued float costs and integer bytes so cost sums
are exact in 64-bit floats and conservation checks can assert equality.
"""

from __future__ import annotations

import numpy as np

from devplace import (ComputationGraph, Device, DeviceTopology, Edge,
                      GroupedGraph, Operation, singleton_groups)


def chain_graph(costs, edge_bytes=8, types=None):
    ops = [
        Operation(i, chr(ord("A") + i), (types or {}).get(i, "op"), float(c), (4,), 0)
        for i, c in enumerate(costs)
    ]
    edges = [Edge(i, i + 1, edge_bytes) for i in range(len(costs) - 1)]
    return ComputationGraph(ops, edges)


def uniform_topology(num_devices, rate=1.0, bandwidth=4.0, memory=1 << 40, kind="gpu"):
    devices = [Device(i, kind, rate, memory) for i in range(num_devices)]
    bw = [[bandwidth if i != j else 0.0 for j in range(num_devices)]
          for i in range(num_devices)]
    return DeviceTopology(devices, bw)


def random_dag(rng, max_ops=30, edge_prob=0.3, manual_groups=False) -> ComputationGraph:
    n = int(rng.integers(1, max_ops + 1))
    ops = [
        Operation(i, f"op{i}", rng.choice(["matmul", "conv", "add", "relu"]),
                  float(rng.integers(1, 10)), (int(rng.integers(1, 9)),),
                  int(rng.integers(0, 100)))
        for i in range(n)
    ]
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < edge_prob:
                edges.append(Edge(i, j, int(rng.integers(0, 64))))
    groups = None
    if manual_groups and n >= 4 and rng.random() < 0.5:
        # Manual groups must not sandwich outside ops, so pick a reachability
        # antichain: pairwise unreachable ops can never create a group cycle.
        reach = [set() for _ in range(n)]
        for i in range(n - 1, -1, -1):
            for e in edges:
                if e.src == i:
                    reach[i].add(e.dst)
                    reach[i] |= reach[e.dst]
        antichain = []
        for v in rng.permutation(n):
            v = int(v)
            if all(v not in reach[u] and u not in reach[v] for u in antichain):
                antichain.append(v)
            if len(antichain) >= 4:
                break
        if len(antichain) >= 2:
            groups = [antichain]
    return ComputationGraph(ops, edges, groups)


def random_instance(rng, max_groups=8, max_devices=3):
    """Random placed-simulation instance: (grouped graph, topology)."""
    graph = random_dag(rng, max_ops=max_groups, edge_prob=0.4)
    gg = singleton_groups(graph)
    d = int(rng.integers(1, max_devices + 1))
    devices = [
        Device(i, "gpu" if rng.random() < 0.7 else "cpu",
               float(rng.integers(1, 5)), 1 << 40)
        for i in range(d)
    ]
    bw = [[float(rng.integers(1, 17)) if i != j else 0.0 for j in range(d)]
          for i in range(d)]
    return gg, DeviceTopology(devices, bw)


def random_placement(rng, gg, topo):
    return [int(x) for x in rng.integers(0, topo.num_devices, size=gg.num_groups)]


def grouped_as_graph(gg: GroupedGraph) -> ComputationGraph:
    """Re-express a grouped graph as a plain graph (for idempotence checks)."""
    ops = [
        Operation(g.id, f"g{g.id}", "group", g.compute_cost, (), g.param_bytes)
        for g in gg.groups
    ]
    edges = [Edge(e.src, e.dst, e.tensor_bytes) for e in gg.group_edges]
    return ComputationGraph(ops, edges)


def critical_path_seconds(gg, topo, placement) -> float:
    """Longest path at infinite bandwidth: lower-bounds any makespan."""
    dur = [gg.groups[g].compute_cost / topo.devices[placement[g]].compute_rate
           for g in range(gg.num_groups)]
    finish = [0.0] * gg.num_groups
    for gid in gg.topo:
        start = max((finish[p] for p in gg.in_groups[gid]), default=0.0)
        finish[gid] = start + dur[gid]
    return max(finish, default=0.0)


def per_device_work_seconds(gg, topo, placement) -> list[float]:
    work = [0.0] * topo.num_devices
    for g in range(gg.num_groups):
        work[placement[g]] += gg.groups[g].compute_cost / topo.devices[placement[g]].compute_rate
    return work
