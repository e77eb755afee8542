"""Reference placement strategies and an exhaustive verification oracle.

The min-cut baseline is an in-repo multilevel partitioner (heavy-edge
coarsening, greedy seeding, Kernighan-Lin / Fiduccia-Mattheyses style
refinement with single moves and pairwise swaps) minimizing cut tensor bytes
under a per-device load-balance tolerance weighted by compute rate.  It
replaces an external static-mapping library so the build has no native
dependency; only the multilevel+refinement core is reproduced, not the
library's full strategy zoo.
"""

from __future__ import annotations

import itertools

import numpy as np

from .graph import GroupedGraph
from .simulator import DeviceTopology, simulate


class NoFeasiblePlacement(RuntimeError):
    """No placement satisfying the memory model exists (or none was found)."""


class SearchSpaceTooLarge(RuntimeError):
    """Brute force would exceed its enumeration cap."""


def place_single(gg: GroupedGraph, topo: DeviceTopology, device: int) -> list[int]:
    """Everything on one device."""
    if not (0 <= device < topo.num_devices):
        raise ValueError(f"device id {device} out of range")
    return [device] * gg.num_groups


def _gpus_first(topo: DeviceTopology) -> list[int]:
    gpus = [d.id for d in topo.devices if d.kind == "gpu"]
    cpus = [d.id for d in topo.devices if d.kind != "gpu"]
    return gpus + cpus


def place_expert_contiguous(gg: GroupedGraph, topo: DeviceTopology, parts: int) -> list[int]:
    """Split the topo order into cost-balanced contiguous blocks, one per device.

    Greedy prefix cuts at multiples of total/parts; block i goes to the i-th
    device, GPUs preferred in ascending id order.
    """
    if not (1 <= parts <= min(topo.num_devices, gg.num_groups)):
        raise ValueError(f"parts must be in 1..min(D, groups), got {parts}")
    devices = _gpus_first(topo)
    total = gg.total_compute_cost()
    placement = [0] * gg.num_groups
    block, acc = 0, 0.0
    for gid in gg.topo:
        acc += gg.groups[gid].compute_cost
        placement[gid] = devices[block]
        if block < parts - 1 and acc >= (block + 1) * total / parts:
            block += 1
    return placement


def _group_adjacency(gg: GroupedGraph) -> list[dict[int, float]]:
    adj: list[dict[int, float]] = [dict() for _ in range(gg.num_groups)]
    for e in gg.group_edges:
        adj[e.src][e.dst] = adj[e.src].get(e.dst, 0.0) + e.tensor_bytes
        adj[e.dst][e.src] = adj[e.dst].get(e.src, 0.0) + e.tensor_bytes
    return adj


def _cut_weight(adj, parts) -> float:
    cut = 0.0
    for v, nbrs in enumerate(adj):
        for u, w in nbrs.items():
            if u > v and parts[u] != parts[v]:
                cut += w
    return cut


def _greedy_initial(weights, order, k, targets) -> list[int]:
    parts = [0] * len(weights)
    loads = [0.0] * k
    for v in order:
        best = min(range(k), key=lambda j: ((loads[j] + weights[v]) / targets[j], j))
        parts[v] = best
        loads[best] += weights[v]
    return parts


def _refine(weights, adj, parts, k, targets, balance) -> None:
    """KL/FM refinement in place: positive-gain moves and swaps only, so the
    cut weight never increases across a pass."""
    n = len(weights)
    caps = [balance * t for t in targets]
    loads = [0.0] * k
    for v in range(n):
        loads[parts[v]] += weights[v]

    def ext(v, j):
        return sum(w for u, w in adj[v].items() if parts[u] == j)

    while True:
        cut_before = _cut_weight(adj, parts)
        moved = False
        for v in range(n):
            a = parts[v]
            gains = [(ext(v, j) - ext(v, a), -j) for j in range(k) if j != a
                     and loads[j] + weights[v] <= caps[j]]
            if not gains:
                continue
            gain, neg_j = max(gains)
            if gain > 0:
                j = -neg_j
                loads[a] -= weights[v]
                loads[j] += weights[v]
                parts[v] = j
                moved = True
        for v in range(n):
            for u in range(v + 1, n):
                a, b = parts[v], parts[u]
                if a == b:
                    continue
                gain = (ext(v, b) - ext(v, a)) + (ext(u, a) - ext(u, b)) \
                    - 2.0 * adj[v].get(u, 0.0)
                if gain <= 0:
                    continue
                if loads[b] + weights[v] - weights[u] > caps[b]:
                    continue
                if loads[a] + weights[u] - weights[v] > caps[a]:
                    continue
                loads[a] += weights[u] - weights[v]
                loads[b] += weights[v] - weights[u]
                parts[v], parts[u] = b, a
                moved = True
        cut_after = _cut_weight(adj, parts)
        assert cut_after <= cut_before, "refinement must never increase the cut"
        if not moved:
            return


def _coarsen(weights, adj, rng):
    """One heavy-edge-matching level; returns (mapping, coarse weights, coarse adj)."""
    n = len(weights)
    order = list(range(n))
    rng.shuffle(order)
    match = [-1] * n
    for v in order:
        if match[v] >= 0:
            continue
        candidates = [(w, -u) for u, w in adj[v].items() if match[u] < 0]
        if not candidates:
            match[v] = v
            continue
        _, neg_u = max(candidates)
        u = -neg_u
        match[v] = u
        match[u] = v
    mapping = [-1] * n
    nxt = 0
    for v in range(n):
        if mapping[v] >= 0:
            continue
        mapping[v] = nxt
        if match[v] != v:
            mapping[match[v]] = nxt
        nxt += 1
    cw = [0.0] * nxt
    cadj: list[dict[int, float]] = [dict() for _ in range(nxt)]
    for v in range(n):
        cw[mapping[v]] += weights[v]
    for v in range(n):
        for u, w in adj[v].items():
            if u > v and mapping[u] != mapping[v]:
                a, b = mapping[v], mapping[u]
                cadj[a][b] = cadj[a].get(b, 0.0) + w
                cadj[b][a] = cadj[b].get(a, 0.0) + w
    return mapping, cw, cadj


def _multilevel_partition(weights, adj, targets, seed, balance) -> list[int]:
    k = len(targets)
    rng = np.random.default_rng(seed)
    levels = [(None, weights, adj)]
    while len(levels[-1][1]) > max(24, 4 * k):
        mapping, cw, cadj = _coarsen(levels[-1][1], levels[-1][2], rng)
        if len(cw) == len(levels[-1][1]):
            break
        levels.append((mapping, cw, cadj))

    _, cw, cadj = levels[-1]
    order = sorted(range(len(cw)), key=lambda v: (-cw[v], v))
    parts = _greedy_initial(cw, order, k, targets)
    _refine(cw, cadj, parts, k, targets, balance)
    for level in range(len(levels) - 1, 0, -1):
        mapping, _, _ = levels[level]
        fine_w, fine_adj = levels[level - 1][1], levels[level - 1][2]
        parts = [parts[mapping[v]] for v in range(len(fine_w))]
        _refine(fine_w, fine_adj, parts, k, targets, balance)
    return parts


def place_mincut(gg: GroupedGraph, topo: DeviceTopology, include_cpu: bool = True,
                 seed: int = 0, balance: float = 1.10) -> list[int]:
    """Balanced min-cut partition over eligible devices, mapped heaviest->fastest."""
    eligible = [d for d in topo.devices if include_cpu or d.kind == "gpu"]
    if not eligible:
        raise ValueError("no eligible device (GPU-only requested on a CPU-only topology)")
    k = min(len(eligible), gg.num_groups)
    eligible = sorted(eligible, key=lambda d: (-d.compute_rate, d.id))[:k]
    if k == 1:
        return place_single(gg, topo, eligible[0].id)
    weights = [g.compute_cost for g in gg.groups]
    total = sum(weights)
    rates = [d.compute_rate for d in eligible]
    targets = [total * r / sum(rates) for r in rates]
    # Degenerate zero-cost groups still need a positive target to place into.
    targets = [max(t, 1e-12) for t in targets]
    parts = _multilevel_partition(weights, _group_adjacency(gg), targets, seed, balance)
    loads = [0.0] * k
    for v, p in enumerate(parts):
        loads[p] += weights[v]
    by_load = sorted(range(k), key=lambda j: (-loads[j], j))
    device_of_part = {j: eligible[pos].id for pos, j in enumerate(by_load)}
    return [device_of_part[p] for p in parts]


def place_random_search(gg: GroupedGraph, topo: DeviceTopology, budget: int,
                        seed: int = 0) -> list[int] | None:
    """Best feasible of ``budget`` distinct uniform placements, None if none.

    Duplicates do not consume budget; the search stops early once every
    possible placement has been tried.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    total = topo.num_devices ** gg.num_groups
    seen = set()
    best, best_makespan = None, None
    while len(seen) < min(budget, total):
        candidate = tuple(int(x) for x in rng.integers(0, topo.num_devices,
                                                       size=gg.num_groups))
        if candidate in seen:
            continue
        seen.add(candidate)
        report = simulate(gg, topo, list(candidate))
        if not report.feasible:
            continue
        if best_makespan is None or report.makespan_seconds < best_makespan:
            best, best_makespan = list(candidate), report.makespan_seconds
    return best


def brute_force(gg: GroupedGraph, topo: DeviceTopology,
                cap: int = 1 << 20) -> tuple[list[int], float]:
    """Exact argmin of the simulator over all feasible placements.

    Enumerates lexicographically, so ties resolve to the lexicographically
    smallest placement.
    """
    space = topo.num_devices ** gg.num_groups
    if space > cap:
        raise SearchSpaceTooLarge(f"{space} placements exceed the cap of {cap}")
    best, best_makespan = None, None
    for candidate in itertools.product(range(topo.num_devices), repeat=gg.num_groups):
        report = simulate(gg, topo, list(candidate))
        if not report.feasible:
            continue
        if best_makespan is None or report.makespan_seconds < best_makespan:
            best, best_makespan = list(candidate), report.makespan_seconds
    if best is None:
        raise NoFeasiblePlacement("every placement violates device memory")
    return best, best_makespan
