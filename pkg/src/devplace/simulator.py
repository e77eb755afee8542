"""Deterministic event-driven execution-time simulator for placed graphs.

Stands in for hardware measurement: given a grouped graph, a device topology
and a placement it produces the end-to-end makespan, per-device load and
transfer profiles, and a static memory-feasibility check.

Scheduling contract (the independent checker in the test suite follows the
same rules):

* Each device runs its assigned groups one at a time, non-preemptively.  A
  group is ready once every producer's tensor has arrived; an idle device
  picks the queued group with the earliest ready time, ties broken by
  topological rank.
* A cross-device edge occupies the directed link ``src_dev -> dst_dev`` for
  ``tensor_bytes / bandwidth`` seconds.  Transfers on one link are serialized
  FIFO in enqueue order; transfers overlap computation.  Same-device edges
  and zero-byte edges deliver instantly and never touch a link.
* Simultaneous events are ordered: group completions before arrivals, then by
  the topological rank of the group involved.  A completing group enqueues
  its out-edges in ascending destination rank.

All arithmetic is 64-bit float; identical inputs give bit-identical reports.
"""

from __future__ import annotations

import heapq
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .graph import GroupedGraph

#: Marker returned by :func:`measure` for placements that cannot execute.
INFEASIBLE = math.inf


class TopologyError(ValueError):
    """Schema violation in a topology document."""


@dataclass(frozen=True)
class Device:
    id: int
    kind: str  # "cpu" or "gpu"
    compute_rate: float  # work units per second
    memory_bytes: int


class DeviceTopology:
    """Devices plus a dense directed bandwidth matrix (bytes/second)."""

    def __init__(self, devices, bandwidth):
        self.devices: list[Device] = list(devices)
        self.bandwidth = [list(map(float, row)) for row in bandwidth]
        d = len(self.devices)
        for i, dev in enumerate(self.devices):
            if dev.id != i:
                raise TopologyError(f"device ids must be dense 0..{d - 1}; got {dev.id} at {i}")
            if dev.kind not in ("cpu", "gpu"):
                raise TopologyError(f"device {dev.id}: kind must be 'cpu' or 'gpu'")
            if not dev.compute_rate > 0:
                raise TopologyError(f"device {dev.id}: compute_rate must be > 0")
            if not dev.memory_bytes > 0:
                raise TopologyError(f"device {dev.id}: memory_bytes must be > 0")
        if len(self.bandwidth) != d or any(len(r) != d for r in self.bandwidth):
            raise TopologyError("bandwidth must be a DxD matrix")
        for i in range(d):
            for j in range(d):
                if i != j and not self.bandwidth[i][j] > 0:
                    raise TopologyError(f"bandwidth[{i}][{j}] must be > 0")

    @property
    def num_devices(self) -> int:
        return len(self.devices)

    def gpu_ids(self) -> list[int]:
        return [dev.id for dev in self.devices if dev.kind == "gpu"]


@dataclass
class SimReport:
    makespan_seconds: float
    per_device_busy_seconds: list[float]
    per_device_transfer_seconds: list[float]
    per_device_peak_bytes: list[int]
    feasible: bool


def check_memory(gg: GroupedGraph, topo: DeviceTopology, placement) -> tuple[list[int], bool]:
    """Static resident-set bound: params plus produced tensors per device.

    Returns (per-device peak bytes, feasible flag).  Intra-group tensors
    count too; anything a group produces lives on its device.
    """
    _check_placement(gg, topo, placement)
    peaks = [0] * topo.num_devices
    for g in gg.groups:
        peaks[placement[g.id]] += g.param_bytes + g.out_bytes
    feasible = all(
        peaks[d.id] <= d.memory_bytes for d in topo.devices
    )
    return peaks, feasible


def _check_placement(gg: GroupedGraph, topo: DeviceTopology, placement):
    if len(placement) != gg.num_groups:
        raise ValueError(
            f"placement length {len(placement)} != group count {gg.num_groups}"
        )
    for gid, dev in enumerate(placement):
        if not (0 <= dev < topo.num_devices):
            raise ValueError(f"group {gid}: device id {dev} out of range")


_FINISH, _ARRIVAL = 0, 1


def simulate(gg: GroupedGraph, topo: DeviceTopology, placement) -> SimReport:
    """Run the placed graph to completion; pure function of its inputs."""
    _check_placement(gg, topo, placement)
    n = gg.num_groups
    rank = gg.topo_rank
    rate = [topo.devices[placement[g]].compute_rate for g in range(n)]

    pending = [len(gg.in_groups[g]) for g in range(n)]
    ready_q: list[list] = [[] for _ in range(topo.num_devices)]  # heaps of (ready_t, rank, gid)
    idle = [True] * topo.num_devices
    link_free: dict[tuple[int, int], float] = {}
    finish_at = [0.0] * n
    busy = [0.0] * topo.num_devices
    transfer = [0.0] * topo.num_devices

    events: list[tuple[float, int, int, int]] = []  # (time, kind, rank, gid)

    # Out-edges per group, ascending destination rank.
    out_edges: list[list] = [[] for _ in range(n)]
    for ge in gg.group_edges:
        out_edges[ge.src].append(ge)
    for g in range(n):
        out_edges[g].sort(key=lambda e: rank[e.dst])

    def start_next(dev: int, now: float):
        if idle[dev] and ready_q[dev]:
            _, _, gid = heapq.heappop(ready_q[dev])
            idle[dev] = False
            dur = gg.groups[gid].compute_cost / rate[gid]
            busy[dev] += dur
            heapq.heappush(events, (now + dur, _FINISH, rank[gid], gid))

    for g in range(n):
        if pending[g] == 0:
            heapq.heappush(ready_q[placement[g]], (0.0, rank[g], g))
    for dev in range(topo.num_devices):
        start_next(dev, 0.0)

    while events:
        t, kind, _, gid = heapq.heappop(events)
        if kind == _FINISH:
            finish_at[gid] = t
            dev = placement[gid]
            idle[dev] = True
            for ge in out_edges[gid]:
                dst_dev = placement[ge.dst]
                if dst_dev == dev or ge.tensor_bytes == 0:
                    arrive = t
                else:
                    link = (dev, dst_dev)
                    begin = max(t, link_free.get(link, 0.0))
                    dur = ge.tensor_bytes / topo.bandwidth[dev][dst_dev]
                    link_free[link] = begin + dur
                    transfer[dev] += dur
                    arrive = begin + dur
                heapq.heappush(events, (arrive, _ARRIVAL, rank[ge.dst], ge.dst))
            start_next(dev, t)
        else:
            pending[gid] -= 1
            if pending[gid] == 0:
                dev = placement[gid]
                heapq.heappush(ready_q[dev], (t, rank[gid], gid))
                start_next(dev, t)

    peaks, feasible = check_memory(gg, topo, placement)
    makespan = max(finish_at) if n else 0.0
    return SimReport(
        makespan_seconds=makespan,
        per_device_busy_seconds=busy,
        per_device_transfer_seconds=transfer,
        per_device_peak_bytes=peaks,
        feasible=feasible,
    )


@dataclass(frozen=True)
class NoiseSpec:
    """Multiplicative lognormal measurement noise: factor = exp(sigma * z)."""

    sigma: float
    seed: int = 0


def measure(gg: GroupedGraph, topo: DeviceTopology, placement,
            noise: NoiseSpec | None = None, steps: int = 10) -> float:
    """Average running time over ``steps`` runs, discarding the first.

    The simulator is pure, so the base makespan is computed once and the
    per-step variation comes only from the noise factors.  Infeasible
    placements return :data:`INFEASIBLE`.
    """
    if steps < 2:
        raise ValueError("measure needs at least 2 steps (the first is discarded)")
    report = simulate(gg, topo, placement)
    if not report.feasible:
        return INFEASIBLE
    base = report.makespan_seconds
    if noise is None:
        return base
    rng = np.random.default_rng(noise.seed)
    factors = np.exp(noise.sigma * rng.standard_normal(steps))
    return float(np.mean(base * factors[1:]))


def topology_from_dict(doc) -> DeviceTopology:
    """Build a topology from the documented mapping schema."""
    if not isinstance(doc, dict):
        raise TopologyError("topology document must be a mapping")
    unknown = set(doc) - {"devices", "bandwidth", "default_bandwidth"}
    if unknown:
        raise TopologyError(f"unknown top-level keys: {sorted(unknown)}")
    raw = doc.get("devices")
    if not isinstance(raw, list) or not raw:
        raise TopologyError("'devices' must be a non-empty list")
    devices = []
    for entry in raw:
        if not isinstance(entry, dict) or "id" not in entry:
            raise TopologyError(f"device entry needs an id: {entry!r}")
        devices.append(
            Device(
                id=int(entry["id"]),
                kind=str(entry.get("kind", "gpu")),
                compute_rate=float(entry.get("rate", 1.0)),
                memory_bytes=int(entry.get("memory_bytes", 1 << 30)),
            )
        )
    devices.sort(key=lambda dv: dv.id)
    d = len(devices)
    default = doc.get("default_bandwidth")
    bw = [[0.0] * d for _ in range(d)]
    if default is not None:
        for i in range(d):
            for j in range(d):
                if i != j:
                    bw[i][j] = float(default)
    for entry in doc.get("bandwidth", []):
        if not isinstance(entry, dict) or "src" not in entry or "dst" not in entry \
                or "bytes_per_sec" not in entry:
            raise TopologyError(f"bandwidth entry needs src/dst/bytes_per_sec: {entry!r}")
        i, j = int(entry["src"]), int(entry["dst"])
        if not (0 <= i < d and 0 <= j < d):
            raise TopologyError(f"bandwidth entry references unknown device: {entry!r}")
        bw[i][j] = float(entry["bytes_per_sec"])
    for i in range(d):
        for j in range(d):
            if i != j and bw[i][j] <= 0:
                raise TopologyError(
                    f"no bandwidth for pair {i}->{j} and no default_bandwidth given"
                )
    return DeviceTopology(devices, bw)


def topology_to_dict(topo: DeviceTopology) -> dict:
    return {
        "devices": [
            {"id": d.id, "kind": d.kind, "rate": d.compute_rate, "memory_bytes": d.memory_bytes}
            for d in topo.devices
        ],
        "bandwidth": [
            {"src": i, "dst": j, "bytes_per_sec": topo.bandwidth[i][j]}
            for i in range(topo.num_devices)
            for j in range(topo.num_devices)
            if i != j
        ],
    }


def load_topology(source: str | os.PathLike) -> DeviceTopology:
    with open(source, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise TopologyError(f"not valid JSON: {exc}") from exc
    return topology_from_dict(doc)


def save_topology(topo: DeviceTopology, path: str | os.PathLike):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(topology_to_dict(topo), fh, indent=1, sort_keys=True)
        fh.write("\n")


def default_topology(num_gpus: int = 2, cpu_rate: float = 1.0, gpu_rate: float = 10.0,
                     cpu_gpu_bw: float = 16384.0, gpu_gpu_bw: float = 65536.0,
                     cpu_mem: int = 4 << 30, gpu_mem: int = 1 << 30) -> DeviceTopology:
    """One CPU plus ``num_gpus`` faster GPUs; GPU-GPU links 4x the CPU links.

    The ratios are synthetic but keep communication within roughly 0.1x-10x
    of compute for the bundled generators, which is the regime where
    placement actually matters.
    """
    devices = [Device(0, "cpu", cpu_rate, cpu_mem)]
    devices += [Device(1 + i, "gpu", gpu_rate, gpu_mem) for i in range(num_gpus)]
    d = len(devices)
    bw = [[0.0] * d for _ in range(d)]
    for i in range(d):
        for j in range(d):
            if i == j:
                continue
            gpu_pair = devices[i].kind == "gpu" and devices[j].kind == "gpu"
            bw[i][j] = gpu_gpu_bw if gpu_pair else cpu_gpu_bw
    return DeviceTopology(devices, bw)
