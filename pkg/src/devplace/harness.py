"""Experiment orchestration: run strategies, verify replay, emit CSV reports.

Every reported makespan is recomputed from the recorded placement before it
is emitted, so result rows are reproducible from (graph, topology, placement)
alone.  The profile CSV is the per-device load/transfer analog of a hardware
profiler trace.
"""

from __future__ import annotations

import io
import time
from dataclasses import dataclass

from . import baselines, trainer as trainer_mod
from .graph import GroupedGraph
from .simulator import DeviceTopology, simulate


@dataclass
class ExperimentRow:
    strategy: str
    placement: list[int] | None
    makespan: float | None
    feasible: bool
    busy: list[float]
    transfer: list[float]
    peaks: list[int]
    search_wall_s: float


@dataclass
class ExperimentResult:
    rows: list[ExperimentRow]

    def results_csv(self) -> str:
        buf = io.StringIO()
        buf.write("strategy,makespan_s,feasible,search_wall_s,placement\n")
        for r in self.rows:
            makespan = repr(r.makespan) if r.makespan is not None else ""
            placement = "-".join(map(str, r.placement)) if r.placement is not None else ""
            buf.write(f"{r.strategy},{makespan},{str(r.feasible).lower()},"
                      f"{r.search_wall_s:.3f},{placement}\n")
        return buf.getvalue()

    def profile_csv(self) -> str:
        buf = io.StringIO()
        buf.write("strategy,device,busy_s,transfer_s,peak_bytes\n")
        for r in self.rows:
            for dev in range(len(r.busy)):
                buf.write(f"{r.strategy},{dev},{repr(r.busy[dev])},"
                          f"{repr(r.transfer[dev])},{r.peaks[dev]}\n")
        return buf.getvalue()

    def row(self, strategy: str) -> ExperimentRow:
        for r in self.rows:
            if r.strategy == strategy:
                return r
        raise KeyError(strategy)


def make_strategy(kind: str, seed: int = 0,
                  trainer_config: "trainer_mod.TrainerConfig | None" = None,
                  brute_cap: int = 1 << 20):
    """Resolve a strategy spec string to ``(label, fn)``.

    Supported: single:<dev>, single_cpu, single_gpu, expert:<parts>, mincut,
    mincut_gpu, random:<budget>, bruteforce, rl.  ``fn(gg, topo)`` returns a
    placement, or None when the strategy found nothing feasible.
    """
    name, _, arg = kind.partition(":")

    if name == "single":
        dev = int(arg)
        return kind, lambda gg, topo: baselines.place_single(gg, topo, dev)
    if name == "single_cpu":
        def first_cpu(gg, topo):
            cpus = [d.id for d in topo.devices if d.kind == "cpu"]
            if not cpus:
                raise ValueError("topology has no CPU device")
            return baselines.place_single(gg, topo, cpus[0])
        return kind, first_cpu
    if name == "single_gpu":
        def first_gpu(gg, topo):
            gpus = topo.gpu_ids()
            if not gpus:
                raise ValueError("topology has no GPU device")
            return baselines.place_single(gg, topo, gpus[0])
        return kind, first_gpu
    if name == "expert":
        parts = int(arg) if arg else 0
        def expert(gg, topo):
            n = parts or min(len(topo.gpu_ids()) or topo.num_devices, gg.num_groups)
            return baselines.place_expert_contiguous(gg, topo, n)
        return kind, expert
    if name == "mincut":
        return kind, lambda gg, topo: baselines.place_mincut(gg, topo, include_cpu=True,
                                                             seed=seed)
    if name == "mincut_gpu":
        return kind, lambda gg, topo: baselines.place_mincut(gg, topo, include_cpu=False,
                                                             seed=seed)
    if name == "random":
        budget = int(arg)
        return kind, lambda gg, topo: baselines.place_random_search(gg, topo, budget,
                                                                    seed=seed)
    if name == "bruteforce":
        def brute(gg, topo):
            try:
                placement, _ = baselines.brute_force(gg, topo, cap=brute_cap)
            except baselines.NoFeasiblePlacement:
                return None
            return placement
        return kind, brute
    if name == "rl":
        def rl(gg, topo):
            config = trainer_config or trainer_mod.TrainerConfig(seed=seed)
            return trainer_mod.train(gg, topo, config).best_placement
        return kind, rl
    raise ValueError(f"unknown strategy kind {kind!r}")


def run_experiment(gg: GroupedGraph, topo: DeviceTopology, strategies,
                   results_path=None, profile_path=None) -> ExperimentResult:
    """Run ``strategies`` (list of spec strings or (label, fn) pairs).

    Each recorded placement is re-simulated and must reproduce its makespan
    bit-exactly before the row is accepted.
    """
    rows = []
    for item in strategies:
        label, fn = item if isinstance(item, tuple) else make_strategy(item)
        started = time.perf_counter()
        placement = fn(gg, topo)
        wall = time.perf_counter() - started
        if placement is None:
            rows.append(ExperimentRow(label, None, None, False,
                                      [0.0] * topo.num_devices,
                                      [0.0] * topo.num_devices,
                                      [0] * topo.num_devices, wall))
            continue
        report = simulate(gg, topo, placement)
        replay = simulate(gg, topo, placement)
        if replay.makespan_seconds != report.makespan_seconds:
            raise AssertionError(f"{label}: replay failed to reproduce the makespan")
        rows.append(ExperimentRow(
            strategy=label,
            placement=list(placement),
            makespan=report.makespan_seconds,
            feasible=report.feasible,
            busy=report.per_device_busy_seconds,
            transfer=report.per_device_transfer_seconds,
            peaks=report.per_device_peak_bytes,
            search_wall_s=wall,
        ))
    result = ExperimentResult(rows)
    if results_path:
        with open(results_path, "w", encoding="utf-8") as fh:
            fh.write(result.results_csv())
    if profile_path:
        with open(profile_path, "w", encoding="utf-8") as fh:
            fh.write(result.profile_csv())
    return result
