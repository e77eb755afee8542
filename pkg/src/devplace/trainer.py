"""Policy-gradient training of the placement policy.

Each controller alternates two phases: snapshot the shared parameters and
sample K placements, then have K workers measure them concurrently.  The
update is the advantage-weighted mean of per-sample log-probability
gradients; the objective is expected sqrt-runtime, so the optimizer steps in
the descent direction.  Placements that cannot execute receive a large
constant reward (the failing signal), and after a configurable number of
updates only executable samples contribute.  Each controller keeps its own
moving-average baseline, initialized to the failing signal to encourage early
exploration.

Multiple controllers run concurrently against one ParameterStore and apply
gradients asynchronously; determinism is promised only for a single
controller.
"""

from __future__ import annotations

import io
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import policy as policy_mod
from .graph import ComputationGraph, GroupedGraph, coalesce_sole_consumers
from .policy import EmbeddingSpec, GroupFeatures, PolicyParams
from .simulator import INFEASIBLE, DeviceTopology, NoiseSpec, SimReport, measure, simulate


@dataclass(frozen=True)
class RewardSpec:
    """Reward transform: sqrt of runtime, large constant for failures."""

    failing_signal: float

    def __post_init__(self):
        if not self.failing_signal > 0:
            raise ValueError("failing_signal must be > 0")


def suggest_failing_signal(gg: GroupedGraph, topo: DeviceTopology) -> float:
    """2x the sqrt-runtime of running everything on the slowest device.

    Guaranteed to dominate any single-device runtime; the factor of two gives
    headroom for communication-bound placements.
    """
    slowest = min(d.compute_rate for d in topo.devices)
    return 2.0 * math.sqrt(gg.total_compute_cost() / slowest)


def validate_failing_signal(spec: RewardSpec, gg: GroupedGraph, topo: DeviceTopology):
    slowest = min(d.compute_rate for d in topo.devices)
    bound = math.sqrt(gg.total_compute_cost() / slowest)
    if spec.failing_signal <= bound:
        raise ValueError(
            f"failing_signal {spec.failing_signal} does not exceed the "
            f"slowest-single-device bound sqrt({gg.total_compute_cost()}/{slowest}) = {bound}"
        )


def reward_of(measurement: float, spec: RewardSpec) -> float:
    """sqrt(seconds) for a feasible measurement, failing signal otherwise."""
    if measurement == INFEASIBLE:
        return spec.failing_signal
    if not math.isfinite(measurement) or measurement <= 0:
        raise ValueError(f"measurement must be positive and finite, got {measurement}")
    return math.sqrt(measurement)


@dataclass
class BaselineState:
    """Per-controller moving average of observed rewards."""

    value: float
    decay: float = 0.9
    initialized_from_failing_signal: bool = False

    def update(self, mean_reward: float):
        self.value = self.decay * self.value + (1.0 - self.decay) * mean_reward


class ParameterStore:
    """Authoritative flat parameter vector plus Adam moment state.

    Snapshot reads and gradient applications are each atomic; every accepted
    apply bumps the version by one.  Non-finite gradients are rejected and
    counted without touching parameters or version.
    """

    def __init__(self, flat: np.ndarray, learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self._params = np.array(flat, dtype=np.float64)
        self._m = np.zeros_like(self._params)
        self._v = np.zeros_like(self._params)
        self._t = 0
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.version = 0
        self.rejected = 0
        self._lock = threading.Lock()

    def snapshot(self) -> tuple[np.ndarray, int]:
        with self._lock:
            return self._params.copy(), self.version

    def apply(self, gradient: np.ndarray) -> int:
        """Adam step in the descent direction; returns the store version."""
        gradient = np.asarray(gradient, dtype=np.float64)
        with self._lock:
            if gradient.shape != self._params.shape:
                raise ValueError(
                    f"gradient length {gradient.shape} != parameter length {self._params.shape}"
                )
            if not np.isfinite(gradient).all():
                self.rejected += 1
                return self.version
            self._t += 1
            self._m = self.beta1 * self._m + (1.0 - self.beta1) * gradient
            self._v = self.beta2 * self._v + (1.0 - self.beta2) * gradient * gradient
            m_hat = self._m / (1.0 - self.beta1 ** self._t)
            v_hat = self._v / (1.0 - self.beta2 ** self._t)
            self._params -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)
            self.version += 1
            return self.version


def apply_adam(store: ParameterStore, gradient: np.ndarray) -> int:
    return store.apply(gradient)


def reinforce_update(params: PolicyParams, feats: GroupFeatures, samples, rewards,
                     baseline: BaselineState) -> np.ndarray | None:
    """Advantage-weighted mean of log-prob gradients; updates the baseline.

    ``samples``/``rewards`` are the surviving subset after any success-only
    filtering.  Returns None (and leaves the baseline untouched) when empty.
    """
    if not samples:
        return None
    b = baseline.value
    grad = np.zeros(params.flat_size)
    for sample, r in zip(samples, rewards):
        g = policy_mod.grad_log_prob(params, feats, sample.placement, cache=sample.cache)
        grad += (r - b) * g
    grad /= len(samples)
    baseline.update(float(np.mean(rewards)))
    return grad


@dataclass
class TrainerConfig:
    k: int = 4
    total_updates: int = 200
    success_only_after: int = 5000
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    controllers: int = 1
    workers_per_controller: int | None = None  # defaults to k
    baseline_decay: float = 0.9
    failing_signal: float | None = None  # defaults to suggest_failing_signal
    noise_sigma: float = 0.0
    measure_steps: int = 10
    hidden: int = 64
    dev_dim: int = 16
    type_dim: int = 16
    shape_slots: int = 8
    adjacency_slots: int = 64
    init_scale: float = 0.1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.success_only_after < 0:
            raise ValueError("success_only_after must be >= 0")


@dataclass
class LogRow:
    """One training round; mean_r averages all K sampled rewards."""

    update_index: int
    controller_id: int
    store_version: int
    mean_r: float
    baseline: float
    best_r: float
    n_feasible: int
    n_used: int
    wall_ms: float

    CSV_HEADER = "update_index,controller_id,store_version,mean_R,baseline,best_R,n_feasible_of_K,wall_ms"

    def csv_line(self, include_wall: bool = True) -> str:
        cells = [
            str(self.update_index), str(self.controller_id), str(self.store_version),
            repr(self.mean_r), repr(self.baseline), repr(self.best_r),
            str(self.n_feasible),
        ]
        if include_wall:
            cells.append(f"{self.wall_ms:.3f}")
        return ",".join(cells)


def log_to_csv(rows, include_wall: bool = True) -> str:
    """Serialize the training log; dropping wall time yields a byte-stable
    serialization for determinism checks."""
    header = LogRow.CSV_HEADER
    if not include_wall:
        header = header.rsplit(",", 1)[0]
    buf = io.StringIO()
    buf.write(header + "\n")
    for row in rows:
        buf.write(row.csv_line(include_wall) + "\n")
    return buf.getvalue()


@dataclass
class _TrainTask:
    gg: GroupedGraph
    topo: DeviceTopology
    feats: GroupFeatures
    template: PolicyParams
    reward_spec: RewardSpec
    config: TrainerConfig


@dataclass
class _ControllerResult:
    rows: list[LogRow] = field(default_factory=list)
    best_r: float = math.inf
    best_placement: list[int] | None = None


def _measure_one(task: _TrainTask, placement, noise_seed: int) -> float:
    cfg = task.config
    noise = None
    if cfg.noise_sigma > 0.0:
        noise = NoiseSpec(sigma=cfg.noise_sigma, seed=noise_seed)
    try:
        return measure(task.gg, task.topo, placement, noise=noise, steps=cfg.measure_steps)
    except Exception:
        # A worker failure counts as a failed placement, not a trainer crash.
        return INFEASIBLE


def run_controller(controller_id: int, store: ParameterStore, task: _TrainTask,
                   seed_seq: np.random.SeedSequence) -> _ControllerResult:
    """Run the two-phase sample/measure loop for ``total_updates`` rounds."""
    cfg = task.config
    sample_seq, noise_seq = seed_seq.spawn(2)
    sample_rng = np.random.default_rng(sample_seq)
    noise_rng = np.random.default_rng(noise_seq)
    baseline = BaselineState(
        value=task.reward_spec.failing_signal,
        decay=cfg.baseline_decay,
        initialized_from_failing_signal=True,
    )
    result = _ControllerResult()
    n_workers = cfg.workers_per_controller or cfg.k
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        for update in range(cfg.total_updates):
            started = time.perf_counter()
            flat, _ = store.snapshot()
            params = task.template.with_flat(flat)
            samples = [policy_mod.forward_sample(params, task.feats, sample_rng)
                       for _ in range(cfg.k)]
            noise_seeds = [int(noise_rng.integers(1 << 62)) for _ in samples]
            futures = [pool.submit(_measure_one, task, s.placement, ns)
                       for s, ns in zip(samples, noise_seeds)]
            measurements = [f.result() for f in futures]
            rewards = [reward_of(m, task.reward_spec) for m in measurements]
            feasible = [m != INFEASIBLE for m in measurements]

            for sample, r, ok in zip(samples, rewards, feasible):
                if ok and r < result.best_r:
                    result.best_r = r
                    result.best_placement = list(sample.placement)

            if update < cfg.success_only_after:
                used = list(range(cfg.k))
            else:
                used = [i for i in range(cfg.k) if feasible[i]]
            grad = reinforce_update(
                params, task.feats,
                [samples[i] for i in used], [rewards[i] for i in used], baseline,
            )
            version = store.apply(grad) if grad is not None else store.version
            result.rows.append(LogRow(
                update_index=update,
                controller_id=controller_id,
                store_version=version,
                mean_r=float(np.mean(rewards)),
                baseline=baseline.value,
                best_r=result.best_r,
                n_feasible=sum(feasible),
                n_used=len(used),
                wall_ms=(time.perf_counter() - started) * 1e3,
            ))
    return result


@dataclass
class TrainResult:
    best_placement: list[int] | None
    best_report: SimReport | None
    log: list[LogRow]
    final_params: np.ndarray
    store_versions: int
    rejected_updates: int

    @property
    def found_feasible(self) -> bool:
        return self.best_placement is not None

    @property
    def best_makespan(self) -> float | None:
        return self.best_report.makespan_seconds if self.best_report else None


def policy_template(gg: GroupedGraph, topo: DeviceTopology,
                    config: TrainerConfig) -> PolicyParams:
    """The initial policy parameters train() starts from, for this instance."""
    spec = EmbeddingSpec.build([gg], type_dim=config.type_dim,
                               shape_slots=config.shape_slots,
                               adjacency_slots=config.adjacency_slots)
    return PolicyParams.init(spec, topo.num_devices, hidden=config.hidden,
                             dev_dim=config.dev_dim, seed=config.seed,
                             scale=config.init_scale)


def train(graph: ComputationGraph | GroupedGraph, topo: DeviceTopology,
          config: TrainerConfig | None = None) -> TrainResult:
    """Train the policy and return the best feasible placement ever measured.

    A "no feasible placement" outcome is reported through
    ``best_placement=None`` with the full log attached, never an exception.
    """
    config = config or TrainerConfig()
    gg = graph if isinstance(graph, GroupedGraph) else coalesce_sole_consumers(graph)
    template = policy_template(gg, topo, config)
    feats = GroupFeatures.from_grouped(gg, template.spec)
    failing = config.failing_signal
    if failing is None:
        failing = suggest_failing_signal(gg, topo)
    reward_spec = RewardSpec(failing)
    validate_failing_signal(reward_spec, gg, topo)

    store = ParameterStore(template.to_flat(), learning_rate=config.learning_rate,
                           beta1=config.adam_beta1, beta2=config.adam_beta2,
                           epsilon=config.adam_epsilon)
    task = _TrainTask(gg, topo, feats, template, reward_spec, config)
    root = np.random.SeedSequence(config.seed)
    controller_seqs = root.spawn(config.controllers)

    if config.controllers == 1:
        results = [run_controller(0, store, task, controller_seqs[0])]
    else:
        results = [None] * config.controllers

        def _run(cid):
            results[cid] = run_controller(cid, store, task, controller_seqs[cid])

        threads = [threading.Thread(target=_run, args=(cid,), name=f"controller-{cid}")
                   for cid in range(config.controllers)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()

    rows = [row for res in results for row in res.rows]
    rows.sort(key=lambda r: (r.controller_id, r.update_index))
    best = min(results, key=lambda r: r.best_r)
    best_placement = list(best.best_placement) if best.best_placement is not None else None
    best_report = simulate(gg, topo, best_placement) if best_placement is not None else None
    final, _ = store.snapshot()
    return TrainResult(
        best_placement=best_placement,
        best_report=best_report,
        log=rows,
        final_params=final,
        store_versions=store.version,
        rejected_updates=store.rejected,
    )
