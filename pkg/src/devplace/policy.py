"""Attentional encoder-decoder placement policy with analytic gradients.

The policy reads one input vector per co-location group (in topological
order) through an LSTM encoder, then an attentional LSTM decoder emits a
device distribution per group.  The sampled device's embedding is fed to the
next decoder step; step 0 receives a dedicated start vector.

Per-group input vector = [type block | shape block | adjacency block]:

* type block: mean of the (trainable) type-embedding rows of the group's
  member op types;
* shape block: log1p of the members' output-tensor element counts, sorted
  descending, truncated / zero-padded to a fixed width;
* adjacency block: multi-hot of direct predecessor and successor group ids
  folded modulo the block width (predecessors and successors share the block;
  collisions are accepted in exchange for a fixed parameter count).

Device logits are scores of the device-embedding rows against a projection
of [decoder state; attention context], plus a per-device bias.  Tying the
output layer to the device embeddings means every device row receives
gradient through the softmax normalizer even when never selected.

Everything is plain numpy with hand-written backpropagation;
:func:`grad_log_prob` is checked against central finite differences in the
test suite.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .graph import ComputationGraph, GroupedGraph

CHECKPOINT_FORMAT = "devplace-policy-v1"

# Canonical parameter order backing the flat vector view.
_FIELDS = ("type_table", "dev_table", "w_enc", "b_enc", "w_dec", "b_dec",
           "w_att", "w_out", "b_out")


class EmbeddingSpec:
    """Vocabulary and block widths for building group input vectors."""

    def __init__(self, type_vocab: dict[str, int], type_dim: int = 16,
                 shape_slots: int = 8, adjacency_slots: int = 64):
        if type_dim < 1 or shape_slots < 1 or adjacency_slots < 1:
            raise ValueError("all embedding widths must be >= 1")
        self.type_vocab = dict(type_vocab)
        self.type_dim = type_dim
        self.shape_slots = shape_slots
        self.adjacency_slots = adjacency_slots

    @classmethod
    def build(cls, graphs, type_dim: int = 16, shape_slots: int = 8,
              adjacency_slots: int = 64) -> "EmbeddingSpec":
        """Collect the op-type vocabulary from a corpus of graphs."""
        types = set()
        for g in graphs:
            src = g.graph if isinstance(g, GroupedGraph) else g
            types.update(op.op_type for op in src.ops)
        vocab = {t: i for i, t in enumerate(sorted(types))}
        return cls(vocab, type_dim, shape_slots, adjacency_slots)

    @property
    def unknown_index(self) -> int:
        return len(self.type_vocab)

    @property
    def table_rows(self) -> int:
        return len(self.type_vocab) + 1  # last row: unknown types

    @property
    def input_dim(self) -> int:
        return self.type_dim + self.shape_slots + self.adjacency_slots

    def index_of(self, op_type: str) -> int:
        return self.type_vocab.get(op_type, self.unknown_index)


@dataclass
class GroupFeatures:
    """Structural (non-trainable) encoder inputs, one row per decode step.

    Step t corresponds to group ``order[t]``; placements everywhere else are
    indexed by group id, so the policy maps through ``order``.
    """

    order: list[int]
    type_indices: list[np.ndarray]
    shape_blocks: np.ndarray  # (T, shape_slots)
    adj_blocks: np.ndarray    # (T, adjacency_slots)

    @classmethod
    def from_grouped(cls, gg: GroupedGraph, spec: EmbeddingSpec) -> "GroupFeatures":
        order = list(gg.topo)
        type_indices = []
        shapes = np.zeros((len(order), spec.shape_slots))
        adj = np.zeros((len(order), spec.adjacency_slots))
        for t, gid in enumerate(order):
            grp = gg.groups[gid]
            idxs = []
            for op_type, count in sorted(grp.type_counts.items()):
                idxs.extend([spec.index_of(op_type)] * count)
            type_indices.append(np.asarray(idxs, dtype=np.intp))
            elems = sorted(gg.output_elem_counts(gid), reverse=True)
            for slot, count in enumerate(elems[: spec.shape_slots]):
                shapes[t, slot] = np.log1p(count)
            for nbr in list(gg.in_groups[gid]) + list(gg.out_groups[gid]):
                adj[t, nbr % spec.adjacency_slots] = 1.0
        return cls(order, type_indices, shapes, adj)

    def __len__(self):
        return len(self.order)


class PolicyParams:
    """All trainable tensors, with an exact flat-vector view.

    The flat view concatenates the raveled arrays in a fixed canonical order;
    round-tripping through it is the identity.
    """

    def __init__(self, spec: EmbeddingSpec, num_devices: int, hidden: int = 64,
                 dev_dim: int = 16, arrays: dict[str, np.ndarray] | None = None):
        if num_devices < 1:
            raise ValueError("need at least one device")
        self.spec = spec
        self.num_devices = num_devices
        self.hidden = hidden
        self.dev_dim = dev_dim
        f, h, dd, d = spec.input_dim, hidden, dev_dim, num_devices
        self.shapes = {
            "type_table": (spec.table_rows, spec.type_dim),
            "dev_table": (d + 1, dd),  # row d: start-of-decode vector
            "w_enc": (f + h, 4 * h),
            "b_enc": (4 * h,),
            "w_dec": (dd + h, 4 * h),
            "b_dec": (4 * h,),
            "w_att": (h, h),
            "w_out": (2 * h, dd),
            "b_out": (d,),
        }
        if arrays is None:
            arrays = {k: np.zeros(s) for k, s in self.shapes.items()}
        for k in _FIELDS:
            if arrays[k].shape != self.shapes[k]:
                raise ValueError(f"{k}: expected shape {self.shapes[k]}, got {arrays[k].shape}")
            setattr(self, k, np.asarray(arrays[k], dtype=np.float64))

    @classmethod
    def init(cls, spec: EmbeddingSpec, num_devices: int, hidden: int = 64,
             dev_dim: int = 16, seed: int = 0, scale: float = 0.1) -> "PolicyParams":
        """Uniform [-scale, scale] initialization, seeded."""
        params = cls(spec, num_devices, hidden, dev_dim)
        rng = np.random.default_rng(seed)
        for k in _FIELDS:
            setattr(params, k, rng.uniform(-scale, scale, size=params.shapes[k]))
        return params

    @property
    def flat_size(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes.values())

    def to_flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, k).ravel() for k in _FIELDS])

    def with_flat(self, flat: np.ndarray) -> "PolicyParams":
        """New PolicyParams sharing hyperparameters, values from ``flat``."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.flat_size,):
            raise ValueError(f"flat vector must have length {self.flat_size}")
        arrays, off = {}, 0
        for k in _FIELDS:
            shape = self.shapes[k]
            size = int(np.prod(shape))
            arrays[k] = flat[off:off + size].reshape(shape).copy()
            off += size
        return PolicyParams(self.spec, self.num_devices, self.hidden, self.dev_dim, arrays)

    def _zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros(self.shapes[k]) for k in _FIELDS}

    def _flatten_grads(self, grads: dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([grads[k].ravel() for k in _FIELDS])


@dataclass
class SampledPlacement:
    """A sampled placement, its exact log-probability, and the forward cache."""

    placement: list[int]
    log_prob: float
    cache: "_ForwardCache"


@dataclass
class _StepCache:
    lstm: tuple
    alpha: np.ndarray
    hc: np.ndarray
    u: np.ndarray
    probs: np.ndarray
    choice: int
    input_row: int


@dataclass
class _ForwardCache:
    inputs: np.ndarray
    enc: list[tuple]
    enc_states: np.ndarray  # (T, H)
    proj: np.ndarray        # (T, H) = enc_states @ w_att.T
    dec: list[_StepCache]


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _lstm_step(w, b, x, h_prev, c_prev, hidden):
    xh = np.concatenate([x, h_prev])
    a = xh @ w + b
    i = _sigmoid(a[:hidden])
    f = _sigmoid(a[hidden:2 * hidden])
    o = _sigmoid(a[2 * hidden:3 * hidden])
    g = np.tanh(a[3 * hidden:])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c, (xh, i, f, o, g, c_prev, c)


def _lstm_backward(w, cache, dh, dc_in, n_in):
    xh, i, f, o, g, c_prev, c = cache
    tc = np.tanh(c)
    do = dh * tc
    dc = dc_in + dh * o * (1.0 - tc * tc)
    di = dc * g
    dg = dc * i
    df = dc * c_prev
    dc_prev = dc * f
    da = np.concatenate([
        di * i * (1.0 - i),
        df * f * (1.0 - f),
        do * o * (1.0 - o),
        dg * (1.0 - g * g),
    ])
    dw = np.outer(xh, da)
    dxh = w @ da
    return dw, da, dxh[:n_in], dxh[n_in:], dc_prev


def _assemble_inputs(params: PolicyParams, feats: GroupFeatures) -> np.ndarray:
    spec = params.spec
    x = np.empty((len(feats), spec.input_dim))
    for t in range(len(feats)):
        x[t, :spec.type_dim] = params.type_table[feats.type_indices[t]].mean(axis=0)
        x[t, spec.type_dim:spec.type_dim + spec.shape_slots] = feats.shape_blocks[t]
        x[t, spec.type_dim + spec.shape_slots:] = feats.adj_blocks[t]
    return x


def embed_groups(params: PolicyParams, feats: GroupFeatures) -> np.ndarray:
    """Assembled encoder inputs, one row per group in topo order."""
    return _assemble_inputs(params, feats)


def _forward(params: PolicyParams, feats: GroupFeatures, choose):
    """Shared encoder/decoder pass; ``choose(t, probs)`` picks each device."""
    t_steps = len(feats)
    if t_steps == 0:
        raise ValueError("cannot place an empty group sequence")
    h_dim, d = params.hidden, params.num_devices
    x = _assemble_inputs(params, feats)

    enc_caches, enc_states = [], np.empty((t_steps, h_dim))
    h = np.zeros(h_dim)
    c = np.zeros(h_dim)
    for t in range(t_steps):
        h, c, cache = _lstm_step(params.w_enc, params.b_enc, x[t], h, c, h_dim)
        enc_caches.append(cache)
        enc_states[t] = h

    proj = enc_states @ params.w_att.T  # row i scores decoder states against e_i
    dec_caches: list[_StepCache] = []
    log_prob = 0.0
    placement = [0] * t_steps
    prev_row = d  # start-of-decode embedding
    for t in range(t_steps):
        h, c, lstm_cache = _lstm_step(
            params.w_dec, params.b_dec, params.dev_table[prev_row], h, c, h_dim
        )
        scores = proj @ h
        scores = scores - scores.max()
        alpha = np.exp(scores)
        alpha /= alpha.sum()
        ctx = alpha @ enc_states
        hc = np.concatenate([h, ctx])
        u = hc @ params.w_out
        z = params.dev_table[:d] @ u + params.b_out
        zs = z - z.max()
        log_norm = np.log(np.exp(zs).sum())
        probs = np.exp(zs - log_norm)
        choice = int(choose(t, probs))
        log_prob += float(zs[choice] - log_norm)
        dec_caches.append(_StepCache(lstm_cache, alpha, hc, u, probs, choice, prev_row))
        placement[feats.order[t]] = choice
        prev_row = choice

    cache = _ForwardCache(x, enc_caches, enc_states, proj, dec_caches)
    return placement, log_prob, cache


def forward_sample(params: PolicyParams, feats: GroupFeatures, rng) -> SampledPlacement:
    """Sample one placement from the policy; deterministic given the rng state."""

    def choose(_t, probs):
        r = rng.random()
        idx = int(np.searchsorted(np.cumsum(probs), r, side="right"))
        return min(idx, params.num_devices - 1)

    placement, log_prob, cache = _forward(params, feats, choose)
    return SampledPlacement(placement, log_prob, cache)


def log_prob_of(params: PolicyParams, feats: GroupFeatures, placement) -> float:
    """Exact log-probability of a given placement (teacher-forced pass)."""
    _check_placement_arg(params, feats, placement)
    _, log_prob, _ = _forward(params, feats, lambda t, _p: placement[feats.order[t]])
    return log_prob


def step_distributions(params: PolicyParams, feats: GroupFeatures, placement) -> np.ndarray:
    """Per-step device distributions along a teacher-forced pass (T, D)."""
    _check_placement_arg(params, feats, placement)
    _, _, cache = _forward(params, feats, lambda t, _p: placement[feats.order[t]])
    return np.stack([sc.probs for sc in cache.dec])


def _check_placement_arg(params, feats, placement):
    if len(placement) != len(feats):
        raise ValueError(f"placement length {len(placement)} != sequence length {len(feats)}")
    for dev in placement:
        if not (0 <= dev < params.num_devices):
            raise ValueError(f"device id {dev} out of range (D={params.num_devices})")


def grad_log_prob(params: PolicyParams, feats: GroupFeatures, placement,
                  cache: _ForwardCache | None = None) -> np.ndarray:
    """Analytic gradient of ``log_prob_of`` w.r.t. the flat parameter view.

    ``cache`` may carry the forward activations of this exact placement under
    these exact parameters (as produced by :func:`forward_sample`); otherwise
    a teacher-forced forward pass is run first.
    """
    _check_placement_arg(params, feats, placement)
    if cache is None:
        _, _, cache = _forward(params, feats, lambda t, _p: placement[feats.order[t]])

    spec = params.spec
    h_dim, d = params.hidden, params.num_devices
    t_steps = len(feats)
    grads = params._zero_grads()
    enc_states, proj = cache.enc_states, cache.proj

    d_enc_states = np.zeros_like(enc_states)
    d_proj = np.zeros_like(proj)
    dh = np.zeros(h_dim)
    dc = np.zeros(h_dim)
    for t in range(t_steps - 1, -1, -1):
        sc = cache.dec[t]
        dz = -sc.probs.copy()
        dz[sc.choice] += 1.0
        grads["b_out"] += dz
        grads["dev_table"][:d] += np.outer(dz, sc.u)
        du = params.dev_table[:d].T @ dz
        grads["w_out"] += np.outer(sc.hc, du)
        dhc = params.w_out @ du
        dh += dhc[:h_dim]
        dctx = dhc[h_dim:]
        dalpha = enc_states @ dctx
        d_enc_states += np.outer(sc.alpha, dctx)
        ds = sc.alpha * (dalpha - sc.alpha @ dalpha)
        d_proj += np.outer(ds, sc.hc[:h_dim])
        dh += proj.T @ ds
        dw, da, dx, dh, dc = _lstm_backward(params.w_dec, sc.lstm, dh, dc, params.dev_dim)
        grads["w_dec"] += dw
        grads["b_dec"] += da
        grads["dev_table"][sc.input_row] += dx

    grads["w_att"] += d_proj.T @ enc_states
    d_enc_states += d_proj @ params.w_att

    d_inputs = np.zeros_like(cache.inputs)
    for t in range(t_steps - 1, -1, -1):
        dh += d_enc_states[t]
        dw, da, dx, dh, dc = _lstm_backward(params.w_enc, cache.enc[t], dh, dc, spec.input_dim)
        grads["w_enc"] += dw
        grads["b_enc"] += da
        d_inputs[t] = dx

    for t in range(t_steps):
        idxs = feats.type_indices[t]
        np.add.at(grads["type_table"], idxs, d_inputs[t, :spec.type_dim] / len(idxs))

    return params._flatten_grads(grads)


def save_checkpoint(params: PolicyParams, path: str | os.PathLike):
    """Write parameters with an exact (hex-float) round-trip encoding."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "hidden": params.hidden,
        "dev_dim": params.dev_dim,
        "num_devices": params.num_devices,
        "type_dim": params.spec.type_dim,
        "shape_slots": params.spec.shape_slots,
        "adjacency_slots": params.spec.adjacency_slots,
        "type_vocab": params.spec.type_vocab,
        "flat_hex": [v.hex() for v in params.to_flat()],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path: str | os.PathLike) -> PolicyParams:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format: {doc.get('format')!r}")
    spec = EmbeddingSpec(doc["type_vocab"], doc["type_dim"], doc["shape_slots"],
                         doc["adjacency_slots"])
    params = PolicyParams(spec, doc["num_devices"], doc["hidden"], doc["dev_dim"])
    flat = np.array([float.fromhex(v) for v in doc["flat_hex"]])
    return params.with_flat(flat)
