"""Synthetic benchmark-graph generators.

Three families echo well-known model structures: a recurrent language-model
grid (layers x steps of LSTM cells), an encoder/decoder translation model
whose per-step attention reads every encoder top state, and a block/branch
convolutional network.  Each logical unit (cell, embedding step, attention
step, softmax step, branch, ...) expands into a chain of primitive ops plus a
mirrored backward chain, and every parameter-bearing unit feeds a final
update op, so a generated graph covers one forward pass, one backward pass
and one parameter update.  Manual co-location groups tie each unit's forward
and backward ops together, which is what makes coalescing collapse the op
count by an order of magnitude.

Group counts after coalescing are exact and documented per family in
:func:`expected_group_count`.

Costs are mildly jittered per seed (so instances are asymmetric and optima
tend to be unique) and quantized to 1/1024 work units, which keeps every cost
sum exact in 64-bit floats.  Byte sizes are chosen so cross-device transfer
times land within roughly 0.1x-10x of compute times on the default topology.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import ComputationGraph, Edge, Operation

FAMILIES = ("rnnlm_grid", "nmt_attention", "inception_blocks")


@dataclass(frozen=True)
class GeneratorSpec:
    family: str
    layers: int = 2
    steps: int = 4
    hidden: int = 32
    batch: int = 16
    blocks: int = 2
    branches: int = 3
    chain: int = 2
    seed: int = 0
    cost_scale: float = 1.0
    byte_scale: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose one of {FAMILIES}")
        for knob in ("layers", "steps", "hidden", "batch", "blocks", "branches", "chain"):
            if getattr(self, knob) < 1:
                raise ValueError(f"{knob} must be >= 1")


def expected_group_count(spec: GeneratorSpec) -> int:
    """Exact post-coalescing group count, by construction.

    rnnlm_grid:       L*S cells + S embeds + S softmaxes + (L + 2) updates
    nmt_attention:    2*L*S cells + 2*S embeds + S attention + S softmax
                      + (2*L + 4) updates
    inception_blocks: stem + head + B*(branches + 1) blocks/concats
                      + (B*branches + 2) updates
    """
    l, s = spec.layers, spec.steps
    if spec.family == "rnnlm_grid":
        return l * s + 2 * s + l + 2
    if spec.family == "nmt_attention":
        return 2 * l * s + 4 * s + 2 * l + 4
    b, br = spec.blocks, spec.branches
    return b * (2 * br + 1) + 4


# Base costs (rate-1.0 seconds) per primitive op of each unit kind.
_CELL_OPS = [("concat", 0.05), ("matmul", 0.55), ("bias_add", 0.03),
             ("sigmoid", 0.05), ("sigmoid", 0.05), ("sigmoid", 0.05),
             ("tanh", 0.05), ("mul", 0.03), ("mul", 0.03), ("add", 0.03),
             ("tanh", 0.05), ("mul", 0.03)]
_EMBED_OPS = [("embedding_lookup", 0.08), ("reshape", 0.01), ("dropout", 0.03)]
_SOFTMAX_OPS = [("matmul", 0.30), ("bias_add", 0.02), ("softmax", 0.08),
                ("cross_entropy", 0.05)]
_ATTN_OPS = [("matmul", 0.20), ("softmax", 0.05), ("matmul", 0.20), ("concat", 0.03)]
_CONV_OPS = [("conv2d", 0.40), ("bias_add", 0.03), ("relu", 0.04)]
_CONCAT_OPS = [("concat", 0.06)]
_UPDATE_COST = 0.02


def _quantize(cost: float) -> float:
    return max(round(cost * 1024.0) / 1024.0, 1.0 / 1024.0)


class _Builder:
    def __init__(self, spec: GeneratorSpec):
        self.spec = spec
        self.ops: list[Operation] = []
        self.edges: list[Edge] = []
        self.manual_groups: list[list[int]] = []
        self.rng = np.random.default_rng(spec.seed)

    def op(self, name: str, op_type: str, cost: float, shape, param_bytes: int = 0) -> int:
        jitter = 0.9 + 0.2 * self.rng.random()
        oid = len(self.ops)
        self.ops.append(Operation(
            id=oid, name=name, op_type=op_type,
            compute_cost=_quantize(cost * self.spec.cost_scale * jitter),
            output_shape=tuple(shape), param_bytes=param_bytes,
        ))
        return oid

    def edge(self, src: int, dst: int, nbytes: int):
        self.edges.append(Edge(src, dst, nbytes))

    def tensor_bytes(self, shape) -> int:
        return int(math.prod(shape) * 4 * self.spec.byte_scale)

    def finish(self) -> ComputationGraph:
        return ComputationGraph(self.ops, self.edges, self.manual_groups)


@dataclass
class _Unit:
    """A logical model piece: a forward chain plus its backward mirror."""

    name: str
    fwd_first: int
    fwd_last: int
    bwd_first: int
    bwd_last: int
    out_bytes: int


def _add_unit(b: _Builder, name: str, op_specs, shape) -> _Unit:
    nbytes = b.tensor_bytes(shape)
    fwd = [b.op(f"{name}/{t}{i}", t, c, shape) for i, (t, c) in enumerate(op_specs)]
    bwd = [b.op(f"{name}/grad_{t}{i}", f"grad_{t}", c, shape)
           for i, (t, c) in enumerate(reversed(op_specs))]
    for a, c in zip(fwd, fwd[1:]):
        b.edge(a, c, nbytes)
    for a, c in zip(bwd, bwd[1:]):
        b.edge(a, c, nbytes)
    b.edge(fwd[-1], bwd[0], nbytes)  # forward activations reused by backward
    b.manual_groups.append(fwd + bwd)
    return _Unit(name, fwd[0], fwd[-1], bwd[0], bwd[-1], nbytes)


def _link(b: _Builder, src: _Unit, dst: _Unit):
    """Forward tensor src->dst plus the mirrored gradient edge."""
    b.edge(src.fwd_last, dst.fwd_first, src.out_bytes)
    b.edge(dst.bwd_last, src.bwd_first, src.out_bytes)


def _add_update(b: _Builder, name: str, producers, param_bytes: int) -> int:
    upd = b.op(f"{name}/apply_grad", "apply_grad", _UPDATE_COST, (), param_bytes)
    for unit in producers:
        b.edge(unit.bwd_last, upd, param_bytes)
    return upd


def _gen_rnnlm(spec: GeneratorSpec) -> ComputationGraph:
    b = _Builder(spec)
    l, s, h, n = spec.layers, spec.steps, spec.hidden, spec.batch
    act = (n, h)
    layer_params = 32 * h * h
    table_params = 16 * h * h

    embeds = [_add_unit(b, f"embed_{t}", _EMBED_OPS, act) for t in range(s)]
    cells = [[_add_unit(b, f"cell_{li}_{t}", _CELL_OPS, act) for t in range(s)]
             for li in range(l)]
    softmaxes = [_add_unit(b, f"softmax_{t}", _SOFTMAX_OPS, (n, 4 * h)) for t in range(s)]

    for t in range(s):
        _link(b, embeds[t], cells[0][t])
        for li in range(l - 1):
            _link(b, cells[li][t], cells[li + 1][t])
        if t + 1 < s:
            for li in range(l):
                _link(b, cells[li][t], cells[li][t + 1])
        _link(b, cells[l - 1][t], softmaxes[t])

    _add_update(b, "embed", embeds, table_params)
    for li in range(l):
        _add_update(b, f"layer_{li}", cells[li], layer_params)
    _add_update(b, "softmax", softmaxes, table_params)
    return b.finish()


def _gen_nmt(spec: GeneratorSpec) -> ComputationGraph:
    b = _Builder(spec)
    l, s, h, n = spec.layers, spec.steps, spec.hidden, spec.batch
    act = (n, h)
    layer_params = 32 * h * h
    table_params = 16 * h * h

    enc_embeds = [_add_unit(b, f"enc_embed_{t}", _EMBED_OPS, act) for t in range(s)]
    enc = [[_add_unit(b, f"enc_cell_{li}_{t}", _CELL_OPS, act) for t in range(s)]
           for li in range(l)]
    dec_embeds = [_add_unit(b, f"dec_embed_{t}", _EMBED_OPS, act) for t in range(s)]
    dec = [[_add_unit(b, f"dec_cell_{li}_{t}", _CELL_OPS, act) for t in range(s)]
           for li in range(l)]
    attns = [_add_unit(b, f"attention_{t}", _ATTN_OPS, act) for t in range(s)]
    softmaxes = [_add_unit(b, f"softmax_{t}", _SOFTMAX_OPS, (n, 4 * h)) for t in range(s)]

    for grid, embeds in ((enc, enc_embeds), (dec, dec_embeds)):
        for t in range(s):
            _link(b, embeds[t], grid[0][t])
            for li in range(l - 1):
                _link(b, grid[li][t], grid[li + 1][t])
            if t + 1 < s:
                for li in range(l):
                    _link(b, grid[li][t], grid[li][t + 1])
    for t in range(s):
        _link(b, dec[l - 1][t], attns[t])
        for src_t in range(s):  # content attention reads every encoder top state
            _link(b, enc[l - 1][src_t], attns[t])
        _link(b, attns[t], softmaxes[t])

    _add_update(b, "enc_embed", enc_embeds, table_params)
    _add_update(b, "dec_embed", dec_embeds, table_params)
    for li in range(l):
        _add_update(b, f"enc_layer_{li}", enc[li], layer_params)
        _add_update(b, f"dec_layer_{li}", dec[li], layer_params)
    _add_update(b, "attention", attns, 8 * h * h)
    _add_update(b, "softmax", softmaxes, table_params)
    return b.finish()


def _gen_inception(spec: GeneratorSpec) -> ComputationGraph:
    b = _Builder(spec)
    h, n = spec.hidden, spec.batch
    act = (n, h, h)
    conv_params = 36 * h * h

    stem = _add_unit(b, "stem", _CONV_OPS, act)
    _add_update(b, "stem", [stem], conv_params)
    prev = stem
    branch_units = []
    for blk in range(spec.blocks):
        branches = []
        for br in range(spec.branches):
            ops = _CONV_OPS * spec.chain
            unit = _add_unit(b, f"block_{blk}/branch_{br}", ops, act)
            _link(b, prev, unit)
            branches.append(unit)
            branch_units.append((blk, br, unit))
        concat = _add_unit(b, f"block_{blk}/concat", _CONCAT_OPS,
                           (n, h, h * spec.branches))
        for unit in branches:
            _link(b, unit, concat)
        prev = concat
    head = _add_unit(b, "head", _SOFTMAX_OPS, (n, 4 * h))
    _link(b, prev, head)

    for blk, br, unit in branch_units:
        _add_update(b, f"block_{blk}/branch_{br}", [unit], conv_params * spec.chain)
    _add_update(b, "head", [head], 16 * h * h)
    return b.finish()


def generate(spec: GeneratorSpec) -> ComputationGraph:
    """Build one synthetic benchmark graph; deterministic per spec."""
    if spec.family == "rnnlm_grid":
        return _gen_rnnlm(spec)
    if spec.family == "nmt_attention":
        return _gen_nmt(spec)
    return _gen_inception(spec)
