import math

import numpy as np
import pytest

from devplace import (ComputationGraph, CycleError, Edge, GraphError, Operation,
                      coalesce_sole_consumers, graph_from_dict, graph_to_dict,
                      load_graph, save_graph, singleton_groups, topo_order)
from devplace.graph import _coalesce_partition

from util import grouped_as_graph, random_dag


def two_op_doc():
    return {
        "ops": [
            {"id": 0, "name": "A", "type": "matmul", "cost": 2.0},
            {"id": 1, "name": "B", "type": "matmul", "cost": 3.0},
        ],
        "edges": [{"src": 0, "dst": 1, "bytes": 8}],
    }


def test_load_two_op_chain():
    g = graph_from_dict(two_op_doc())
    assert g.num_ops == 2
    assert len(g.edges) == 1
    assert g.edges[0].tensor_bytes == 8
    assert g.topo_order == [0, 1]
    assert g.ops[0].compute_cost == 2.0


def test_cycle_error_names_members():
    doc = two_op_doc()
    doc["edges"].append({"src": 1, "dst": 0, "bytes": 1})
    with pytest.raises(CycleError) as exc:
        graph_from_dict(doc)
    assert "A" in str(exc.value) and "B" in str(exc.value)
    assert sorted(exc.value.cycle) == [0, 1]


def test_dangling_edge_endpoint():
    doc = two_op_doc()
    doc["edges"].append({"src": 0, "dst": 99, "bytes": 1})
    with pytest.raises(GraphError, match="dangling"):
        graph_from_dict(doc)


def test_schema_violations():
    with pytest.raises(GraphError):
        graph_from_dict({"ops": [{"id": 0, "type": "x", "cost": -1.0}]})
    with pytest.raises(GraphError):
        graph_from_dict({"ops": [{"id": 0, "type": "x", "cost": 1.0,
                                  "output_shape": [0]}]})
    with pytest.raises(GraphError):
        graph_from_dict({"ops": [{"id": 1, "type": "x", "cost": 1.0}]})  # not dense
    with pytest.raises(GraphError):
        graph_from_dict({"ops": [], "bogus": 1})
    with pytest.raises(GraphError, match="overlap"):
        graph_from_dict({
            "ops": [{"id": 0, "type": "x", "cost": 1.0},
                    {"id": 1, "type": "x", "cost": 1.0}],
            "manual_groups": [[0, 1], [1]],
        })
    with pytest.raises(GraphError, match="self-edge"):
        graph_from_dict({"ops": [{"id": 0, "type": "x", "cost": 1.0}],
                         "edges": [{"src": 0, "dst": 0, "bytes": 0}]})


def test_roundtrip_file(tmp_path):
    g = graph_from_dict(two_op_doc())
    path = tmp_path / "g.json"
    save_graph(g, path)
    back = load_graph(path)
    assert graph_to_dict(back) == graph_to_dict(g)


def chain3():
    ops = [Operation(i, n, "op", 1.0, (2,)) for i, n in enumerate("ABC")]
    return ComputationGraph(ops, [Edge(0, 1, 4), Edge(1, 2, 4)])


def test_coalesce_chain_collapses():
    gg = coalesce_sole_consumers(chain3())
    assert gg.num_groups == 1
    assert gg.groups[0].members == (0, 1, 2)


def test_coalesce_diamond_collapses():
    # A->B, A->C, B->D, C->D: B merges into D, then C, then A.
    ops = [Operation(i, n, "op", 1.0, (2,)) for i, n in enumerate("ABCD")]
    g = ComputationGraph(ops, [Edge(0, 1, 1), Edge(0, 2, 1), Edge(1, 3, 1), Edge(2, 3, 1)])
    gg = coalesce_sole_consumers(g)
    assert gg.num_groups == 1
    assert gg.groups[0].members == (0, 1, 2, 3)


def test_coalesce_fork_stays_apart():
    # A->B, A->C with B, C terminal: the rule never fires.
    ops = [Operation(i, n, "op", 1.0, (2,)) for i, n in enumerate("ABC")]
    g = ComputationGraph(ops, [Edge(0, 1, 1), Edge(0, 2, 1)])
    gg = coalesce_sole_consumers(g)
    assert gg.num_groups == 3
    assert [grp.members for grp in gg.groups] == [(0,), (1,), (2,)]


def test_manual_groups_seed_coalescing():
    # Seeding B,C together turns the fork into a sole-consumer chain.
    ops = [Operation(i, n, "op", 1.0, (2,)) for i, n in enumerate("ABC")]
    g = ComputationGraph(ops, [Edge(0, 1, 1), Edge(0, 2, 1)], manual_groups=[[1, 2]])
    gg = coalesce_sole_consumers(g)
    assert gg.num_groups == 1


def test_coalesce_conserves_cost_and_params():
    rng = np.random.default_rng(7)
    for _ in range(50):
        g = random_dag(rng, manual_groups=True)
        gg = coalesce_sole_consumers(g)
        assert gg.total_compute_cost() == g.total_compute_cost()
        assert sum(grp.param_bytes for grp in gg.groups) == g.total_param_bytes()
        assert sorted(i for grp in gg.groups for i in grp.members) == list(range(g.num_ops))


def test_coalesce_confluent_under_visit_orders():
    rng = np.random.default_rng(11)
    orders = [
        lambda r: r,
        lambda r: -r,
        lambda r: (r * 7919) % 104729,
        lambda r: (r % 3, r),
        lambda r: ((r * 31) % 17, -r),
    ]
    for _ in range(200):
        g = random_dag(rng, max_ops=30, manual_groups=True)
        partitions = [frozenset(map(frozenset, _coalesce_partition(g, key)))
                      for key in orders]
        assert all(p == partitions[0] for p in partitions[1:])


def test_coalesce_idempotent():
    rng = np.random.default_rng(13)
    for _ in range(50):
        gg = coalesce_sole_consumers(random_dag(rng))
        again = coalesce_sole_consumers(grouped_as_graph(gg))
        assert again.num_groups == gg.num_groups
        assert all(len(grp.members) == 1 for grp in again.groups)


def test_grouped_graph_always_dag():
    rng = np.random.default_rng(17)
    for _ in range(100):
        gg = coalesce_sole_consumers(random_dag(rng, manual_groups=True))
        order = topo_order(gg)  # raises if not a DAG
        pos = {g: i for i, g in enumerate(order)}
        assert all(pos[e.src] < pos[e.dst] for e in gg.group_edges)


def test_group_edges_deduplicated_and_no_self_loops():
    # {0,1} feeds both 2 and 3, so it cannot merge further.
    ops = [Operation(i, f"o{i}", "op", 1.0, (2,)) for i in range(4)]
    g = ComputationGraph(
        ops,
        [Edge(0, 1, 3), Edge(0, 2, 5), Edge(1, 2, 7), Edge(0, 2, 11), Edge(1, 3, 2)],
        manual_groups=[[0, 1]],
    )
    gg = coalesce_sole_consumers(g)
    assert gg.num_groups == 3
    fused = gg.groups[0]
    assert fused.members == (0, 1)
    edges = {(e.src, e.dst): e.tensor_bytes for e in gg.group_edges}
    # 0->2 twice plus 1->2 once, summed; the 0->1 edge is internal.
    assert edges[(0, 1)] == 5 + 7 + 11
    assert edges[(0, 2)] == 2
    assert fused.out_bytes == 3 + 5 + 7 + 11 + 2


def test_manual_group_cycle_detected():
    # A->B->C with manual group {A, C} sandwiches B: invalid grouping.
    g = chain3()
    bad = ComputationGraph(g.ops, g.edges, manual_groups=[[0, 2]])
    with pytest.raises(GraphError, match="cycle"):
        coalesce_sole_consumers(bad)


def test_topo_order_chain_and_ties():
    gg = singleton_groups(chain3())
    assert topo_order(gg) == [0, 1, 2]

    ops = [Operation(0, "A", "op", 1.0), Operation(1, "B", "op", 1.0)]
    independent = singleton_groups(ComputationGraph(ops, []))
    assert topo_order(independent) == [0, 1]

    ops = [Operation(i, f"o{i}", "op", 1.0) for i in range(4)]
    diamond = singleton_groups(ComputationGraph(
        ops, [Edge(0, 2, 1), Edge(0, 1, 1), Edge(2, 3, 1), Edge(1, 3, 1)]))
    assert topo_order(diamond) == [0, 1, 2, 3]


def test_zero_byte_edges_are_kept():
    ops = [Operation(i, f"o{i}", "op", 1.0) for i in range(2)]
    g = ComputationGraph(ops, [Edge(0, 1, 0)])
    gg = singleton_groups(g)
    assert len(gg.group_edges) == 1
    assert gg.group_edges[0].tensor_bytes == 0
    assert topo_order(gg) == [0, 1]


def test_output_elem_counts_skips_missing_outputs():
    ops = [Operation(0, "A", "op", 1.0, (2, 3)), Operation(1, "B", "op", 1.0, ())]
    gg = singleton_groups(ComputationGraph(ops, [Edge(0, 1, 4)]))
    assert gg.output_elem_counts(0) == [6]
    assert gg.output_elem_counts(1) == []
