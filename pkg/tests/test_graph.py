import itertools

import numpy as np
import pytest

from koopnet.graph import (CycleDetected, Digraph, condensation, cycle_order, has_vertex_shared_by_cycles,
                           require_topological_sort, strong_components, topological_sort)
from oracles import all_arcs, arcs_of, brute_components, brute_shared_vertex, reachability


def test_self_loop_rejected():
    with pytest.raises(ValueError):
        Digraph.from_arcs(3, [(2, 2)])


def test_out_of_range_arc_rejected():
    with pytest.raises(ValueError):
        Digraph.from_arcs(2, [(1, 3)])


def test_neighbours_match_arcs():
    g = Digraph.from_arcs(4, [(1, 2), (1, 3), (3, 4), (4, 3)])
    assert g.in_neighbours(3) == (1, 4)
    assert g.out_neighbours(1) == (2, 3)
    assert g.in_neighbours(1) == ()
    for i in g.vertices:
        assert set(g.in_neighbours(i)) == {t for t, h in g.arcs if h == i}
        assert set(g.out_neighbours(i)) == {h for t, h in g.arcs if t == i}


def test_ancestors_chain():
    g = Digraph.from_arcs(4, [(1, 2), (2, 3)])
    assert g.ancestors(3) == (1, 2)
    assert g.ancestors(4) == ()


def test_dict_roundtrip():
    g = Digraph.from_arcs(4, [(1, 2), (3, 4), (4, 3)])
    assert Digraph.from_dict(g.to_dict()) == g


def test_subgraph_relabels():
    g = Digraph.from_arcs(5, [(2, 4), (4, 5), (1, 2)])
    sub = g.subgraph([2, 4, 5])
    assert sub.num_vertices == 3
    assert sub.arcs == frozenset({(1, 2), (2, 3)})


def test_topological_sort_one_source_two_sinks():
    # 1 feeds 2 and 3
    g = Digraph.from_arcs(3, [(1, 2), (1, 3)])
    assert topological_sort(g) == (1, 2, 3)


def test_topological_sort_detects_cycle():
    g = Digraph.from_arcs(2, [(1, 2), (2, 1)])
    assert topological_sort(g) is None
    with pytest.raises(CycleDetected):
        require_topological_sort(g)


def test_empty_graph_sorts_identity():
    assert topological_sort(Digraph(4)) == (1, 2, 3, 4)


def test_transfer_mod3_add4_graph():
    g = Digraph.from_arcs(4, [(1, 2), (1, 3), (3, 4), (4, 3)])
    cond = condensation(g)
    assert cond.components == (frozenset({1}), frozenset({2}), frozenset({3, 4}))
    assert not has_vertex_shared_by_cycles(g)
    assert cycle_order(g, {3, 4}) == (3, 4)


def test_two_cycles_through_one_vertex():
    g = Digraph.from_arcs(3, [(1, 2), (2, 1), (1, 3), (3, 1)])
    assert has_vertex_shared_by_cycles(g)
    with pytest.raises(ValueError):
        cycle_order(g, {1, 2, 3})


def test_chord_makes_shared_vertex():
    g = Digraph.from_arcs(3, [(1, 2), (2, 3), (3, 1), (1, 3)])
    assert has_vertex_shared_by_cycles(g)


def test_long_path_no_recursion_error():
    n = 5000
    g = Digraph.from_arcs(n, [(k, k + 1) for k in range(1, n)] + [(n, 1)])
    comps = strong_components(g)
    assert len(comps) == 1 and len(comps[0]) == n


def _check_against_brute(n, arcs):
    g = Digraph.from_arcs(n, arcs)
    comps = strong_components(g)
    assert set(comps) == brute_components(n, arcs)
    assert [min(c) for c in comps] == sorted(min(c) for c in comps)
    cond = condensation(g)
    R = reachability(n, arcs)
    pos = {c: k for k, c in enumerate(cond.topo_order)}
    for a, b in cond.arcs:
        assert pos[a] < pos[b]
    for a, b in itertools.product(range(len(cond.components)), repeat=2):
        if a == b:
            continue
        # condensed arcs exist exactly where some original arc crosses components
        crosses = any((t, h) in set(arcs) for t in cond.components[a] for h in cond.components[b])
        assert ((a + 1, b + 1) in cond.arcs) == crosses
    for comp in cond.components:
        idx = [v - 1 for v in comp]
        assert R[np.ix_(idx, idx)].all()
    assert has_vertex_shared_by_cycles(g) == brute_shared_vertex(n, arcs)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_graph_algorithms_exhaustive_small(n):
    for mask in range(1 << len(all_arcs(n))):
        _check_against_brute(n, arcs_of(mask, n))


def test_graph_algorithms_random():
    rng = np.random.default_rng(7)
    for _ in range(200):
        n = int(rng.integers(1, 7))
        p = rng.uniform(0.05, 0.6)
        arcs = [a for a in all_arcs(n) if rng.random() < p]
        _check_against_brute(n, arcs)
