"""Interconnection digraphs and the structural algorithms used by the error analysis.

Vertices are numbered ``1..s`` everywhere in the public API.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Iterable, Sequence


class CycleDetected(Exception):
    """Raised by :func:`require_topological_sort` when the graph has a directed cycle."""


@dataclass(frozen=True)
class Digraph:
    """Directed graph on vertices ``1..num_vertices`` without self-loops.

    An arc ``(j, i)`` means that subsystem ``j`` influences subsystem ``i``,
    i.e. ``j`` is an in-neighbour of ``i``.
    """

    num_vertices: int
    arcs: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.num_vertices < 1:
            raise ValueError("a digraph needs at least one vertex")
        arcs = frozenset((int(t), int(h)) for t, h in self.arcs)
        for tail, head in arcs:
            if tail == head:
                raise ValueError(f"self-loop at vertex {tail} is not allowed")
            if not (1 <= tail <= self.num_vertices and 1 <= head <= self.num_vertices):
                raise ValueError(f"arc ({tail}, {head}) leaves the vertex range 1..{self.num_vertices}")
        object.__setattr__(self, "arcs", arcs)
        pred: dict[int, list[int]] = {v: [] for v in range(1, self.num_vertices + 1)}
        succ: dict[int, list[int]] = {v: [] for v in range(1, self.num_vertices + 1)}
        for tail, head in arcs:
            pred[head].append(tail)
            succ[tail].append(head)
        object.__setattr__(self, "_pred", {v: tuple(sorted(u)) for v, u in pred.items()})
        object.__setattr__(self, "_succ", {v: tuple(sorted(w)) for v, w in succ.items()})

    @classmethod
    def from_arcs(cls, num_vertices: int, arcs: Iterable[Sequence[int]]) -> "Digraph":
        return cls(num_vertices, frozenset(tuple(a) for a in arcs))

    @property
    def vertices(self) -> range:
        return range(1, self.num_vertices + 1)

    def in_neighbours(self, i: int) -> tuple[int, ...]:
        return self._pred[i]

    def out_neighbours(self, i: int) -> tuple[int, ...]:
        return self._succ[i]

    def sorted_arcs(self) -> list[tuple[int, int]]:
        return sorted(self.arcs)

    def subgraph(self, vertices: Iterable[int]) -> "Digraph":
        """Induced subgraph, relabelled to ``1..k`` in increasing vertex order."""
        keep = sorted(set(vertices))
        relabel = {v: k + 1 for k, v in enumerate(keep)}
        arcs = [(relabel[t], relabel[h]) for t, h in self.arcs if t in relabel and h in relabel]
        return Digraph.from_arcs(len(keep), arcs)

    def ancestors(self, i: int) -> tuple[int, ...]:
        """All vertices with a directed path to ``i`` (``i`` excluded)."""
        seen: set[int] = set()
        stack = list(self.in_neighbours(i))
        while stack:
            v = stack.pop()
            if v in seen or v == i:
                continue
            seen.add(v)
            stack.extend(self.in_neighbours(v))
        return tuple(sorted(seen))

    def to_dict(self) -> dict:
        return {"s": self.num_vertices, "arcs": [list(a) for a in self.sorted_arcs()]}

    @classmethod
    def from_dict(cls, data: dict) -> "Digraph":
        try:
            return cls.from_arcs(int(data["s"]), data.get("arcs", []))
        except KeyError as exc:
            raise ValueError(f"digraph config is missing field {exc}") from None


@dataclass(frozen=True)
class Condensation:
    """Quotient of a digraph by its strong components.

    ``components[k]`` is the vertex set of condensed vertex ``k + 1``; ``arcs``
    link condensed vertices (1-based) and ``topo_order`` lists them in an order
    where every arc tail precedes its head.
    """

    components: tuple[frozenset, ...]
    arcs: frozenset
    topo_order: tuple[int, ...]

    def graph(self) -> Digraph:
        return Digraph(len(self.components), self.arcs)

    def component_of(self, vertex: int) -> int:
        for k, comp in enumerate(self.components, start=1):
            if vertex in comp:
                return k
        raise KeyError(vertex)

    def nontrivial(self) -> list[frozenset]:
        return [c for c in self.components if len(c) > 1]


def topological_sort(g: Digraph) -> tuple[int, ...] | None:
    """Kahn's algorithm with smallest-index tie breaking.

    Returns ``None`` when ``g`` contains a directed cycle.
    """
    indeg = {v: 0 for v in g.vertices}
    succ: dict[int, list[int]] = {v: [] for v in g.vertices}
    for tail, head in g.arcs:
        indeg[head] += 1
        succ[tail].append(head)
    ready = [v for v in g.vertices if indeg[v] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        v = heapq.heappop(ready)
        order.append(v)
        for w in succ[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                heapq.heappush(ready, w)
    if len(order) != g.num_vertices:
        return None
    return tuple(order)


def require_topological_sort(g: Digraph) -> tuple[int, ...]:
    order = topological_sort(g)
    if order is None:
        raise CycleDetected("digraph contains a directed cycle")
    return order


def strong_components(g: Digraph) -> list[frozenset]:
    """Tarjan's algorithm, iterative so deep graphs do not hit the recursion limit.

    Components are returned sorted by their smallest vertex.
    """
    succ = {v: g.out_neighbours(v) for v in g.vertices}
    index: dict[int, int] = {}
    low: dict[int, int] = {}
    on_stack: set[int] = set()
    stack: list[int] = []
    out: list[frozenset] = []
    counter = 0

    for root in g.vertices:
        if root in index:
            continue
        work = [(root, 0)]
        while work:
            v, pos = work.pop()
            if pos == 0:
                index[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack.add(v)
            nbrs = succ[v]
            descended = False
            while pos < len(nbrs):
                w = nbrs[pos]
                pos += 1
                if w not in index:
                    work.append((v, pos))
                    work.append((w, 0))
                    descended = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            if descended:
                continue
            if low[v] == index[v]:
                comp = set()
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.add(w)
                    if w == v:
                        break
                out.append(frozenset(comp))
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
    return sorted(out, key=min)


def condensation(g: Digraph) -> Condensation:
    comps = strong_components(g)
    label = {}
    for k, comp in enumerate(comps, start=1):
        for v in comp:
            label[v] = k
    arcs = frozenset((label[t], label[h]) for t, h in g.arcs if label[t] != label[h])
    order = topological_sort(Digraph(len(comps), arcs))
    assert order is not None, "condensation must be acyclic"
    return Condensation(tuple(comps), arcs, order)


def has_vertex_shared_by_cycles(g: Digraph) -> bool:
    """True iff some vertex lies on two distinct directed cycles.

    A strong component contains no shared vertex exactly when it is a single
    vertex or a single cycle, i.e. every member has one in- and one
    out-neighbour inside the component.
    """
    for comp in strong_components(g):
        if len(comp) == 1:
            continue
        for v in comp:
            ins = sum(1 for u in g.in_neighbours(v) if u in comp)
            outs = sum(1 for w in g.out_neighbours(v) if w in comp)
            if ins != 1 or outs != 1:
                return True
    return False


def cycle_order(g: Digraph, component: Iterable[int]) -> tuple[int, ...]:
    """Arrange a single-cycle strong component along its arcs.

    Starts at the smallest vertex; each entry is the in-neighbour of the next.
    """
    comp = set(component)
    start = min(comp)
    seq = [start]
    while True:
        nxt = [w for w in g.out_neighbours(seq[-1]) if w in comp]
        if len(nxt) != 1:
            raise ValueError("component is not a single directed cycle")
        if nxt[0] == start:
            break
        seq.append(nxt[0])
    if len(seq) != len(comp):
        raise ValueError("component is not a single directed cycle")
    return tuple(seq)
