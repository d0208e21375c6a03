"""Causal graphs over vector-valued variables.

Nodes are string ids, each carrying a dimension d_i >= 1 and a parent set.
A graph stores a causal order: a linear extension of the ancestor partial
order, with ties broken by ascending node id for reproducibility.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

from .errors import CycleDetected, OrderMismatch, UnknownNode


def topological_order(parents: dict[str, set[str]]) -> list[str]:
    """Kahn's algorithm with a min-heap so ties break by ascending node id.

    Raises CycleDetected if the parent relation is cyclic.
    """
    nodes = set(parents)
    for ps in parents.values():
        for p in ps:
            if p not in nodes:
                raise UnknownNode(f"parent {p!r} is not a declared node")
    indeg = {n: len(ps) for n, ps in parents.items()}
    children: dict[str, list[str]] = {n: [] for n in nodes}
    for n, ps in parents.items():
        for p in ps:
            children[p].append(n)
    ready = [n for n, k in indeg.items() if k == 0]
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        n = heapq.heappop(ready)
        order.append(n)
        for c in children[n]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(ready, c)
    if len(order) != len(nodes):
        raise CycleDetected("parent relation contains a cycle")
    return order


@dataclass(frozen=True)
class CausalGraph:
    """Immutable causal graph: nodes, per-node dims, parents, causal order."""

    nodes: tuple[str, ...]
    dims: dict[str, int]
    parents: dict[str, frozenset[str]]
    order: tuple[str, ...]
    _rank: dict[str, int] = field(repr=False, default_factory=dict)

    @staticmethod
    def create(
        dims: dict[str, int],
        parents: dict[str, set[str]] | None = None,
        order: list[str] | None = None,
    ) -> "CausalGraph":
        """Build a validated graph; the order defaults to the canonical topological order."""
        parents = {n: set(parents.get(n, set())) if parents else set() for n in dims}
        for n, d in dims.items():
            if d < 1:
                raise ValueError(f"dim of node {n!r} must be >= 1, got {d}")
        canonical = topological_order(parents)
        if order is None:
            order = canonical
        else:
            if sorted(order) != sorted(dims):
                raise OrderMismatch("order must list every node exactly once")
            rank = {n: k for k, n in enumerate(order)}
            for n, ps in parents.items():
                for p in ps:
                    if rank[p] >= rank[n]:
                        raise OrderMismatch(
                            f"order places parent {p!r} after child {n!r}"
                        )
        g = CausalGraph(
            nodes=tuple(sorted(dims)),
            dims=dict(dims),
            parents={n: frozenset(ps) for n, ps in parents.items()},
            order=tuple(order),
        )
        object.__setattr__(g, "_rank", {n: k for k, n in enumerate(g.order)})
        return g

    def rank(self, node: str) -> int:
        return self._rank[node]

    def check_node(self, node: str) -> None:
        if node not in self.dims:
            raise UnknownNode(f"unknown node {node!r}")

    def sorted_parents(self, node: str) -> tuple[str, ...]:
        """Parents of a node, ordered by the causal order."""
        return tuple(sorted(self.parents[node], key=self.rank))

    def ancestors(self, node: str) -> set[str]:
        seen: set[str] = set()
        stack = list(self.parents[node])
        while stack:
            p = stack.pop()
            if p not in seen:
                seen.add(p)
                stack.extend(self.parents[p])
        return seen

    def diameter(self) -> int:
        """Length in edges of the longest directed path."""
        depth = {n: 0 for n in self.nodes}
        for n in self.order:
            for p in self.parents[n]:
                depth[n] = max(depth[n], depth[p] + 1)
        return max(depth.values(), default=0)

    @property
    def total_dim(self) -> int:
        return sum(self.dims.values())

    def to_json_dict(self) -> dict:
        return {
            "nodes": [
                {"id": n, "dim": self.dims[n], "parents": sorted(self.parents[n])}
                for n in self.order
            ],
            "order": list(self.order),
        }

    @staticmethod
    def from_json_dict(obj: dict) -> "CausalGraph":
        dims = {rec["id"]: int(rec["dim"]) for rec in obj["nodes"]}
        parents = {rec["id"]: set(rec["parents"]) for rec in obj["nodes"]}
        return CausalGraph.create(dims, parents, list(obj["order"]))


def full_order_graph(dims: dict[str, int], order: list[str]) -> CausalGraph:
    """Graph where pa(i) is the entire strict prefix of the order.

    Used when only a causal order is known: conditioning on all predecessors
    avoids introducing independence assumptions the order does not imply.
    """
    parents = {n: set(order[:k]) for k, n in enumerate(order)}
    return CausalGraph.create(dims, parents, order)
