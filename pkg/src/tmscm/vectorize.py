"""Flattening between node-indexed vectors and flat coordinates.

A vectorization maps the nested index (node i, within-node coordinate j)
to a flat position so that each node occupies a contiguous block and
blocks follow the causal order. Flat indices are 1-based in the public
index helpers, mirroring the usual mathematical convention; block slices
and arrays are 0-based internally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OrderMismatch, ShapeMismatch, UnknownNode
from .graph import CausalGraph


@dataclass(frozen=True)
class Vectorization:
    graph: CausalGraph
    order: tuple[str, ...]
    offsets: dict[str, int]  # 0-based start of each node block
    dim: int

    def block(self, node: str) -> slice:
        if node not in self.offsets:
            raise UnknownNode(f"unknown node {node!r}")
        start = self.offsets[node]
        return slice(start, start + self.graph.dims[node])

    def iota(self, node: str, j: int) -> int:
        """1-based flat index of coordinate j (1-based) of a node."""
        d = self.graph.dims[node]
        if not 1 <= j <= d:
            raise ShapeMismatch(f"coordinate {j} outside 1..{d} for node {node!r}")
        return self.offsets[node] + j

    def inverse(self, t: int) -> tuple[str, int]:
        """Node and 1-based within-node coordinate of a 1-based flat index."""
        if not 1 <= t <= self.dim:
            raise ShapeMismatch(f"flat index {t} outside 1..{self.dim}")
        for node in self.order:
            start = self.offsets[node]
            if start < t <= start + self.graph.dims[node]:
                return node, t - start
        raise AssertionError("unreachable")

    def node_of_flat(self, t0: int) -> str:
        """Node owning 0-based flat coordinate t0."""
        node, _ = self.inverse(t0 + 1)
        return node

    def flatten(self, values: dict[str, np.ndarray]) -> np.ndarray:
        """Concatenate node vectors into a flat array; inverse of unflatten."""
        parts = []
        for node in self.order:
            v = np.asarray(values[node], dtype=np.float64)
            d = self.graph.dims[node]
            if v.shape[-1] != d:
                raise ShapeMismatch(
                    f"node {node!r} expects dim {d}, got shape {v.shape}"
                )
            parts.append(v)
        return np.concatenate(parts, axis=-1)

    def unflatten(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape[-1] != self.dim:
            raise ShapeMismatch(f"expected last axis {self.dim}, got {flat.shape}")
        return {node: flat[..., self.block(node)] for node in self.order}

    def summary(self) -> dict:
        """Order and offsets, embedded in dataset and checkpoint metadata."""
        return {
            "order": list(self.order),
            "offsets": {n: self.offsets[n] for n in self.order},
            "dim": self.dim,
        }


def build_vectorization(graph: CausalGraph, order: list[str] | None = None) -> Vectorization:
    """Prefix-sum offsets over a causal order of the graph.

    Raises OrderMismatch if the given order violates parent precedence.
    """
    if order is None:
        order = list(graph.order)
    else:
        rank = {n: k for k, n in enumerate(order)}
        if sorted(order) != sorted(graph.nodes):
            raise OrderMismatch("order must list every node exactly once")
        for n in graph.nodes:
            for p in graph.parents[n]:
                if rank[p] >= rank[n]:
                    raise OrderMismatch(f"order places parent {p!r} after child {n!r}")
    offsets: dict[str, int] = {}
    acc = 0
    for n in order:
        offsets[n] = acc
        acc += graph.dims[n]
    return Vectorization(graph=graph, order=tuple(order), offsets=offsets, dim=acc)
