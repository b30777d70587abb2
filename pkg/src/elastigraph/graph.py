"""Elastic graphs: edges and selected k-star families with elasticity moduli.

The embedding energy splits into an edge-stretching part (sum of lambda_i
times squared edge lengths) and a star-bending part (sum of mu_kj times the
squared deviation of each star center from the mean of its leaves). A map is
pluriharmonic when every selected star has zero bending deviation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

__all__ = [
    "Edge",
    "Star",
    "Moduli",
    "ElasticGraph",
    "ComplexityBudget",
    "EnergyBreakdown",
    "VertexCountComplexity",
    "BranchComplexity",
    "energy",
    "is_pluriharmonic",
    "sc",
    "build_grid",
    "build_chain",
    "sync_primitive_stars",
    "check_embedding",
    "graph_to_json",
    "graph_from_json",
    "adjacency",
    "degrees",
    "is_tree",
]


@dataclass(frozen=True)
class Edge:
    u: int
    v: int
    lam: float  # stretching modulus, > 0


@dataclass(frozen=True)
class Star:
    """k-star: a center vertex plus k >= 2 leaves, all adjacent to the center."""

    center: int
    leaves: tuple[int, ...]
    mu: float  # bending modulus, > 0

    @property
    def order(self) -> int:
        return len(self.leaves)


@dataclass(frozen=True)
class Moduli:
    """Default elasticity schedule: every edge gets lambda0, a k-star gets mu0 * k."""

    lambda0: float = 0.01
    mu0: float = 0.1

    def edge(self) -> float:
        return self.lambda0

    def star(self, k: int) -> float:
        return self.mu0 * k


@dataclass(frozen=True)
class ElasticGraph:
    """Simple undirected graph with selected k-star families.

    When primitive is True the star list is exactly one star per vertex of
    degree >= 2 whose leaves are all neighbours of that vertex.
    """

    vertex_count: int
    edges: tuple[Edge, ...]
    stars: tuple[Star, ...] = ()
    primitive: bool = False

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "stars", tuple(self.stars))
        if self.vertex_count < 1:
            raise ValueError("graph needs at least one vertex")
        seen = set()
        for e in self.edges:
            if not (0 <= e.u < self.vertex_count and 0 <= e.v < self.vertex_count):
                raise ValueError(f"edge ({e.u},{e.v}) references a missing vertex")
            if e.u == e.v:
                raise ValueError(f"self-loop at vertex {e.u}")
            key = (min(e.u, e.v), max(e.u, e.v))
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen.add(key)
            if not e.lam > 0:
                raise ValueError(f"edge {key} has non-positive modulus {e.lam}")
        adj = adjacency(self)
        for s in self.stars:
            if s.order < 2:
                raise ValueError(f"star at {s.center} has order {s.order} < 2")
            if len(set(s.leaves)) != s.order:
                raise ValueError(f"star at {s.center} repeats a leaf")
            for leaf in s.leaves:
                if leaf not in adj[s.center]:
                    raise ValueError(f"star leaf {leaf} is not adjacent to center {s.center}")
            if not s.mu > 0:
                raise ValueError(f"star at {s.center} has non-positive modulus {s.mu}")
        if self.primitive:
            expected = {(v, frozenset(adj[v])) for v in range(self.vertex_count) if len(adj[v]) >= 2}
            actual = {(s.center, frozenset(s.leaves)) for s in self.stars}
            if expected != actual or len(self.stars) != len(expected):
                raise ValueError("primitive graph must select exactly one all-neighbour star per non-terminal vertex")

    @property
    def edge_count(self) -> int:
        return len(self.edges)


@dataclass(frozen=True)
class ComplexityBudget:
    """Ceilings for tree growing: structural complexity and grammar applications.

    Zero is allowed for both (a zero cc_max returns the optimized seed graph;
    a zero sc_max with the branch-count form forbids any 3-star).
    """

    sc_max: float
    cc_max: int

    def __post_init__(self):
        if self.sc_max < 0:
            raise ValueError("sc_max must be non-negative")
        if self.cc_max < 0:
            raise ValueError("cc_max must be non-negative")


def adjacency(graph: ElasticGraph) -> list[list[int]]:
    """Sorted neighbour lists per vertex."""
    adj = [[] for _ in range(graph.vertex_count)]
    for e in graph.edges:
        adj[e.u].append(e.v)
        adj[e.v].append(e.u)
    return [sorted(a) for a in adj]


def degrees(graph: ElasticGraph) -> list[int]:
    deg = [0] * graph.vertex_count
    for e in graph.edges:
        deg[e.u] += 1
        deg[e.v] += 1
    return deg


def is_tree(graph: ElasticGraph) -> bool:
    """Connected and acyclic."""
    if graph.edge_count != graph.vertex_count - 1:
        return False
    adj = adjacency(graph)
    seen = {0}
    stack = [0]
    while stack:
        v = stack.pop()
        for u in adj[v]:
            if u not in seen:
                seen.add(u)
                stack.append(u)
    return len(seen) == graph.vertex_count


def check_embedding(graph: ElasticGraph, positions: np.ndarray) -> np.ndarray:
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    if positions.shape[0] != graph.vertex_count:
        raise ValueError(f"{positions.shape[0]} position rows for {graph.vertex_count} vertices")
    if not np.all(np.isfinite(positions)):
        raise ValueError("embedding contains non-finite positions")
    return positions


class EnergyBreakdown(NamedTuple):
    u_edges: float
    u_stars: float
    u_total: float


def energy(graph: ElasticGraph, positions: np.ndarray) -> EnergyBreakdown:
    """Elastic energy of an embedding: stretching term, bending term, total."""
    positions = check_embedding(graph, positions)
    u_edges = 0.0
    for e in graph.edges:
        d = positions[e.u] - positions[e.v]
        u_edges += e.lam * float(d @ d)
    u_stars = 0.0
    for s in graph.stars:
        d = positions[s.center] - positions[list(s.leaves)].mean(axis=0)
        u_stars += s.mu * float(d @ d)
    return EnergyBreakdown(u_edges, u_stars, u_edges + u_stars)


def is_pluriharmonic(graph: ElasticGraph, positions: np.ndarray, tol: float) -> bool:
    """True iff every selected star center sits within tol of its leaf mean."""
    if tol < 0:
        raise ValueError("tol must be non-negative")
    positions = check_embedding(graph, positions)
    for s in graph.stars:
        d = positions[s.center] - positions[list(s.leaves)].mean(axis=0)
        if np.linalg.norm(d) > tol:
            return False
    return True


@dataclass(frozen=True)
class VertexCountComplexity:
    """Structural complexity = number of vertices."""

    def value(self, graph: ElasticGraph) -> float:
        return float(graph.vertex_count)


@dataclass(frozen=True)
class BranchComplexity:
    """Structural complexity = number of 3-stars, infinite when a star of
    order >= 4 exists or the 3-star count exceeds b_max."""

    b_max: int

    def value(self, graph: ElasticGraph) -> float:
        n3 = sum(1 for s in graph.stars if s.order == 3)
        n_high = sum(1 for s in graph.stars if s.order >= 4)
        if n3 <= self.b_max and n_high == 0:
            return float(n3)
        return math.inf


def sc(graph: ElasticGraph, form: VertexCountComplexity | BranchComplexity) -> float:
    """Structural complexity of the graph under the chosen form (may be inf)."""
    return form.value(graph)


def build_grid(rows: int, cols: int, lam: float, mu: float) -> ElasticGraph:
    """rows x cols rectangular net with all horizontal and vertical 2-stars.

    Vertex (r, c) has index r * cols + c. Not primitive: interior vertices
    carry two 2-stars, one per lattice direction.
    """
    if rows < 2 or cols < 2:
        raise ValueError(f"grid needs at least 2 rows and 2 columns, got {rows}x{cols}")
    idx = lambda r, c: r * cols + c
    edges = []
    for r in range(rows):
        for c in range(cols - 1):
            edges.append(Edge(idx(r, c), idx(r, c + 1), lam))
    for r in range(rows - 1):
        for c in range(cols):
            edges.append(Edge(idx(r, c), idx(r + 1, c), lam))
    stars = []
    for r in range(rows):
        for c in range(1, cols - 1):
            stars.append(Star(idx(r, c), (idx(r, c - 1), idx(r, c + 1)), mu))
    for c in range(cols):
        for r in range(1, rows - 1):
            stars.append(Star(idx(r, c), (idx(r - 1, c), idx(r + 1, c)), mu))
    return ElasticGraph(rows * cols, tuple(edges), tuple(stars), primitive=False)


def build_chain(n_vertices: int, lam: float, mu_of_k: Callable[[int], float]) -> ElasticGraph:
    """Primitive path of n_vertices: one 2-star per interior vertex."""
    if n_vertices < 2:
        raise ValueError("chain needs at least 2 vertices")
    edges = tuple(Edge(i, i + 1, lam) for i in range(n_vertices - 1))
    bare = ElasticGraph(n_vertices, edges, (), primitive=False)
    return sync_primitive_stars(bare, mu_of_k)


def sync_primitive_stars(graph: ElasticGraph, mu_of_k: Callable[[int], float]) -> ElasticGraph:
    """Rebuild the star list from the topology: one star per vertex of degree
    >= 2 covering all its neighbours, with modulus mu_of_k(k). Returns a
    primitive graph; idempotent for graphs that are already primitive."""
    adj = adjacency(graph)
    stars = tuple(
        Star(v, tuple(adj[v]), mu_of_k(len(adj[v])))
        for v in range(graph.vertex_count)
        if len(adj[v]) >= 2
    )
    return ElasticGraph(graph.vertex_count, graph.edges, stars, primitive=True)


def graph_to_json(graph: ElasticGraph, positions: np.ndarray | None = None) -> str:
    """Serialize graph (+ optional embedding) to the exchange JSON format."""
    doc = {
        "vertices": graph.vertex_count,
        "edges": [[e.u, e.v, e.lam] for e in graph.edges],
        "stars": [{"center": s.center, "leaves": list(s.leaves), "mu": s.mu} for s in graph.stars],
        "positions": check_embedding(graph, positions).tolist() if positions is not None else None,
    }
    return json.dumps(doc)


def graph_from_json(text: str) -> tuple[ElasticGraph, np.ndarray | None]:
    """Inverse of graph_to_json. Primitivity is inferred from the star list."""
    doc = json.loads(text)
    edges = tuple(Edge(int(u), int(v), float(lam)) for u, v, lam in doc["edges"])
    stars = tuple(
        Star(int(s["center"]), tuple(int(x) for x in s["leaves"]), float(s["mu"]))
        for s in doc["stars"]
    )
    graph = ElasticGraph(int(doc["vertices"]), edges, stars, primitive=False)
    adj = adjacency(graph)
    expected = {(v, frozenset(adj[v])) for v in range(graph.vertex_count) if len(adj[v]) >= 2}
    actual = {(s.center, frozenset(s.leaves)) for s in stars}
    if expected == actual and len(stars) == len(expected):
        graph = ElasticGraph(graph.vertex_count, edges, stars, primitive=True)
    positions = None
    if doc.get("positions") is not None:
        positions = np.asarray(doc["positions"], dtype=float)
    return graph, positions
