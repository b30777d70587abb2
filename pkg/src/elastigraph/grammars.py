"""Graph-grammar transformations on primitive elastic graphs and the
greedy principal-tree construction built on them.

The grow grammar adds a pendant node to any vertex or bisects any edge; the
shrink grammar removes a leaf or contracts an edge (merging the incident
stars). Tree growing repeatedly enumerates every applicable operation,
filters by a structural-complexity ceiling, optimizes each survivor and
substitutes the one with the lowest functional value.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .graph import (
    BranchComplexity,
    ComplexityBudget,
    Edge,
    ElasticGraph,
    Moduli,
    VertexCountComplexity,
    adjacency,
    build_chain,
    degrees,
    energy,
    is_tree,
    sc,
    sync_primitive_stars,
)
from .optimizer import (
    DegenerateSystemError,
    FitConfig,
    FitResult,
    fit,
    init_on_pc_segment,
    partition,
)

__all__ = [
    "GrammarOp",
    "GrammarSequence",
    "ConstructionLog",
    "GrowResult",
    "InapplicableOpError",
    "GROW_GRAMMAR",
    "SHRINK_GRAMMAR",
    "apply",
    "extend_positions",
    "enumerate_candidates",
    "grow_tree",
    "geometric_complexity",
    "construction_log_dsv",
]

GROW_GRAMMAR = ("add_node", "bisect_edge")
SHRINK_GRAMMAR = ("remove_leaf", "remove_edge")
_KNOWN_KINDS = frozenset(GROW_GRAMMAR + SHRINK_GRAMMAR)


class InapplicableOpError(ValueError):
    """The operation's site does not exist or has the wrong degree."""


@dataclass(frozen=True)
class GrammarOp:
    """One elementary transformation: kind plus its site.

    add_node: site = (vertex,); bisect_edge / remove_edge: site = (u, v) for
    an existing edge; remove_leaf: site = (vertex,) of degree 1.
    """

    kind: str
    site: tuple[int, ...]

    def __post_init__(self):
        if self.kind not in _KNOWN_KINDS:
            raise ValueError(f"unknown grammar op kind {self.kind!r}")
        object.__setattr__(self, "site", tuple(int(x) for x in self.site))


@dataclass(frozen=True)
class GrammarSequence:
    """Cycle of grammars applied phase by phase (default grow, grow, shrink)."""

    phases: tuple[tuple[str, ...], ...] = (GROW_GRAMMAR, GROW_GRAMMAR, SHRINK_GRAMMAR)

    def __post_init__(self):
        if not self.phases:
            raise ValueError("grammar sequence must be non-empty")

    def kinds_for(self, phase: int) -> tuple[str, ...]:
        return self.phases[phase % len(self.phases)]


@dataclass
class ConstructionLog:
    """Applied operations in order; cc counts actual applications."""

    entries: list[tuple[int, GrammarOp, float]] = field(default_factory=list)

    @property
    def cc(self) -> int:
        return len(self.entries)

    def record(self, phase: int, op: GrammarOp, functional: float) -> None:
        self.entries.append((phase, op, functional))


@dataclass
class GrowResult:
    graph: ElasticGraph
    positions: np.ndarray
    log: ConstructionLog
    fit: FitResult


def _find_edge(graph: ElasticGraph, u: int, v: int) -> Edge:
    for e in graph.edges:
        if {e.u, e.v} == {u, v}:
            return e
    raise InapplicableOpError(f"edge ({u},{v}) does not exist")


def apply(graph: ElasticGraph, op: GrammarOp, moduli: Moduli) -> ElasticGraph:
    """Transform the topology and re-derive the star list (the graph stays
    primitive). Vertex indices above a removed vertex shift down by one."""
    if not graph.primitive:
        raise ValueError("grammar operations apply to primitive elastic graphs only")
    nv = graph.vertex_count
    if op.kind == "add_node":
        (v,) = op.site
        if not 0 <= v < nv:
            raise InapplicableOpError(f"vertex {v} does not exist")
        edges = graph.edges + (Edge(v, nv, moduli.edge()),)
        return sync_primitive_stars(ElasticGraph(nv + 1, edges), moduli.star)
    if op.kind == "bisect_edge":
        u, v = op.site
        old = _find_edge(graph, u, v)
        edges = tuple(e for e in graph.edges if e is not old)
        edges += (Edge(u, nv, old.lam), Edge(nv, v, old.lam))
        return sync_primitive_stars(ElasticGraph(nv + 1, edges), moduli.star)
    if op.kind == "remove_leaf":
        (v,) = op.site
        if not 0 <= v < nv:
            raise InapplicableOpError(f"vertex {v} does not exist")
        if degrees(graph)[v] != 1:
            raise InapplicableOpError(f"vertex {v} has degree {degrees(graph)[v]}, not a leaf")
        keep = [e for e in graph.edges if v not in (e.u, e.v)]
        shift = lambda x: x - 1 if x > v else x
        edges = tuple(Edge(shift(e.u), shift(e.v), e.lam) for e in keep)
        return sync_primitive_stars(ElasticGraph(nv - 1, edges), moduli.star)
    if op.kind == "remove_edge":
        u, v = op.site
        _find_edge(graph, u, v)
        kept, gone = (u, v) if u < v else (v, u)
        edges = []
        seen = set()
        for e in graph.edges:
            if {e.u, e.v} == {u, v}:
                continue
            a = kept if e.u == gone else e.u
            b = kept if e.v == gone else e.v
            key = (min(a, b), max(a, b))
            if key in seen:
                continue  # cannot happen on trees; guards general graphs
            seen.add(key)
            edges.append(Edge(a, b, e.lam))
        shift = lambda x: x - 1 if x > gone else x
        edges = tuple(Edge(shift(e.u), shift(e.v), e.lam) for e in edges)
        return sync_primitive_stars(ElasticGraph(nv - 1, edges), moduli.star)
    raise ValueError(f"unknown grammar op kind {op.kind!r}")


def extend_positions(
    graph: ElasticGraph,
    positions: np.ndarray,
    op: GrammarOp,
    data: Dataset | None = None,
    part=None,
) -> np.ndarray:
    """Warm-start embedding for the transformed graph.

    add_node extrapolates past the anchor vertex (2 phi(v) minus the mean of
    its neighbours) so the enlarged star starts with zero bending energy;
    bisect_edge uses the edge midpoint; removals drop the vanished row.
    """
    nv = graph.vertex_count
    if op.kind == "add_node":
        (v,) = op.site
        nbrs = adjacency(graph)[v]
        if nbrs:
            z = 2.0 * positions[v] - positions[nbrs].mean(axis=0)
        elif data is not None and part is not None and part.cell_weight[v] > 0:
            cell_mean = part.cell_weighted_sum[v] / part.cell_weight[v]
            z = positions[v] + 0.1 * (cell_mean - positions[v])
        else:
            z = positions[v].copy()
        return np.vstack([positions, z])
    if op.kind == "bisect_edge":
        u, v = op.site
        return np.vstack([positions, 0.5 * (positions[u] + positions[v])])
    if op.kind == "remove_leaf":
        (v,) = op.site
        return np.delete(positions, v, axis=0)
    if op.kind == "remove_edge":
        u, v = op.site
        return np.delete(positions, max(u, v), axis=0)
    raise ValueError(f"unknown grammar op kind {op.kind!r}")


def enumerate_candidates(
    graph: ElasticGraph, grammar: tuple[str, ...], moduli: Moduli
) -> list[tuple[GrammarOp, ElasticGraph]]:
    """Every applicable (kind, site) pair in deterministic order: kinds as
    given, sites by ascending vertex / stored edge order. No isomorphism
    deduplication; distinct sites are distinct candidates."""
    out = []
    deg = degrees(graph)
    for kind in grammar:
        if kind == "add_node":
            sites = [(v,) for v in range(graph.vertex_count)]
        elif kind in ("bisect_edge", "remove_edge"):
            sites = [(e.u, e.v) for e in graph.edges]
        elif kind == "remove_leaf":
            sites = [(v,) for v in range(graph.vertex_count) if deg[v] == 1]
        else:
            raise ValueError(f"unknown grammar op kind {kind!r}")
        for site in sites:
            op = GrammarOp(kind, site)
            try:
                out.append((op, apply(graph, op, moduli)))
            except InapplicableOpError:
                continue
    return out


def geometric_complexity(graph: ElasticGraph, positions: np.ndarray) -> float:
    """Deviation from the ideal pluriharmonic configuration: total elastic energy."""
    return energy(graph, positions).u_total


def grow_tree(
    data: Dataset,
    budget: ComplexityBudget,
    seq: GrammarSequence | None = None,
    moduli: Moduli | None = None,
    fit_cfg: FitConfig | None = None,
    sc_form: VertexCountComplexity | BranchComplexity | None = None,
    candidate_iterations: int = 10,
) -> GrowResult:
    """Greedy principal-tree construction.

    Starts from a 2-vertex seed on the principal-line segment. Each phase
    enumerates the phase grammar's candidates, keeps those within the
    structural ceiling, runs a capped optimization on each from a warm start
    and substitutes the functional minimizer (earliest candidate on ties),
    followed by a full fit. Stops when a phase has no permissible candidate,
    when every candidate fails to optimize, or when the application count
    reaches the construction ceiling. The result is always a tree.
    """
    seq = seq or GrammarSequence()
    moduli = moduli or Moduli()
    fit_cfg = fit_cfg or FitConfig()
    sc_form = sc_form or VertexCountComplexity()
    cand_cfg = FitConfig(max_iterations=candidate_iterations, rel_tolerance=fit_cfg.rel_tolerance)

    graph = build_chain(2, moduli.edge(), moduli.star)
    positions = init_on_pc_segment(data, graph)
    best_fit = fit(data, graph, positions, fit_cfg)
    positions = best_fit.positions
    log = ConstructionLog()

    phase = 0
    while log.cc < budget.cc_max:
        candidates = enumerate_candidates(graph, seq.kinds_for(phase), moduli)
        permissible = [(op, g) for op, g in candidates if sc(g, sc_form) <= budget.sc_max]
        if not permissible:
            break
        chosen = None
        for op, g in permissible:
            warm = extend_positions(graph, positions, op, data, best_fit.partition)
            try:
                trial = fit(data, g, warm, cand_cfg)
            except DegenerateSystemError as exc:
                warnings.warn(f"candidate {op.kind}{op.site} failed: {exc}", stacklevel=2)
                continue
            value = trial.history[-1]
            if chosen is None or value < chosen[0]:
                chosen = (value, op, g, trial)
        if chosen is None:
            break
        _, op, graph, trial = chosen
        best_fit = fit(data, graph, trial.positions, fit_cfg)
        positions = best_fit.positions
        log.record(phase, op, best_fit.history[-1])
        if not is_tree(graph):
            raise RuntimeError(f"grammar application {op} produced a non-tree")
        phase += 1
    return GrowResult(graph=graph, positions=positions, log=log, fit=best_fit)


def construction_log_dsv(log: ConstructionLog, delimiter: str = ",") -> str:
    """One line per application: phase, op kind, site, functional value."""
    lines = [delimiter.join(("phase", "op", "site", "functional"))]
    for phase, op, value in log.entries:
        site = "-".join(str(x) for x in op.site)
        lines.append(delimiter.join((str(phase), op.kind, site, repr(value))))
    return "\n".join(lines) + "\n"
