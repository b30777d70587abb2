"""Embedding optimization: alternate nearest-vertex partitioning with an
exact sparse quadratic solve until the approximation-plus-elasticity
functional stops decreasing. Also carries the classic self-organizing-map
update rule as a baseline."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dataset import Dataset, pca, project
from .graph import ElasticGraph, adjacency, check_embedding, energy

__all__ = [
    "Partition",
    "FitConfig",
    "FitResult",
    "SomConfig",
    "DegenerateSystemError",
    "partition",
    "msd",
    "solve_embedding",
    "fit",
    "fit_trace_dsv",
    "init_on_pc_segment",
    "init_chain_on_pc_segment",
    "init_grid_on_plane",
    "project_piecewise_linear",
    "segment_sq_distances",
    "som_fit",
    "linear_step_schedule",
    "gaussian_cutting",
]

# Direct sparse factorization below this size, diagonally preconditioned CG above.
_DIRECT_SOLVE_MAX_VERTICES = 10_000


class DegenerateSystemError(RuntimeError):
    """The solve matrix is singular, e.g. a disconnected part of the graph owns no data."""


@dataclass
class Partition:
    """Assignment of each data point to its nearest graph vertex (its taxon).

    owner : (N,) vertex index per point
    cell_weight : (V,) total data weight per vertex
    cell_weighted_sum : (V, m) sum of weight * point over each cell
    """

    owner: np.ndarray
    cell_weight: np.ndarray
    cell_weighted_sum: np.ndarray


@dataclass
class FitConfig:
    max_iterations: int = 100
    rel_tolerance: float = 1e-5

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.rel_tolerance > 0:
            raise ValueError("rel_tolerance must be positive")


@dataclass
class FitResult:
    positions: np.ndarray
    partition: Partition
    history: list[float]  # functional (msd + elastic energy) per recorded iteration
    trace: list[tuple[int, float, float, float, float]]  # (iter, msd, u_edges, u_stars, total)


def partition(data: Dataset, positions: np.ndarray, block: int = 2048) -> Partition:
    """Own each point by its nearest vertex; ties go to the lowest vertex index."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    n = data.n_points
    nv = positions.shape[0]
    owner = np.empty(n, dtype=np.int64)
    for start in range(0, n, block):
        chunk = data.points[start : start + block]
        diff = chunk[:, None, :] - positions[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        owner[start : start + block] = np.argmin(d2, axis=1)
    cell_weight = np.bincount(owner, weights=data.weights, minlength=nv)
    cell_weighted_sum = np.zeros((nv, data.n_features))
    np.add.at(cell_weighted_sum, owner, data.weights[:, None] * data.points)
    return Partition(owner=owner, cell_weight=cell_weight, cell_weighted_sum=cell_weighted_sum)


def msd(data: Dataset, positions: np.ndarray, part: Partition) -> float:
    """Weighted mean squared distance of the points to their owning vertices."""
    diff = data.points - positions[part.owner]
    return float(data.weights @ np.einsum("ij,ij->i", diff, diff) / data.total_weight)


def _assemble_system(data: Dataset, graph: ElasticGraph, part: Partition):
    nv = graph.vertex_count
    w_total = data.total_weight
    rows, cols, vals = [], [], []

    diag = part.cell_weight / w_total
    rows.extend(range(nv))
    cols.extend(range(nv))
    vals.extend(diag.tolist())

    for e in graph.edges:
        rows.extend((e.u, e.v, e.u, e.v))
        cols.extend((e.u, e.v, e.v, e.u))
        vals.extend((e.lam, e.lam, -e.lam, -e.lam))

    for s in graph.stars:
        idx = (s.center,) + s.leaves
        coeff = np.full(len(idx), -1.0 / s.order)
        coeff[0] = 1.0
        block = s.mu * np.outer(coeff, coeff)
        for a, ia in enumerate(idx):
            for b, ib in enumerate(idx):
                rows.append(ia)
                cols.append(ib)
                vals.append(block[a, b])

    a_mat = sp.csc_matrix((vals, (rows, cols)), shape=(nv, nv))
    b_mat = part.cell_weighted_sum / w_total
    return a_mat, b_mat


def _check_solvable(data: Dataset, graph: ElasticGraph, part: Partition) -> None:
    """Every edge-connected component must own some data weight, otherwise the
    component can translate freely and the system is singular."""
    adj = adjacency(graph)
    unvisited = set(range(graph.vertex_count))
    while unvisited:
        seed = min(unvisited)
        comp = {seed}
        stack = [seed]
        while stack:
            v = stack.pop()
            for u in adj[v]:
                if u not in comp:
                    comp.add(u)
                    stack.append(u)
        unvisited -= comp
        if part.cell_weight[sorted(comp)].sum() <= 0:
            raise DegenerateSystemError(
                f"graph component containing vertex {seed} owns no data weight"
            )


def solve_embedding(data: Dataset, graph: ElasticGraph, part: Partition) -> np.ndarray:
    """Exact minimizer of the functional over positions with the partition fixed.

    One symmetric positive-definite V x V matrix is shared by all coordinates:
    the data term adds cell_weight/W on the diagonal, each edge adds the usual
    graph-Laplacian stencil scaled by lambda, and each k-star adds mu times
    the outer product of (1, -1/k, ..., -1/k) over (center, leaves). The right
    hand side is cell_weighted_sum/W.
    """
    _check_solvable(data, graph, part)
    a_mat, b_mat = _assemble_system(data, graph, part)
    nv = graph.vertex_count
    try:
        if nv <= _DIRECT_SOLVE_MAX_VERTICES:
            lu = spla.splu(a_mat)
            phi = lu.solve(b_mat)
        else:
            inv_diag = 1.0 / a_mat.diagonal()
            precond = spla.LinearOperator((nv, nv), matvec=lambda x: inv_diag * x)
            phi = np.empty_like(b_mat)
            for j in range(b_mat.shape[1]):
                x, info = spla.cg(a_mat, b_mat[:, j], rtol=1e-12, atol=0.0, M=precond, maxiter=20 * nv)
                if info != 0:
                    raise DegenerateSystemError(f"conjugate gradient failed to converge (info={info})")
                phi[:, j] = x
    except RuntimeError as exc:  # splu raises on exactly singular factors
        raise DegenerateSystemError(str(exc)) from exc
    if not np.all(np.isfinite(phi)):
        raise DegenerateSystemError("solver produced non-finite positions")
    return phi


def _functional(data: Dataset, graph: ElasticGraph, positions: np.ndarray, part: Partition):
    u = energy(graph, positions)
    d = msd(data, positions, part)
    return d + u.u_total, d, u


def fit(data: Dataset, graph: ElasticGraph, emb0: np.ndarray, cfg: FitConfig | None = None) -> FitResult:
    """Alternate partitioning and the exact solve until the functional's
    relative decrease falls below tolerance. The history is non-increasing:
    re-partitioning cannot increase the distance term and the solve step is
    the exact minimizer for a fixed partition."""
    cfg = cfg or FitConfig()
    positions = check_embedding(graph, emb0).copy()
    part = partition(data, positions)
    f_prev, d, u = _functional(data, graph, positions, part)
    history = [f_prev]
    trace = [(0, d, u.u_edges, u.u_stars, f_prev)]
    for it in range(1, cfg.max_iterations + 1):
        positions = solve_embedding(data, graph, part)
        part = partition(data, positions)
        f_cur, d, u = _functional(data, graph, positions, part)
        if not np.isfinite(f_cur):
            raise DegenerateSystemError("non-finite functional during fit")
        history.append(f_cur)
        trace.append((it, d, u.u_edges, u.u_stars, f_cur))
        if f_prev - f_cur < cfg.rel_tolerance * max(f_prev, 1e-30):
            break
        f_prev = f_cur
    return FitResult(positions=positions, partition=part, history=history, trace=trace)


def fit_trace_dsv(result: FitResult, delimiter: str = ",") -> str:
    """One line per iteration: iteration, msd, u_edges, u_stars, total."""
    lines = [delimiter.join(("iteration", "msd", "u_edges", "u_stars", "total"))]
    for it, d, ue, us, tot in result.trace:
        lines.append(delimiter.join((str(it), repr(d), repr(ue), repr(us), repr(tot))))
    return "\n".join(lines) + "\n"


def init_on_pc_segment(data: Dataset, graph: ElasticGraph) -> np.ndarray:
    """Place a 2-vertex seed on the first principal line so the segment spans
    every point's projection."""
    if graph.vertex_count != 2 or graph.edge_count != 1:
        raise ValueError("seed graph must have exactly 2 vertices and 1 edge")
    model = pca(data, 1)
    t = project(model, data, 1)[:, 0]
    c1 = model.components[0]
    return np.vstack([model.mean + t.min() * c1, model.mean + t.max() * c1])


def init_chain_on_pc_segment(data: Dataset, n_vertices: int) -> np.ndarray:
    """Evenly spaced chain positions along the spanning principal-line segment."""
    if n_vertices < 2:
        raise ValueError("need at least 2 vertices")
    model = pca(data, 1)
    t = project(model, data, 1)[:, 0]
    steps = np.linspace(t.min(), t.max(), n_vertices)
    return model.mean + steps[:, None] * model.components[0]


def init_grid_on_plane(data: Dataset, graph: ElasticGraph, rows: int, cols: int) -> np.ndarray:
    """Place a rows x cols net on the first principal plane, spanning the
    bounding rectangle of the projected data. Grid corners land on the
    bounding-box corners; the affine placement starts with zero star energy."""
    if graph.vertex_count != rows * cols:
        raise ValueError(f"graph has {graph.vertex_count} vertices, expected {rows * cols}")
    model = pca(data, 2)
    if model.eigenvalues[1] <= 1e-12 * model.total_variance:
        raise ValueError("data is rank-deficient: no second principal direction")
    t = project(model, data, 2)
    us = np.linspace(t[:, 0].min(), t[:, 0].max(), cols)
    vs = np.linspace(t[:, 1].min(), t[:, 1].max(), rows)
    positions = np.empty((rows * cols, data.n_features))
    for r in range(rows):
        for c in range(cols):
            positions[r * cols + c] = model.mean + us[c] * model.components[0] + vs[r] * model.components[1]
    return positions


def segment_sq_distances(points: np.ndarray, graph: ElasticGraph, positions: np.ndarray):
    """Nearest point on the union of embedded edge segments, per query point.

    Returns (closest_points, squared_distances). Exact point-to-segment
    projection per edge, minimized over edges.
    """
    if graph.edge_count < 1:
        raise ValueError("piecewise-linear projection needs at least one edge")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    positions = check_embedding(graph, positions)
    best_d2 = np.full(points.shape[0], np.inf)
    best_pt = np.zeros_like(points)
    for e in graph.edges:
        a = positions[e.u]
        d = positions[e.v] - a
        denom = float(d @ d)
        if denom > 0:
            t = np.clip((points - a) @ d / denom, 0.0, 1.0)
        else:
            t = np.zeros(points.shape[0])
        proj = a + t[:, None] * d
        diff = points - proj
        d2 = np.einsum("ij,ij->i", diff, diff)
        better = d2 < best_d2
        best_d2[better] = d2[better]
        best_pt[better] = proj[better]
    return best_pt, best_d2


def project_piecewise_linear(data: Dataset, graph: ElasticGraph, positions: np.ndarray):
    """Per-point closest point on the piecewise-linear manifold (edge union)."""
    return segment_sq_distances(data.points, graph, positions)


def linear_step_schedule(h_start: float, h_end: float, total_steps: int) -> Callable[[int], float]:
    """Linearly decaying step size over the whole presentation schedule."""
    if not (h_start > 0 and h_end > 0):
        raise ValueError("step sizes must be positive")
    span = max(total_steps - 1, 1)
    return lambda k: h_start + (h_end - h_start) * min(k, span) / span


def gaussian_cutting(radius: float) -> Callable[[float], float]:
    """Monotone cutting function over graph distance, w(0) = 1."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    return lambda d: float(np.exp(-0.5 * (d / radius) ** 2))


@dataclass
class SomConfig:
    """Self-organizing-map training setup.

    The neuron space is the graph with shortest-path (hop) distances. The
    step schedule maps a global presentation counter to a positive step size;
    the cutting function maps graph distance to a factor in [0, 1].
    """

    graph: ElasticGraph
    step_schedule: Callable[[int], float] | Sequence[float]
    cutting: Callable[[float], float]
    epochs: int = 10
    rng_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def step(self, k: int) -> float:
        if callable(self.step_schedule):
            return float(self.step_schedule(k))
        return float(self.step_schedule[min(k, len(self.step_schedule) - 1)])


def _hop_distances(graph: ElasticGraph) -> np.ndarray:
    nv = graph.vertex_count
    adj = adjacency(graph)
    dist = np.full((nv, nv), np.inf)
    for s in range(nv):
        dist[s, s] = 0.0
        frontier = [s]
        d = 0
        while frontier:
            d += 1
            nxt = []
            for v in frontier:
                for u in adj[v]:
                    if dist[s, u] == np.inf:
                        dist[s, u] = d
                        nxt.append(u)
            frontier = nxt
    return dist


def som_fit(data: Dataset, cfg: SomConfig, emb0: np.ndarray) -> np.ndarray:
    """Sequential SOM passes: per presented point, the owner node is the
    nearest one and every node moves toward the point by step * cutting(hop
    distance to the owner). Presentation order is a seeded shuffle per epoch."""
    positions = check_embedding(cfg.graph, emb0).copy()
    rho = _hop_distances(cfg.graph)
    finite_max = int(rho[np.isfinite(rho)].max())
    cut = np.empty((cfg.graph.vertex_count, cfg.graph.vertex_count))
    levels = {d: cfg.cutting(float(d)) for d in range(finite_max + 1)}
    for j in range(cfg.graph.vertex_count):
        for i in range(cfg.graph.vertex_count):
            cut[i, j] = levels[int(rho[i, j])] if np.isfinite(rho[i, j]) else 0.0
    if cut.min() < 0 or cut.max() > 1:
        raise ValueError("cutting function must stay within [0, 1]")

    rng = np.random.default_rng(cfg.rng_seed)
    k = 0
    for _ in range(cfg.epochs):
        for i in rng.permutation(data.n_points):
            x = data.points[i]
            diff = positions - x
            owner = int(np.argmin(np.einsum("ij,ij->i", diff, diff)))
            h = cfg.step(k)
            if h < 0:
                raise ValueError(f"step size must not be negative, got {h} at step {k}")
            positions += h * cut[:, owner][:, None] * (x - positions)
            k += 1
    return positions
