"""Projection quality criteria: MSE fraction, distance-mapping correlation
(optionally on the Natural-PCA pair subset), k-neighbourhood preservation,
per-label group compactness, and the random-neighbourhood baseline."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset, PcaModel, linear_sq_distances, project
from .graph import ElasticGraph
from .optimizer import partition, segment_sq_distances

__all__ = [
    "ProjectionPair",
    "QualityReport",
    "mse_fraction",
    "natural_pca_pairs",
    "qdm",
    "qnp",
    "qgc",
    "random_baseline",
    "score_projection",
    "linear_projection_pair",
    "graph_projection_pair",
    "comparison_table",
]

_PROJECTION_KINDS = ("nearest-vertex", "piecewise-linear", "linear", "identity")


@dataclass
class ProjectionPair:
    """A dataset alongside its low-dimensional image, row for row.

    sq_distances optionally carries per-point squared distances to the
    approximating manifold in the original space (needed for the MSE
    criterion; the other criteria use only the two coordinate sets).
    """

    original: Dataset
    projected: np.ndarray
    kind: str = "linear"
    sq_distances: np.ndarray | None = None

    def __post_init__(self):
        self.projected = np.atleast_2d(np.asarray(self.projected, dtype=float))
        if self.projected.shape[0] != self.original.n_points:
            raise ValueError(
                f"{self.projected.shape[0]} projected rows for {self.original.n_points} points"
            )
        if self.kind not in _PROJECTION_KINDS:
            raise ValueError(f"unknown projection kind {self.kind!r}")
        if self.sq_distances is not None:
            self.sq_distances = np.asarray(self.sq_distances, dtype=float)
            if self.sq_distances.shape != (self.original.n_points,):
                raise ValueError("sq_distances must be one value per point")


def linear_projection_pair(data: Dataset, model: PcaModel, q: int) -> ProjectionPair:
    """Pair for the rank-q principal projection, with exact residual distances."""
    return ProjectionPair(
        original=data,
        projected=project(model, data, q),
        kind="linear",
        sq_distances=linear_sq_distances(model, data, q),
    )


def graph_projection_pair(
    data: Dataset, graph: ElasticGraph, positions: np.ndarray, piecewise: bool = False
) -> ProjectionPair:
    """Pair for a fitted elastic graph: projected coordinates are the owning
    vertex positions; with piecewise=True the MSE distances come from exact
    projection onto the edge segments instead of the vertex set."""
    part = partition(data, positions)
    owner_pos = positions[part.owner]
    if piecewise:
        _, sq = segment_sq_distances(data.points, graph, positions)
        kind = "piecewise-linear"
    else:
        diff = data.points - owner_pos
        sq = np.einsum("ij,ij->i", diff, diff)
        kind = "nearest-vertex"
    return ProjectionPair(original=data, projected=owner_pos, kind=kind, sq_distances=sq)


def mse_fraction(data: Dataset, sq_distances: np.ndarray) -> float:
    """Weighted mean squared manifold distance as a fraction of total variance."""
    tv = data.total_variance()
    if tv <= 0:
        raise ValueError("zero total variance")
    sq_distances = np.asarray(sq_distances, dtype=float)
    return float(data.weights @ sq_distances / data.total_weight / tv)


def _pairwise_distances(coords: np.ndarray) -> np.ndarray:
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def natural_pca_pairs(data: Dataset, n_components: int) -> list[tuple[int, int]]:
    """Greedy most-representative point pairs.

    The first pair is the exact diameter (full pairwise scan); afterwards each
    component pairs the point farthest from the set already chosen with that
    set's closest member. Ties resolve to the lowest point index.
    """
    n = data.n_points
    if n < 2:
        raise ValueError("need at least two points")
    if not 1 <= n_components <= n - 1:
        raise ValueError(f"n_components={n_components} out of range [1, {n - 1}]")
    dist = _pairwise_distances(data.points)
    flat = int(np.argmax(dist))
    i1, j1 = divmod(flat, n)
    if i1 > j1:
        i1, j1 = j1, i1
    pairs = [(i1, j1)]
    in_set = np.zeros(n, dtype=bool)
    in_set[[i1, j1]] = True
    set_dist = np.minimum(dist[:, i1], dist[:, j1])
    for _ in range(1, n_components):
        masked = np.where(in_set, -np.inf, set_dist)
        i_n = int(np.argmax(masked))
        members = np.flatnonzero(in_set)
        j_n = int(members[np.argmin(dist[i_n, members])])
        pairs.append((i_n, j_n))
        in_set[i_n] = True
        set_dist = np.minimum(set_dist, dist[:, i_n])
    return pairs


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a @ a) * (b @ b))
    if denom == 0:
        raise ValueError("correlation undefined: constant distance vector")
    return float(a @ b / denom)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def qdm(pair: ProjectionPair, selection: str | int = "all") -> tuple[float, float]:
    """Correlation between pairwise distances before and after projection.

    selection="all" uses every point pair; an integer n uses the first n
    Natural-PCA component pairs, chosen in the original space. Returns
    (pearson, spearman).
    """
    n = pair.original.n_points
    if selection == "all":
        iu = np.triu_indices(n, k=1)
        idx_pairs = list(zip(iu[0].tolist(), iu[1].tolist()))
    else:
        idx_pairs = natural_pca_pairs(pair.original, int(selection))
    if len(idx_pairs) < 2:
        raise ValueError("need at least two distance pairs")
    ii = np.array([p[0] for p in idx_pairs])
    jj = np.array([p[1] for p in idx_pairs])
    d_orig = np.linalg.norm(pair.original.points[ii] - pair.original.points[jj], axis=1)
    d_proj = np.linalg.norm(pair.projected[ii] - pair.projected[jj], axis=1)
    pearson = _pearson(d_orig, d_proj)
    spearman = _pearson(_average_ranks(d_orig), _average_ranks(d_proj))
    return pearson, spearman


def _knn_sets(coords: np.ndarray, k: int) -> np.ndarray:
    """(N, k) nearest-neighbour indices, self excluded, ties to lower index."""
    dist = _pairwise_distances(coords)
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")
    return order[:, :k]


def qnp(pair: ProjectionPair, k: int) -> float:
    """Average fractional overlap of k-neighbourhoods before and after projection."""
    n = pair.original.n_points
    if not 1 <= k <= n - 1:
        raise ValueError(f"k={k} out of range [1, {n - 1}]")
    s_orig = _knn_sets(pair.original.points, k)
    s_proj = _knn_sets(pair.projected, k)
    overlap = sum(
        len(set(s_orig[i].tolist()) & set(s_proj[i].tolist())) for i in range(n)
    )
    return overlap / (k * n)


def qgc(pair: ProjectionPair, space: str, k: int) -> dict[str, float]:
    """Per-label neighbourhood purity in the requested space.

    For each point, counts same-label members of its k-neighbourhood; the
    label score averages count/k over that label's points. space is
    "original" or "projected", enabling before/after comparison.
    """
    labels = pair.original.labels
    if labels is None:
        raise ValueError("dataset has no labels")
    if space == "original":
        coords = pair.original.points
    elif space == "projected":
        coords = pair.projected
    else:
        raise ValueError(f"space must be 'original' or 'projected', got {space!r}")
    return _qgc_from_neighbours(_knn_sets(coords, k), labels, k)


def _qgc_from_neighbours(nbrs: np.ndarray, labels: list[str], k: int) -> dict[str, float]:
    n = len(labels)
    if not 1 <= k <= n - 1:
        raise ValueError(f"k={k} out of range [1, {n - 1}]")
    arr = np.asarray(labels)
    out: dict[str, float] = {}
    for lab in sorted(set(labels)):
        members = np.flatnonzero(arr == lab)
        same = sum(int(np.sum(arr[nbrs[i]] == lab)) for i in members)
        out[lab] = same / (k * len(members))
    return out


def random_baseline(metric: str, data: Dataset, k: int, trials: int, seed: int = 0):
    """Monte-Carlo value of a criterion with the low-dimensional neighbourhood
    replaced by k uniformly drawn distinct points (the point itself excluded).

    Returns a scalar for "qnp" and a per-label map for "qgc", matching the
    shape of the real criterion.
    """
    n = data.n_points
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not 1 <= k <= n - 1:
        raise ValueError(f"k={k} out of range [1, {n - 1}]")
    rng = np.random.default_rng(seed)
    if metric == "qnp":
        s_orig = _knn_sets(data.points, k)
        total = 0.0
        for _ in range(trials):
            rand_nbrs = _random_neighbour_sets(rng, n, k)
            total += sum(
                len(set(s_orig[i].tolist()) & set(rand_nbrs[i].tolist())) for i in range(n)
            ) / (k * n)
        return total / trials
    if metric == "qgc":
        if data.labels is None:
            raise ValueError("dataset has no labels")
        sums: dict[str, float] = {}
        for _ in range(trials):
            rand_nbrs = _random_neighbour_sets(rng, n, k)
            for lab, val in _qgc_from_neighbours(rand_nbrs, data.labels, k).items():
                sums[lab] = sums.get(lab, 0.0) + val
        return {lab: v / trials for lab, v in sorted(sums.items())}
    raise ValueError(f"metric must be 'qnp' or 'qgc', got {metric!r}")


def _random_neighbour_sets(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    """k distinct indices per row, never containing the row's own index."""
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        draw = rng.choice(n - 1, size=k, replace=False)
        out[i] = np.where(draw >= i, draw + 1, draw)
    return out


@dataclass
class QualityReport:
    """Bundle of the four criteria plus random baselines for one projection."""

    mse_fraction: float | None
    qdm_pearson: float
    qdm_spearman: float
    qnp: dict[int, float]
    qgc: dict[str, dict[int, float]]
    random_baselines: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "mse_fraction": self.mse_fraction,
            "qdm_pearson": self.qdm_pearson,
            "qdm_spearman": self.qdm_spearman,
            "qnp": {str(k): v for k, v in self.qnp.items()},
            "qgc": {lab: {str(k): v for k, v in per.items()} for lab, per in self.qgc.items()},
            "random_baselines": {
                "qnp": {str(k): v for k, v in self.random_baselines.get("qnp", {}).items()},
                "qgc": {
                    lab: {str(k): v for k, v in per.items()}
                    for lab, per in self.random_baselines.get("qgc", {}).items()
                },
            },
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "QualityReport":
        doc = json.loads(text)
        rb = doc.get("random_baselines", {})
        return cls(
            mse_fraction=doc["mse_fraction"],
            qdm_pearson=doc["qdm_pearson"],
            qdm_spearman=doc["qdm_spearman"],
            qnp={int(k): v for k, v in doc["qnp"].items()},
            qgc={lab: {int(k): v for k, v in per.items()} for lab, per in doc["qgc"].items()},
            random_baselines={
                "qnp": {int(k): v for k, v in rb.get("qnp", {}).items()},
                "qgc": {lab: {int(k): v for k, v in per.items()} for lab, per in rb.get("qgc", {}).items()},
            },
        )


def score_projection(
    pair: ProjectionPair,
    ks: list[int],
    npca_n: int | None = None,
    seed: int = 0,
    baseline_trials: int = 100,
) -> QualityReport:
    """Evaluate every criterion for one projection; deterministic given seed.

    QDM uses the Natural-PCA pair subset of size npca_n (default
    min(N-1, 100)). QGC (projected space) and its baseline are computed only
    when the dataset carries labels. MSE needs manifold distances: absent
    sq_distances, an m-column projection is treated as approximation points in
    the data space; otherwise the field is left unset.
    """
    data = pair.original
    n = data.n_points
    npca_n = min(n - 1, 100) if npca_n is None else npca_n

    if pair.sq_distances is not None:
        mse = mse_fraction(data, pair.sq_distances)
    elif pair.projected.shape[1] == data.n_features:
        resid = data.points - pair.projected
        mse = mse_fraction(data, np.einsum("ij,ij->i", resid, resid))
    else:
        mse = None

    pearson, spearman = qdm(pair, npca_n)
    qnp_vals = {k: qnp(pair, k) for k in ks}
    qgc_vals: dict[str, dict[int, float]] = {}
    baselines: dict = {"qnp": {}, "qgc": {}}
    for k in ks:
        baselines["qnp"][k] = random_baseline("qnp", data, k, baseline_trials, seed)
    if data.labels is not None:
        per_label: dict[str, dict[int, float]] = {}
        for k in ks:
            for lab, v in qgc(pair, "projected", k).items():
                per_label.setdefault(lab, {})[k] = v
        qgc_vals = per_label
        base_label: dict[str, dict[int, float]] = {}
        for k in ks:
            for lab, v in random_baseline("qgc", data, k, baseline_trials, seed).items():
                base_label.setdefault(lab, {})[k] = v
        baselines["qgc"] = base_label
    return QualityReport(
        mse_fraction=mse,
        qdm_pearson=pearson,
        qdm_spearman=spearman,
        qnp=qnp_vals,
        qgc=qgc_vals,
        random_baselines=baselines,
    )


def comparison_table(reports: dict[str, QualityReport], delimiter: str = ",") -> str:
    """Criteria as rows, projections as columns (the published table layout)."""
    names = list(reports.keys())
    rows: list[tuple[str, list[str]]] = []

    def cell(value) -> str:
        return "" if value is None else repr(value)

    rows.append(("mse_fraction", [cell(reports[n].mse_fraction) for n in names]))
    rows.append(("qdm_pearson", [cell(reports[n].qdm_pearson) for n in names]))
    rows.append(("qdm_spearman", [cell(reports[n].qdm_spearman) for n in names]))
    all_ks = sorted({k for n in names for k in reports[n].qnp})
    for k in all_ks:
        rows.append((f"qnp@{k}", [cell(reports[n].qnp.get(k)) for n in names]))
        rows.append(
            (f"qnp_random@{k}", [cell(reports[n].random_baselines.get("qnp", {}).get(k)) for n in names])
        )
    all_labels = sorted({lab for n in names for lab in reports[n].qgc})
    for lab in all_labels:
        label_ks = sorted({k for n in names for k in reports[n].qgc.get(lab, {})})
        for k in label_ks:
            rows.append(
                (f"qgc:{lab}@{k}", [cell(reports[n].qgc.get(lab, {}).get(k)) for n in names])
            )
    lines = [delimiter.join(["criterion"] + names)]
    for name, cells in rows:
        lines.append(delimiter.join([name] + cells))
    return "\n".join(lines) + "\n"
