"""Weighted labeled point clouds, DSV ingestion and weighted PCA."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Dataset",
    "PcaModel",
    "DsvParseError",
    "RaggedRowError",
    "BadCellError",
    "EmptyFileError",
    "DegenerateDataError",
    "load_dsv",
    "write_dsv",
    "dataset_to_json",
    "dataset_from_json",
    "pca",
    "project",
    "reconstruct",
    "linear_sq_distances",
    "explained_variance_fraction",
    "standardize",
]


class DsvParseError(ValueError):
    """Base for DSV ingestion failures. Row/column numbers are 1-based."""

    def __init__(self, message: str, row: int | None = None, column: int | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class RaggedRowError(DsvParseError):
    pass


class BadCellError(DsvParseError):
    pass


class EmptyFileError(DsvParseError):
    pass


class DegenerateDataError(ValueError):
    """Raised when data has no variance where variance is required."""


@dataclass
class Dataset:
    """N weighted points in R^m with optional categorical labels.

    points : (N, m) float array, all finite
    weights : (N,) non-negative, total > 0 (defaults to ones)
    labels : optional list of N category tags
    feature_names : optional list of m column names
    """

    points: np.ndarray
    weights: np.ndarray | None = None
    labels: list[str] | None = None
    feature_names: list[str] | None = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        n, m = self.points.shape
        if n < 1 or m < 1:
            raise ValueError(f"need at least one point and one feature, got shape {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("points contain non-finite values")
        if self.weights is None:
            self.weights = np.ones(n)
        else:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != (n,):
                raise ValueError(f"weights shape {self.weights.shape} does not match N={n}")
            if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
                raise ValueError("weights must be finite and non-negative")
            if self.weights.sum() <= 0:
                raise ValueError("total weight must be positive")
        if self.labels is not None:
            self.labels = [str(x) for x in self.labels]
            if len(self.labels) != n:
                raise ValueError(f"{len(self.labels)} labels for {n} points")
        if self.feature_names is not None:
            self.feature_names = [str(x) for x in self.feature_names]
            if len(self.feature_names) != m:
                raise ValueError(f"{len(self.feature_names)} feature names for {m} features")

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def n_features(self) -> int:
        return self.points.shape[1]

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def normalized_weights(self) -> np.ndarray:
        """Weights rescaled to sum to one (used in all variance computations)."""
        return self.weights / self.weights.sum()

    def weighted_mean(self) -> np.ndarray:
        return self.normalized_weights() @ self.points

    def total_variance(self) -> float:
        """Weighted mean squared distance of the points to their weighted mean."""
        centered = self.points - self.weighted_mean()
        return float(self.normalized_weights() @ np.einsum("ij,ij->i", centered, centered))


@dataclass
class PcaModel:
    """Top-q weighted principal components.

    components rows are orthonormal; eigenvalues descending, clamped at 0;
    total_variance is the full weighted variance (not just the kept part).
    """

    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray
    total_variance: float

    @property
    def n_components(self) -> int:
        return self.components.shape[0]


def load_dsv(
    path,
    delimiter: str = ",",
    header: bool = False,
    label_column: str | int | None = None,
) -> Dataset:
    """Read a delimiter-separated file into a Dataset.

    With header=True the first row supplies feature names and label_column may
    be a name; otherwise label_column is a 0-based index. Missing or
    non-numeric feature cells are rejected with 1-based row/column positions.
    """
    with open(path, encoding="utf-8") as fh:
        raw = [line.rstrip("\n").rstrip("\r") for line in fh]
    rows = [line.split(delimiter) for line in raw if line.strip() != ""]
    if not rows:
        raise EmptyFileError(f"{path}: file contains no data")

    names = None
    if header:
        names = [c.strip() for c in rows[0]]
        rows = rows[1:]
        if not rows:
            raise EmptyFileError(f"{path}: header but no data rows")

    width = len(rows[0]) if names is None else len(names)
    label_idx = None
    if label_column is not None:
        if isinstance(label_column, str):
            if names is None:
                raise DsvParseError("label column by name requires header=True")
            if label_column not in names:
                raise DsvParseError(f"label column {label_column!r} not in header {names}")
            label_idx = names.index(label_column)
        else:
            label_idx = int(label_column)
            if not 0 <= label_idx < width:
                raise DsvParseError(f"label column index {label_idx} out of range for {width} columns")

    points, labels = [], []
    offset = 2 if header else 1  # 1-based data row numbering, counting the header row
    for r, row in enumerate(rows):
        if len(row) != width:
            raise RaggedRowError(
                f"row {r + offset}: expected {width} columns, got {len(row)}", row=r + offset
            )
        vals = []
        for c, cell in enumerate(row):
            if c == label_idx:
                labels.append(cell.strip())
                continue
            text = cell.strip()
            if text == "":
                raise BadCellError(f"row {r + offset}, column {c + 1}: missing value", row=r + offset, column=c + 1)
            try:
                vals.append(float(text))
            except ValueError:
                raise BadCellError(
                    f"row {r + offset}, column {c + 1}: non-numeric value {text!r}",
                    row=r + offset,
                    column=c + 1,
                ) from None
        points.append(vals)

    feature_names = None
    if names is not None:
        feature_names = [nm for i, nm in enumerate(names) if i != label_idx]
    return Dataset(
        points=np.asarray(points, dtype=float),
        labels=labels if label_idx is not None else None,
        feature_names=feature_names,
    )


def write_dsv(data: Dataset, path, delimiter: str = ",") -> None:
    """Write a Dataset as DSV with full float round-trip precision.

    A header row is emitted when feature names are present; the label column
    (named "label") is appended last when labels are present.
    """
    with open(path, "w", encoding="utf-8") as fh:
        if data.feature_names is not None:
            cols = list(data.feature_names) + (["label"] if data.labels is not None else [])
            fh.write(delimiter.join(cols) + "\n")
        for i in range(data.n_points):
            cells = [repr(v) for v in data.points[i]]
            if data.labels is not None:
                cells.append(data.labels[i])
            fh.write(delimiter.join(cells) + "\n")


def dataset_to_json(data: Dataset) -> str:
    doc = {
        "points": data.points.tolist(),
        "weights": data.weights.tolist(),
        "labels": data.labels,
    }
    return json.dumps(doc)


def dataset_from_json(text: str) -> Dataset:
    doc = json.loads(text)
    return Dataset(
        points=np.asarray(doc["points"], dtype=float),
        weights=np.asarray(doc["weights"], dtype=float) if doc.get("weights") is not None else None,
        labels=doc.get("labels"),
    )


def pca(data: Dataset, q: int) -> PcaModel:
    """Top-q weighted PCA.

    Eigendecomposes the weighted covariance when m <= N; for m > N works on
    the N x N Gram matrix instead so wide (gene-expression style) data never
    allocates an m x m matrix.
    """
    n, m = data.points.shape
    if n < 2:
        raise ValueError("PCA needs at least two points")
    if not 1 <= q <= min(n, m):
        raise ValueError(f"q={q} out of range [1, {min(n, m)}]")
    w = data.normalized_weights()
    mean = w @ data.points
    centered = data.points - mean
    total_variance = float(w @ np.einsum("ij,ij->i", centered, centered))
    if total_variance <= 0:
        raise DegenerateDataError("zero total variance: all points identical")

    b = centered * np.sqrt(w)[:, None]  # covariance = b.T @ b
    if m <= n:
        cov = b.T @ b
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(evals)[::-1][:q]
        eigenvalues = evals[order]
        components = evecs[:, order].T
    else:
        gram = b @ b.T
        evals, evecs = np.linalg.eigh(gram)
        order = np.argsort(evals)[::-1][:q]
        eigenvalues = evals[order]
        comps = []
        for rank, idx in enumerate(order):
            lam = evals[idx]
            if lam > 1e-12 * max(total_variance, 1.0):
                comps.append(b.T @ evecs[:, idx] / np.sqrt(lam))
            else:
                comps.append(_orthonormal_completion(np.asarray(comps), m))
                eigenvalues[rank] = 0.0
        components = np.vstack(comps)

    eigenvalues = np.clip(eigenvalues, 0.0, None)
    return PcaModel(mean=mean, components=components, eigenvalues=eigenvalues, total_variance=total_variance)


def _orthonormal_completion(existing: np.ndarray, m: int) -> np.ndarray:
    """First canonical basis vector that survives orthogonalization against rows of existing."""
    for j in range(m):
        v = np.zeros(m)
        v[j] = 1.0
        if existing.size:
            v -= existing.T @ (existing @ v)
        norm = np.linalg.norm(v)
        if norm > 0.5:
            return v / norm
    raise DegenerateDataError("cannot complete orthonormal basis")


def project(model: PcaModel, data: Dataset, q: int | None = None) -> np.ndarray:
    """Coordinates of the points in the first q principal directions."""
    q = model.n_components if q is None else q
    if not 1 <= q <= model.n_components:
        raise ValueError(f"q={q} out of range [1, {model.n_components}]")
    return (data.points - model.mean) @ model.components[:q].T


def reconstruct(model: PcaModel, coords: np.ndarray) -> np.ndarray:
    """Map q-dimensional principal coordinates back to data space."""
    q = coords.shape[1]
    if q > model.n_components:
        raise ValueError(f"{q} coordinate columns but only {model.n_components} components")
    return model.mean + coords @ model.components[:q]


def linear_sq_distances(model: PcaModel, data: Dataset, q: int) -> np.ndarray:
    """Per-point squared distance to the rank-q principal manifold."""
    coords = project(model, data, q)
    residual = data.points - reconstruct(model, coords)
    return np.einsum("ij,ij->i", residual, residual)


def explained_variance_fraction(data: Dataset, approximator_msd: float) -> float:
    """1 - msd/total_variance; 1.0 for a perfect fit, can go negative."""
    tv = data.total_variance()
    if tv <= 0:
        raise DegenerateDataError("zero total variance")
    return min(1.0, 1.0 - approximator_msd / tv)


def standardize(data: Dataset) -> Dataset:
    """Z-score each feature using the weighted mean and standard deviation.

    Zero-variance features are left unscaled (centered only).
    """
    w = data.normalized_weights()
    mean = w @ data.points
    centered = data.points - mean
    std = np.sqrt(w @ centered**2)
    std = np.where(std > 0, std, 1.0)
    return Dataset(
        points=centered / std,
        weights=data.weights.copy(),
        labels=list(data.labels) if data.labels is not None else None,
        feature_names=list(data.feature_names) if data.feature_names is not None else None,
    )
