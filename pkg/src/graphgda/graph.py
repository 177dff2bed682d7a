"""Attributed graph value type, node measures and file ingestion."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from .errors import InvalidArgument

SYMMETRY_TOL = 1e-9
SIMPLEX_TOL = 1e-9
MARGINAL_FILE_TOL = 1e-6


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Graph:
    """Dense attributed graph with a probability measure on its nodes.

    Attributes
    ----------
    adjacency : (n, n) array
        Symmetric, nonnegative, possibly fractional edge weights.
    features : (n, d) array
        Node attribute matrix.
    marginal : (n,) array
        Node histogram, a point of the probability simplex.
    labels : (n,) int array, optional
        Class ids in ``0..C-1``.
    """

    adjacency: np.ndarray
    features: np.ndarray
    marginal: np.ndarray = None
    labels: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        A = _frozen(self.adjacency)
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        X = _frozen(X)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise InvalidArgument(f"adjacency must be square, got shape {A.shape}")
        n = A.shape[0]
        if n < 1:
            raise InvalidArgument("a graph needs at least one node")
        if X.shape[0] != n:
            raise InvalidArgument(f"features have {X.shape[0]} rows for {n} nodes")
        mu = uniform_marginal(n) if self.marginal is None else self.marginal
        mu = _frozen(mu)
        if mu.shape != (n,):
            raise InvalidArgument(f"marginal has shape {mu.shape}, expected ({n},)")
        for name, arr in (("adjacency", A), ("features", X), ("marginal", mu)):
            if not np.all(np.isfinite(arr)):
                raise InvalidArgument(f"{name} contains NaN or Inf")
        if np.any(A < 0):
            raise InvalidArgument("adjacency entries must be nonnegative")
        if np.max(np.abs(A - A.T), initial=0.0) > SYMMETRY_TOL:
            raise InvalidArgument("adjacency is not symmetric")
        if np.any(mu < 0) or abs(mu.sum() - 1.0) > SIMPLEX_TOL:
            raise InvalidArgument("marginal must be nonnegative and sum to 1")
        y = self.labels
        if y is not None:
            y = np.array(y, copy=True)
            if y.shape != (n,):
                raise InvalidArgument(f"labels have shape {y.shape}, expected ({n},)")
            if not np.issubdtype(y.dtype, np.integer):
                if not np.all(np.mod(y, 1) == 0):
                    raise InvalidArgument("labels must be integers")
            y = y.astype(np.int64)
            if np.any(y < 0):
                raise InvalidArgument("labels must be nonnegative class ids")
            y.setflags(write=False)
        object.__setattr__(self, "adjacency", A)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "marginal", mu)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return 0 if self.labels is None else int(self.labels.max()) + 1

    def without_labels(self) -> "Graph":
        return Graph(self.adjacency, self.features, self.marginal)

    def with_labels(self, labels) -> "Graph":
        return Graph(self.adjacency, self.features, self.marginal, labels)

    def permuted(self, perm) -> "Graph":
        """Relabel nodes so that new node ``i`` is old node ``perm[i]``."""
        perm = np.asarray(perm)
        y = None if self.labels is None else self.labels[perm]
        return Graph(self.adjacency[np.ix_(perm, perm)], self.features[perm],
                     self.marginal[perm] / self.marginal[perm].sum(), y)


def uniform_marginal(n: int) -> np.ndarray:
    if n < 1:
        raise InvalidArgument(f"uniform marginal needs n >= 1, got {n}")
    mu = np.full(n, 1.0 / n)
    return mu / mu.sum()


def attribute_distance_matrix(g0: Graph, g1: Graph) -> np.ndarray:
    """Euclidean distances between every feature row of ``g0`` and of ``g1``."""
    if g0.d != g1.d:
        raise InvalidArgument(f"feature dimensions differ: {g0.d} vs {g1.d}")
    return cdist(g0.features, g1.features, metric="euclidean")


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def _read_adjacency(path) -> np.ndarray:
    n = None
    entries: dict[tuple[int, int], float] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2 and parts[0] == "nodes":
                    try:
                        n = int(parts[1])
                    except ValueError:
                        raise InvalidArgument(f"{path}:{lineno}: bad node count {parts[1]!r}")
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise InvalidArgument(f"{path}:{lineno}: expected 'u v [w]', got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
                w = float(parts[2]) if len(parts) == 3 else 1.0
            except ValueError:
                raise InvalidArgument(f"{path}:{lineno}: cannot parse {line!r}")
            entries[(u, v)] = w
    if n is None:
        raise InvalidArgument(f"{path}: missing '#nodes N' header")
    if n < 1:
        raise InvalidArgument(f"{path}: node count must be positive")
    A = np.zeros((n, n))
    for (u, v), w in entries.items():
        if not (0 <= u < n and 0 <= v < n):
            raise InvalidArgument(f"{path}: edge ({u}, {v}) outside 0..{n - 1}")
        A[u, v] = w
        # a single direction stands for an undirected edge
        if (v, u) not in entries:
            A[v, u] = w
    return (A + A.T) / 2.0


def load_graph(adjacency_path, features_path, labels_path=None, marginal_path=None,
               num_classes: Optional[int] = None) -> Graph:
    """Read a graph from an edge list, a feature CSV and optional label/marginal files.

    An edge listed in one direction only is taken as undirected. When both
    directions are listed with different weights, the adjacency is
    symmetrized by averaging.
    """
    A = _read_adjacency(adjacency_path)
    n = A.shape[0]
    try:
        X = np.loadtxt(features_path, delimiter=",", ndmin=2, dtype=float)
    except ValueError as exc:
        raise InvalidArgument(f"{features_path}: {exc}") from exc
    if X.shape[0] != n:
        raise InvalidArgument(
            f"dimension mismatch: {n} nodes in adjacency, {X.shape[0]} feature rows")
    y = None
    if labels_path is not None:
        try:
            y = np.loadtxt(labels_path, dtype=np.int64, ndmin=1)
        except ValueError as exc:
            raise InvalidArgument(f"{labels_path}: {exc}") from exc
        if y.shape != (n,):
            raise InvalidArgument(f"{labels_path}: {y.size} labels for {n} nodes")
        hi = num_classes if num_classes is not None else np.iinfo(np.int64).max
        if np.any(y < 0) or np.any(y >= hi):
            raise InvalidArgument(f"{labels_path}: label ids out of range")
    mu = None
    if marginal_path is not None:
        try:
            mu = np.loadtxt(marginal_path, dtype=float, ndmin=1)
        except ValueError as exc:
            raise InvalidArgument(f"{marginal_path}: {exc}") from exc
        if mu.shape != (n,):
            raise InvalidArgument(f"{marginal_path}: {mu.size} entries for {n} nodes")
        if np.any(mu < 0) or abs(mu.sum() - 1.0) > MARGINAL_FILE_TOL:
            raise InvalidArgument(f"{marginal_path}: marginal must be nonnegative and sum to 1")
        mu = mu / mu.sum()
    return Graph(A, X, mu, y)


def save_graph(graph: Graph, directory, write_marginal: bool = False) -> dict[str, Path]:
    """Write ``adjacency.txt``, ``features.csv`` and (if labeled) ``labels.txt``.

    Floats are written with ``repr`` so a reload is bit-identical.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"adjacency": out / "adjacency.txt", "features": out / "features.csv"}
    A = graph.adjacency
    iu, ju = np.nonzero(np.triu(A))
    with open(paths["adjacency"], "w") as fh:
        fh.write(f"#nodes {graph.n}\n")
        for u, v in zip(iu, ju):
            fh.write(f"{u} {v} {float(A[u, v])!r}\n")
    with open(paths["features"], "w") as fh:
        for row in graph.features:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
    if graph.labels is not None:
        paths["labels"] = out / "labels.txt"
        with open(paths["labels"], "w") as fh:
            fh.writelines(f"{int(c)}\n" for c in graph.labels)
    if write_marginal:
        paths["marginal"] = out / "marginal.txt"
        with open(paths["marginal"], "w") as fh:
            fh.writelines(f"{float(m)!r}\n" for m in graph.marginal)
    return paths


def load_graph_dir(directory, num_classes: Optional[int] = None) -> Graph:
    """Load the file triple written by :func:`save_graph`."""
    d = Path(directory)
    labels = d / "labels.txt"
    marginal = d / "marginal.txt"
    return load_graph(d / "adjacency.txt", d / "features.csv",
                      labels if labels.exists() else None,
                      marginal if marginal.exists() else None,
                      num_classes=num_classes)
