"""Graph data model, adjacency normalization and dataset directory I/O.

Dataset directory layout::

    meta.json      {"num_nodes": int, "num_classes": int, "feature_dim": int}
    edges.csv      "src,dst" per line, 0-indexed, no header
    features.csv   n lines of d comma-separated decimals
    labels.csv     n lines holding one integer each
    splits.json    {"train": [...], "val": [...], "test": [...]}
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError

SPLIT_NAMES = ("train", "val", "test")
NORMALIZATIONS = ("sym", "sym_selfloop")


def canonical_edges(edges, num_nodes: int) -> np.ndarray:
    """Return an (m, 2) int64 array with u < v, deduplicated and sorted.

    Self-loops are dropped. Raises IndexError on endpoints outside [0, n).
    """
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= num_nodes):
        bad = e[(e < 0).any(axis=1) | (e >= num_nodes).any(axis=1)][0]
        raise IndexError(f"edge {tuple(int(x) for x in bad)} out of range for n={num_nodes}")
    e = np.sort(e, axis=1)
    e = e[e[:, 0] != e[:, 1]]
    if e.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(e, axis=0)


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected, unweighted attributed graph with labels and splits.

    Edges are canonicalized at construction, so two graphs built from the
    same edge set in different orders compare equal.
    """

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    splits: dict = field(default_factory=dict)
    num_classes: int | None = None

    def __post_init__(self):
        n = int(self.num_nodes)
        if n < 1:
            raise ShapeError(f"num_nodes must be positive, got {n}")
        object.__setattr__(self, "num_nodes", n)
        object.__setattr__(self, "edges", canonical_edges(self.edges, n))

        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(n, -1) if x.size else np.zeros((n, 0))
        if x.ndim != 2 or x.shape[0] != n:
            raise ShapeError(f"features must have {n} rows, got shape {x.shape}")
        object.__setattr__(self, "features", x)

        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if y.shape[0] != n:
            raise ShapeError(f"labels must have {n} entries, got {y.shape[0]}")
        if y.size and y.min() < 0:
            raise ValueError("labels must be non-negative class ids")
        object.__setattr__(self, "labels", y)

        c = int(y.max()) + 1 if self.num_classes is None else int(self.num_classes)
        if y.size and y.max() >= c:
            raise ValueError(f"label {int(y.max())} not below num_classes={c}")
        object.__setattr__(self, "num_classes", c)

        splits = {}
        for name in SPLIT_NAMES:
            idx = np.asarray(self.splits.get(name, []), dtype=np.int64).reshape(-1)
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise IndexError(f"split '{name}' has indices outside [0, {n})")
            if np.unique(idx).size != idx.size:
                raise ValueError(f"split '{name}' contains duplicate indices")
            splits[name] = idx
        seen = np.zeros(n, dtype=np.int64)
        for idx in splits.values():
            seen[idx] += 1
        if (seen > 1).any():
            raise ValueError("splits must be pairwise disjoint")
        object.__setattr__(self, "splits", splits)

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    def adjacency(self) -> np.ndarray:
        """Dense symmetric 0/1 adjacency matrix."""
        a = np.zeros((self.num_nodes, self.num_nodes))
        u, v = self.edges[:, 0], self.edges[:, 1]
        a[u, v] = 1.0
        a[v, u] = 1.0
        return a

    def neighbors(self) -> list[np.ndarray]:
        nbrs = [[] for _ in range(self.num_nodes)]
        for u, v in self.edges:
            nbrs[u].append(v)
            nbrs[v].append(u)
        return [np.asarray(sorted(x), dtype=np.int64) for x in nbrs]

    def with_edges(self, edges) -> "Graph":
        return Graph(self.num_nodes, edges, self.features, self.labels,
                     self.splits, self.num_classes)

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and self.num_classes == other.num_classes
            and np.array_equal(self.edges, other.edges)
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and all(np.array_equal(self.splits[k], other.splits[k]) for k in SPLIT_NAMES)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    matrix: np.ndarray
    mode: str = "sym"

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def degree_vector(g: Graph) -> np.ndarray:
    """Node degrees; each undirected edge counts once for both endpoints."""
    deg = np.zeros(g.num_nodes, dtype=np.int64)
    np.add.at(deg, g.edges[:, 0], 1)
    np.add.at(deg, g.edges[:, 1], 1)
    return deg


def normalize_adjacency(g: Graph, mode: str = "sym") -> NormalizedAdjacency:
    """D^-1/2 A D^-1/2, or the same on A + I for ``sym_selfloop``.

    Zero-degree rows get d^-1/2 := 0, so isolated nodes have all-zero
    rows and columns in mode ``sym``.
    """
    if mode not in NORMALIZATIONS:
        raise ValueError(f"unknown normalization mode {mode!r}")
    a = g.adjacency()
    if mode == "sym_selfloop":
        a = a + np.eye(g.num_nodes)
    deg = a.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    m = inv_sqrt[:, None] * a * inv_sqrt[None, :]
    # exact symmetry regardless of summation order
    m = 0.5 * (m + m.T)
    return NormalizedAdjacency(m, mode)


# ---------------------------------------------------------------------------
# directory I/O
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _read_lines(path: Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [ln.strip() for ln in fh if ln.strip()]


def load_dataset(path) -> Graph:
    path = Path(path)
    names = ("meta.json", "edges.csv", "features.csv", "labels.csv", "splits.json")
    for name in names:
        if not (path / name).is_file():
            raise FormatError(f"missing {name} in {path}")
    try:
        meta = json.loads((path / "meta.json").read_text(encoding="utf-8"))
        n = int(meta["num_nodes"])
        num_classes = int(meta["num_classes"])
        feature_dim = int(meta["feature_dim"])
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"bad meta.json: {exc}") from exc

    try:
        edge_rows = [tuple(int(t) for t in ln.split(",")) for ln in _read_lines(path / "edges.csv")]
        if any(len(r) != 2 for r in edge_rows):
            raise ValueError("edge rows must have two columns")
        feat_rows = [[float(t) for t in ln.split(",")] for ln in _read_lines(path / "features.csv")]
        labels = [int(ln) for ln in _read_lines(path / "labels.csv")]
        splits = json.loads((path / "splits.json").read_text(encoding="utf-8"))
    except ValueError as exc:
        raise FormatError(f"unparseable dataset file in {path}: {exc}") from exc

    if len(feat_rows) != n:
        raise ShapeError(f"features.csv has {len(feat_rows)} rows, expected {n}")
    if len(labels) != n:
        raise ShapeError(f"labels.csv has {len(labels)} rows, expected {n}")
    if any(len(r) != feature_dim for r in feat_rows):
        raise ShapeError(f"features.csv rows must have {feature_dim} columns")
    features = np.array(feat_rows, dtype=np.float64).reshape(n, feature_dim)
    edges = np.array(edge_rows, dtype=np.int64).reshape(-1, 2)
    return Graph(n, edges, features, labels, splits, num_classes)


def save_dataset(g: Graph, path) -> None:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    meta = {"num_nodes": g.num_nodes, "num_classes": g.num_classes, "feature_dim": g.feature_dim}
    (path / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    with open(path / "edges.csv", "w", encoding="utf-8") as fh:
        fh.writelines(f"{u},{v}\n" for u, v in g.edges)
    with open(path / "features.csv", "w", encoding="utf-8") as fh:
        fh.writelines(",".join(_fmt(x) for x in row) + "\n" for row in g.features)
    with open(path / "labels.csv", "w", encoding="utf-8") as fh:
        fh.writelines(f"{int(y)}\n" for y in g.labels)
    splits = {k: [int(i) for i in g.splits[k]] for k in SPLIT_NAMES}
    (path / "splits.json").write_text(json.dumps(splits) + "\n", encoding="utf-8")


def save_edges(edges: np.ndarray, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(f"{int(u)},{int(v)}\n" for u, v in edges)
