"""Patch selection: spectral top-p from a relevance matrix, and the fast
variant built on truncated personalized-PageRank rank vectors.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, NumericalError, ShapeError, SizeError
from .graph import Graph, NormalizedAdjacency, canonical_edges
from .spectral import PolyFilter, SpectralDecomposition, relevance_matrix

PATCH_MODES = ("spectral", "fast")
_BLOCK = 128


@dataclass(eq=False)
class PatchSet:
    """Per-node ranked neighbor lists.

    Row v of ``indices`` lists the selected nodes by descending score;
    equal scores are ordered by ascending node id.
    """

    indices: np.ndarray
    scores: np.ndarray
    mode: str = "spectral"

    @property
    def p(self) -> int:
        return int(self.indices.shape[1])

    @property
    def n(self) -> int:
        return int(self.indices.shape[0])

    def shuffled(self, seed: int) -> "PatchSet":
        """Copy with each row's order independently permuted."""
        rng = np.random.default_rng(seed)
        perm = np.argsort(rng.random(self.indices.shape), axis=1)
        rows = np.arange(self.n)[:, None]
        return PatchSet(self.indices[rows, perm], self.scores[rows, perm], self.mode)


@dataclass(eq=False)
class RankVector:
    owner: int
    r: np.ndarray
    c: float
    K_used: float


def threads_from_env(default: int = 1) -> int:
    try:
        return max(1, int(os.environ.get("HEROFILTER_THREADS", default)))
    except ValueError:
        return default


def top_p_columns(R, p: int, mode: str = "spectral") -> PatchSet:
    """Per row, the p largest entries of R in descending order.

    Ties go to the lower column index (stable sort on -R).
    """
    R = np.asarray(R, dtype=np.float64)
    if R.ndim != 2:
        raise ShapeError(f"score matrix must be 2-D, got {R.shape}")
    n = R.shape[1]
    if not 1 <= p <= n:
        raise SizeError(f"patch size p={p} must lie in [1, {n}]")
    order = np.argsort(-R, axis=1, kind="stable")[:, :p]
    scores = np.take_along_axis(R, order, axis=1)
    return PatchSet(order.astype(np.int64), scores, mode)


def extract_patches(g: Graph, ps: PatchSet) -> np.ndarray:
    """Gather the (n, p, d) patch tensor: P[v, j] = X[indices[v, j]]."""
    if ps.n != g.num_nodes:
        raise ShapeError(f"patch set covers {ps.n} nodes, graph has {g.num_nodes}")
    if ps.indices.size and (ps.indices.min() < 0 or ps.indices.max() >= g.num_nodes):
        raise ShapeError("patch indices outside the graph")
    return g.features[ps.indices]


def spectral_patch(g: Graph, dec: SpectralDecomposition, f: PolyFilter, p: int) -> PatchSet:
    if dec.n != g.num_nodes:
        raise ShapeError(f"decomposition has size {dec.n}, graph has {g.num_nodes} nodes")
    return top_p_columns(relevance_matrix(dec, f), p, mode="spectral")


def _mat(a) -> np.ndarray:
    return a.matrix if isinstance(a, NormalizedAdjacency) else np.asarray(a, dtype=np.float64)


def _check_c(c: float):
    if not 0.0 <= c < 1.0:
        raise ValueError(f"c must lie in [0, 1), got {c}")


def ppr_objective(r, v: int, a, c: float) -> float:
    """c r^T (I - A) r + (1 - c) ||r - e_v||^2."""
    _check_c(c)
    m = _mat(a)
    r = np.asarray(r, dtype=np.float64)
    diff = r.copy()
    diff[v] -= 1.0
    return float(c * (r @ r - r @ (m @ r)) + (1.0 - c) * (diff @ diff))


def ppr_gradient(r, v: int, a, c: float) -> np.ndarray:
    m = _mat(a)
    r = np.asarray(r, dtype=np.float64)
    diff = r.copy()
    diff[v] -= 1.0
    return 2.0 * c * (r - m @ r) + 2.0 * (1.0 - c) * diff


def ppr_closed_form(v: int, a, c: float) -> RankVector:
    """r_v = (1 - c) (I - c A)^-1 e_v by a dense solve."""
    _check_c(c)
    m = _mat(a)
    n = m.shape[0]
    rhs = np.zeros(n)
    rhs[v] = 1.0 - c
    try:
        r = np.linalg.solve(np.eye(n) - c * m, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular system for node {v}: {exc}") from exc
    if not np.isfinite(r).all():
        raise NumericalError(f"non-finite rank vector for node {v}")
    return RankVector(int(v), r, float(c), math.inf)


def ppr_neumann(v: int, a, c: float, K: int) -> RankVector:
    """(1 - c) sum_{k<=K} c^k A^k e_v via K steps of r <- c A r + (1 - c) e_v."""
    _check_c(c)
    if K < 0:
        raise ValueError("K must be >= 0")
    m = _mat(a)
    seed = np.zeros(m.shape[0])
    seed[v] = 1.0 - c
    r = seed.copy()
    for _ in range(K):
        r = c * (m @ r) + seed
    return RankVector(int(v), r, float(c), float(K))


def rank_matrix(a, c: float, K: int, threads: int | None = None) -> np.ndarray:
    """Row v holds the truncated rank vector of node v.

    Columns are processed in fixed blocks, so the result does not depend
    on the thread count.
    """
    _check_c(c)
    m = _mat(a)
    n = m.shape[0]
    out = np.empty((n, n))
    blocks = [(s, min(s + _BLOCK, n)) for s in range(0, n, _BLOCK)]

    def run(block):
        s, e = block
        seed = np.zeros((n, e - s))
        seed[np.arange(s, e), np.arange(e - s)] = 1.0 - c
        r = seed.copy()
        for _ in range(K):
            r = c * (m @ r) + seed
        out[s:e] = r.T

    workers = threads or threads_from_env()
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, blocks))
    else:
        for b in blocks:
            run(b)
    return out


def fast_patch(g: Graph, a, c: float = 0.5, K: int = 20, p: int = 8,
               threads: int | None = None) -> PatchSet:
    if _mat(a).shape[0] != g.num_nodes:
        raise ShapeError("adjacency size does not match the graph")
    return top_p_columns(rank_matrix(a, c, K, threads), p, mode="fast")


def patch_induced_graph(ps: PatchSet) -> np.ndarray:
    """Undirected edges linking every node to its selected patch members."""
    owners = np.repeat(np.arange(ps.n), ps.p)
    pairs = np.stack([owners, ps.indices.reshape(-1)], axis=1)
    return canonical_edges(pairs, ps.n)


def save_patches(ps: PatchSet, path) -> None:
    p = ps.p
    header = ["node"] + [f"idx_{j + 1}" for j in range(p)] + [f"score_{j + 1}" for j in range(p)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for v in range(ps.n):
            idx = ",".join(str(int(i)) for i in ps.indices[v])
            sc = ",".join(format(float(s), ".17g") for s in ps.scores[v])
            fh.write(f"{v},{idx},{sc}\n")


def load_patches(path, mode: str = "spectral") -> PatchSet:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("node"):
        raise FormatError(f"{path} is not a patches.csv file")
    p = (len(lines[0].split(",")) - 1) // 2
    rows = [ln.split(",") for ln in lines[1:]]
    if any(len(r) != 2 * p + 1 for r in rows):
        raise FormatError(f"ragged rows in {path}")
    rows.sort(key=lambda r: int(r[0]))
    if [int(r[0]) for r in rows] != list(range(len(rows))):
        raise FormatError(f"{path} must list nodes 0..n-1 exactly once")
    idx = np.array([[int(x) for x in r[1:p + 1]] for r in rows], dtype=np.int64).reshape(-1, p)
    sc = np.array([[float(x) for x in r[p + 1:]] for r in rows]).reshape(-1, p)
    return PatchSet(idx, sc, mode)
