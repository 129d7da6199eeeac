"""Eigendecomposition, graph Fourier transform and spectral filters.

Eigenvalues ``lam`` always refer to the normalized adjacency; the
normalized Laplacian spectrum is ``1 - lam``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._jacobi import cyclic_jacobi
from .errors import NumericalError, ShapeError
from .graph import NormalizedAdjacency

ACTIVATIONS = ("identity", "tanh", "relu")


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sweeps: int = 0
    method: str = "jacobi"

    @property
    def n(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def laplacian_eigenvalues(self) -> np.ndarray:
        return 1.0 - self.eigenvalues


def _as_matrix(a) -> np.ndarray:
    m = a.matrix if isinstance(a, NormalizedAdjacency) else a
    m = np.array(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {m.shape}")
    return m


def fix_signs(u: np.ndarray, rel_tol: float = 1e-9) -> np.ndarray:
    """Flip columns so the largest-magnitude entry is positive.

    Entries within ``rel_tol`` (relative) of the column maximum count as
    tied; the lowest such index decides the sign.
    """
    u = u.copy()
    mag = np.abs(u)
    top = mag.max(axis=0)
    for j in range(u.shape[1]):
        if top[j] == 0.0:
            continue
        i = int(np.flatnonzero(mag[:, j] >= top[j] * (1.0 - rel_tol))[0])
        if u[i, j] < 0:
            u[:, j] = -u[:, j]
    return u


def eigendecompose(a, method: str = "jacobi", tol: float = 1e-12,
                   max_sweeps: int = 100) -> SpectralDecomposition:
    """Symmetric eigendecomposition with ascending eigenvalues.

    ``method="jacobi"`` runs cyclic Jacobi rotations until the off-diagonal
    Frobenius norm is at most ``tol * ||A||_F``. ``method="lapack"`` defers
    to ``numpy.linalg.eigh``. Both apply the same ordering and sign rule.
    """
    m = _as_matrix(a)
    if not np.allclose(m, m.T, rtol=0.0, atol=1e-12):
        raise ShapeError("matrix is not symmetric")
    m = 0.5 * (m + m.T)
    n = m.shape[0]
    sweeps = 0
    if method == "jacobi":
        scale = np.linalg.norm(m)
        w, vt, sweeps, ok = cyclic_jacobi(m.copy(), tol * scale, max_sweeps)
        if not ok:
            raise NumericalError(f"Jacobi did not converge within {max_sweeps} sweeps (n={n})")
        u = vt.T
    elif method == "lapack":
        w, u = np.linalg.eigh(m)
    else:
        raise ValueError(f"unknown eigensolver {method!r}")
    if not (np.isfinite(w).all() and np.isfinite(u).all()):
        raise NumericalError("non-finite eigenpairs")
    order = np.argsort(w, kind="stable")
    w = np.ascontiguousarray(w[order])
    u = fix_signs(np.ascontiguousarray(u[:, order]))
    return SpectralDecomposition(w, u, int(sweeps), method)


def graph_fourier(u: np.ndarray, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != u.shape[0]:
        raise ShapeError(f"signal length {x.shape[0]} != {u.shape[0]}")
    return u.T @ x


def inverse_graph_fourier(u: np.ndarray, xhat: np.ndarray) -> np.ndarray:
    xhat = np.asarray(xhat, dtype=np.float64)
    if xhat.shape[0] != u.shape[1]:
        raise ShapeError(f"coefficient length {xhat.shape[0]} != {u.shape[1]}")
    return u @ xhat


# ---------------------------------------------------------------------------
# activations (all satisfy f(0) = 0)
# ---------------------------------------------------------------------------

def activate(name: str, x):
    if name == "identity":
        return np.asarray(x, dtype=np.float64)
    if name == "tanh":
        return np.tanh(x)
    if name == "relu":
        return np.maximum(x, 0.0)
    raise ValueError(f"unknown activation {name!r}")


def activate_grad(name: str, x):
    x = np.asarray(x, dtype=np.float64)
    if name == "identity":
        return np.ones_like(x)
    if name == "tanh":
        return 1.0 - np.tanh(x) ** 2
    if name == "relu":
        return (x > 0).astype(np.float64)
    raise ValueError(f"unknown activation {name!r}")


@dataclass(eq=False)
class PolyFilter:
    """Adaptive polynomial filter g(lam)_i = sum_k act(w[k, i] * lam_i**k).

    ``weights`` has shape (K, n), or (K, 1) for the shared-parameter
    variant where one scalar per order is broadcast over all eigenvalues.
    Row k - 1 holds the weights of power k.
    """

    weights: np.ndarray
    activation: str = "tanh"
    apply_activation_in_relevance: bool = True

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim == 1:
            w = w[None, :]
        if w.ndim != 2 or w.shape[0] < 1:
            raise ShapeError(f"weights must be (K, n) with K >= 1, got {w.shape}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.weights = w

    @classmethod
    def constant(cls, order: int, n: int, value: float = 1.0, shared: bool = False, **kw):
        return cls(np.full((order, 1 if shared else n), float(value)), **kw)

    @property
    def order(self) -> int:
        return self.weights.shape[0]

    @property
    def shared(self) -> bool:
        return self.weights.shape[1] == 1

    def copy(self) -> "PolyFilter":
        return PolyFilter(self.weights.copy(), self.activation, self.apply_activation_in_relevance)

    def _check(self, lam: np.ndarray):
        if not self.shared and self.weights.shape[1] != lam.shape[0]:
            raise ShapeError(f"filter has {self.weights.shape[1]} weights per order, spectrum has {lam.shape[0]}")

    def _powers(self, lam: np.ndarray) -> np.ndarray:
        k = np.arange(1, self.order + 1)[:, None]
        return lam[None, :] ** k


def filter_response(f: PolyFilter, lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)
    f._check(lam)
    return activate(f.activation, f.weights * f._powers(lam)).sum(axis=0)


def relevance_response(f: PolyFilter, lam) -> np.ndarray:
    """Diagonal used to build the relevance matrix (activation optional)."""
    lam = np.asarray(lam, dtype=np.float64)
    if f.apply_activation_in_relevance:
        return filter_response(f, lam)
    f._check(lam)
    return (f.weights * f._powers(lam)).sum(axis=0)


def relevance_response_grad(f: PolyFilter, lam, dq: np.ndarray) -> np.ndarray:
    """Pull a gradient on the relevance diagonal back to ``f.weights``."""
    lam = np.asarray(lam, dtype=np.float64)
    powers = f._powers(lam)
    z = f.weights * powers
    local = powers * (activate_grad(f.activation, z) if f.apply_activation_in_relevance else 1.0)
    grad = local * dq[None, :]
    if f.shared:
        return grad.sum(axis=1, keepdims=True)
    return grad


def low_pass_reference(lam) -> np.ndarray:
    """1 / (1 + x) on Laplacian eigenvalues x = 1 - lam, clipped into [0, 2]."""
    x = np.clip(1.0 - np.asarray(lam, dtype=np.float64), 0.0, 2.0)
    return 1.0 / (1.0 + x)


def band_filter(lam, lo: float, hi: float, tol: float = 1e-12) -> np.ndarray:
    """Indicator of lo <= 1 - lam < hi; the band ending at 2 is closed.

    Laplacian eigenvalues are clipped into [0, 2] first so round-off
    just outside the range cannot drop an eigenvalue from every band.
    """
    if not lo < hi:
        raise ValueError(f"band needs lo < hi, got [{lo}, {hi})")
    x = np.clip(1.0 - np.asarray(lam, dtype=np.float64), 0.0, 2.0)
    inside = (x >= lo) & (x < hi)
    if hi >= 2.0 - tol:
        inside |= (x >= lo) & (x <= hi)
    return inside.astype(np.float64)


def relevance_from_response(dec: SpectralDecomposition, q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (dec.n,):
        raise ShapeError(f"response length {q.shape} != ({dec.n},)")
    u = dec.eigenvectors
    r = (u * q[None, :]) @ u.T
    return 0.5 * (r + r.T)


def relevance_matrix(dec: SpectralDecomposition, f: PolyFilter) -> np.ndarray:
    """R = U diag(q) U^T with q from :func:`relevance_response`."""
    return relevance_from_response(dec, relevance_response(f, dec.eigenvalues))


def gather_relevance(dec: SpectralDecomposition, q: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """Entries R[v, indices[v, j]] without forming R."""
    u = dec.eigenvectors
    return np.einsum("vi,vji->vj", u * q[None, :], u[indices], optimize=True)


def gather_relevance_grad(dec: SpectralDecomposition, indices: np.ndarray, dscores: np.ndarray) -> np.ndarray:
    """Gradient of sum(dscores * gather_relevance(...)) w.r.t. q."""
    u = dec.eigenvectors
    return np.einsum("vj,vi,vji->i", dscores, u, u[indices], optimize=True)
