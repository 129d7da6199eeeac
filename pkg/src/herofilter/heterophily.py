"""Node and spectral heterophily, plus numerical checks of the bounds
relating average filter response, spectral heterophily and error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DegenerateError, ParamError, ShapeError, SingularSpectrumError
from .graph import Graph
from .spectral import PolyFilter, SpectralDecomposition, filter_response

# 1/4 + 217/2304 + 1/(1+e)^2: per-node constant of the sigmoid error chain
C1 = 0.25 + 217.0 / 2304.0 + 1.0 / (1.0 + math.e) ** 2
# the normalized error is 2/n * Er, so its bound carries 2 * C1
BOUND_CONSTANT = 2.0 * C1


@dataclass
class HeterophilyProfile:
    h: np.ndarray
    h_hat: np.ndarray
    mean_h: float


@dataclass
class BoundReport:
    lhs: float
    rhs: float
    holds: bool | None
    excluded_indices: np.ndarray
    notes: str = ""
    extras: dict = field(default_factory=dict)


def node_heterophily(g: Graph) -> np.ndarray:
    """Fraction of each node's neighbors carrying a different label.

    Isolated nodes get 0.
    """
    n = g.num_nodes
    u, v = g.edges[:, 0], g.edges[:, 1]
    cross = (g.labels[u] != g.labels[v]).astype(np.float64)
    num = np.zeros(n)
    deg = np.zeros(n)
    np.add.at(num, u, cross)
    np.add.at(num, v, cross)
    np.add.at(deg, u, 1.0)
    np.add.at(deg, v, 1.0)
    h = np.zeros(n)
    nz = deg > 0
    h[nz] = num[nz] / deg[nz]
    return h


def spectral_heterophily(dec: SpectralDecomposition, h) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (dec.n,):
        raise ShapeError(f"heterophily vector has shape {h.shape}, expected ({dec.n},)")
    return dec.eigenvectors.T @ h


def heterophily_profile(g: Graph, dec: SpectralDecomposition) -> HeterophilyProfile:
    h = node_heterophily(g)
    return HeterophilyProfile(h, spectral_heterophily(dec, h), float(h.mean()))


def check_prop1(gdiag, h_hat, eps: float = 1e-9) -> BoundReport:
    """Lower bound on the average filter response by spectral heterophily.

    Always verifies the weighted AM-GM step
    ``sum(w_i |hh_i|) >= prod(|hh_i| ** w_i)`` with ``w = g / sum(g)``,
    which holds unconditionally. The closed-form right-hand side is
    reported only when its log-denominator exceeds ``eps``; ``holds``
    is None otherwise.

    ``extras["stated_bound_supported"]`` is True when the rearrangement
    leading to the closed form is valid for this instance, i.e. the
    denominator is positive and ``sum((1 - g_i) log|hh_i|) <= 0``.
    """
    g = np.asarray(gdiag, dtype=np.float64)
    hh = np.asarray(h_hat, dtype=np.float64)
    if g.shape != hh.shape or g.ndim != 1:
        raise ShapeError(f"shape mismatch: g {g.shape}, h_hat {hh.shape}")
    if (g < 0).any() or (g > 1).any():
        raise ParamError("filter response must lie in [0, 1]")
    n = g.shape[0]
    if g.sum() <= 0:
        raise DegenerateError("filter response sums to zero")
    absh = np.abs(hh)
    inc = absh >= eps
    excluded = np.flatnonzero(~inc)
    if not inc.any():
        raise DegenerateError("every |h_hat_i| is below eps")
    gi, ai = g[inc], absh[inc]
    gsum = gi.sum()
    if gsum <= 0:
        raise DegenerateError("filter response vanishes on every included index")

    w = gi / gsum
    logs = np.log(ai)
    am = float(np.sum(w * ai))
    gm = float(np.exp(np.sum(w * logs)))
    amgm_holds = am - gm >= -1e-12 * max(1.0, abs(am))

    lhs = float(g.mean())
    denom = float(np.log(np.sum(gi * ai)) - np.log(gsum))
    if denom > eps:
        rhs = float(logs.sum() / (n * denom))
        holds = lhs >= rhs
    else:
        rhs = math.nan
        holds = None
    supported = denom > eps and float(np.sum((1.0 - gi) * logs)) <= 0.0

    notes = (f"weighted AM-GM: {am:.6g} >= {gm:.6g} ({'ok' if amgm_holds else 'VIOLATED'}); "
             f"log-denominator {denom:.6g}")
    if holds is None:
        notes += " <= eps, closed-form bound not evaluated"
    return BoundReport(lhs, rhs, holds, excluded, notes, {
        "amgm_lhs": am, "amgm_rhs": gm, "amgm_holds": bool(amgm_holds),
        "log_denominator": denom, "stated_bound_supported": bool(supported),
    })


def construct_aligning_weights(labels, lam, order: int, num_classes: int | None = None):
    """Build tanh-filter weights whose response is proportional to ``labels``.

    Each power contributes an equal share: ``tanh(w[k, i] * lam_i**k) =
    c * y_i / K`` with ``c = K / (2 (C - 1))``, which keeps every target
    inside [0, 1/2] where atanh is well conditioned.

    Returns (filter, cosine(g(lam), labels)).
    """
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    lam = np.asarray(lam, dtype=np.float64).reshape(-1)
    if y.shape != lam.shape:
        raise ShapeError(f"labels {y.shape} and eigenvalues {lam.shape} differ")
    if order < 1:
        raise ParamError("order must be >= 1")
    if not np.any(y != 0):
        raise DegenerateError("all-zero label vector has no direction to align with")
    if (y < 0).any():
        raise ParamError("labels must be non-negative class ids")
    powers = lam[None, :] ** np.arange(1, order + 1)[:, None]
    if np.any(powers == 0.0):
        raise SingularSpectrumError("a zero eigenvalue (or vanishing power) blocks the construction")
    c_classes = int(num_classes) if num_classes is not None else int(y.max()) + 1
    c_classes = max(c_classes, 2)
    scale = order / (2.0 * (c_classes - 1))
    target = scale * y / order
    w = np.arctanh(target)[None, :] / powers
    f = PolyFilter(w, activation="tanh")
    resp = filter_response(f, lam)
    align = float(resp @ y / (np.linalg.norm(resp) * np.linalg.norm(y)))
    return f, align


def clamp(x, a):
    """psi_a(x) = min(max(x, -a), a)."""
    a = np.abs(a)
    return np.minimum(np.maximum(x, -a), a)


def filtered_difference(gdiag_lap, dec: SpectralDecomposition, x0, x1) -> np.ndarray:
    u = dec.eigenvectors
    diff = np.asarray(x1, dtype=np.float64) - np.asarray(x0, dtype=np.float64)
    return u @ (np.asarray(gdiag_lap, dtype=np.float64) * (u.T @ diff))


def _check_pairing(dec, x0, x1, y0, y1=None):
    n = dec.n
    arrs = [np.asarray(a, dtype=np.float64) for a in (x0, x1, y0)]
    if y1 is not None:
        arrs.append(np.asarray(y1, dtype=np.float64))
    for a in arrs:
        if a.shape not in ((n,), (n, 1)):
            raise ShapeError(f"paired vectors must be single-column length {n}, got {a.shape}")
    return [a.reshape(n) for a in arrs]


def theorem_error_oracle(gdiag_lap, dec: SpectralDecomposition, x0, x1, y0, y1=None) -> float:
    """Er = sum_l (sigmoid(-z_l) - y0_l)^2 with z = U g U^T (x1 - x0).

    Two-class softmax error on the class-0 column; the normalized error
    over both columns is ``2 / n * Er`` when ``y1 = 1 - y0``.
    """
    x0, x1, y0 = _check_pairing(dec, x0, x1, y0, y1)[:3]
    z = filtered_difference(gdiag_lap, dec, x0, x1)
    return float(np.sum((expit(-z) - y0) ** 2))


def theorem_bound(gdiag_lap, delta, eta, h_hat, eps: float = 1e-9,
                  error: float | None = None) -> BoundReport:
    """Right-hand side of the heterophily-aware error bound.

    ``delta`` and ``eta`` are the spectral coefficients of ``y1 - y0`` and
    ``x1 - x0``. The report's ``lhs`` is ``error`` (normalized) when given.
    ``holds`` is evaluated only when the log-denominator exceeds ``eps``.
    """
    g = np.asarray(gdiag_lap, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    hh = np.asarray(h_hat, dtype=np.float64)
    if not (g.shape == delta.shape == eta.shape == hh.shape) or g.ndim != 1:
        raise ShapeError("g, delta, eta and h_hat must share one length")
    n = g.shape[0]

    gd = g * delta
    active = np.abs(gd) > eps
    radius = np.full(n, np.inf)
    radius[active] = 1.0 / np.abs(gd[active])
    eta_t = clamp(eta, radius)

    idx_min = (np.abs(g) > eps) & (np.abs(delta) > eps) & (np.abs(eta) > eps)
    if not idx_min.any():
        raise DegenerateError("no index with nonzero g, delta and eta")
    m_g = float(np.min(eta_t[idx_min] * delta[idx_min]))

    support = (np.abs(delta) > eps) & (np.abs(eta_t) > eps)
    log_ok = np.abs(hh) > eps
    excluded = np.flatnonzero(support & ~log_ok)
    idx = support & log_ok
    if not idx.any():
        raise DegenerateError("empty index set after excluding tiny |h_hat|")

    s_log = float(np.sum(np.log(np.abs(hh[idx]))))
    weighted = float(np.sum(g[idx] * np.abs(hh[idx])))
    total = float(np.sum(g[idx]))
    if weighted > 0 and total > 0:
        denom = 2.0 * n * (math.log(weighted) - math.log(total))
    else:
        denom = math.nan
    if math.isfinite(denom) and denom != 0.0:
        rhs = BOUND_CONSTANT - m_g * s_log / denom
    else:
        rhs = math.nan

    lhs = math.nan if error is None else float(error)
    if denom > eps and error is not None:
        holds = bool(lhs <= rhs)
        notes = f"error {lhs:.6g} vs bound {rhs:.6g}"
    else:
        holds = None
        notes = f"log-denominator {denom:.6g} <= eps: bound hypothesis fails, not asserted" \
            if not denom > eps else "no error supplied"
    return BoundReport(lhs, rhs, holds, excluded, notes, {
        "c1": C1, "bound_constant": BOUND_CONSTANT, "m_g": m_g,
        "sum_log_h_hat": s_log, "log_denominator": denom,
    })


def theorem_check(gdiag_lap, dec: SpectralDecomposition, x0, x1, y0, y1, h, eps: float = 1e-9) -> BoundReport:
    """Evaluate both sides of the error bound on one paired instance."""
    x0, x1, y0, y1 = _check_pairing(dec, x0, x1, y0, y1)
    u = dec.eigenvectors
    delta = u.T @ (y1 - y0)
    eta = u.T @ (x1 - x0)
    err = 2.0 / dec.n * theorem_error_oracle(gdiag_lap, dec, x0, x1, y0, y1)
    return theorem_bound(gdiag_lap, delta, eta, u.T @ np.asarray(h, dtype=np.float64), eps, error=err)
