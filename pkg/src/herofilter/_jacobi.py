"""Cyclic Jacobi eigenvalue kernel for dense symmetric matrices.

Each sweep visits every (p, q) pair exactly once, grouped into n - 1
rounds of disjoint pairs (round-robin tournament order). Disjoint
rotations commute, so a round is applied as one row pass and one
column pass over the matrix, which keeps memory access row-major.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def offdiag_norm(a):
    n = a.shape[0]
    s = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            s += a[i, j] * a[i, j]
    return math.sqrt(2.0 * s)


@njit(cache=True)
def cyclic_jacobi(a, tol, max_sweeps):
    """Diagonalize symmetric ``a`` in place.

    Returns (eigenvalues, vt, sweeps, converged); rows of ``vt`` are the
    eigenvectors. Converged means off-diagonal Frobenius norm <= tol.
    """
    n = a.shape[0]
    m = n + (n % 2)
    half = m // 2
    vt = np.eye(n)
    players = np.arange(m)
    P = np.empty(half, np.int64)
    Q = np.empty(half, np.int64)
    C = np.empty(half)
    S = np.empty(half)
    skip = tol * 1e-6 / max(n, 1)
    sweeps = 0
    converged = offdiag_norm(a) <= tol
    while not converged and sweeps < max_sweeps:
        for _ in range(m - 1):
            cnt = 0
            for i in range(half):
                x = players[i]
                y = players[m - 1 - i]
                if x >= n or y >= n:
                    continue
                p = min(x, y)
                q = max(x, y)
                apq = a[p, q]
                if abs(apq) <= skip:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + math.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                P[cnt] = p
                Q[cnt] = q
                C[cnt] = c
                S[cnt] = t * c
                cnt += 1
            if cnt > 0:
                # rows: J^T A, and the eigenvector rows
                for j in range(cnt):
                    p = P[j]
                    q = Q[j]
                    c = C[j]
                    s = S[j]
                    for k in range(n):
                        x = a[p, k]
                        y = a[q, k]
                        a[p, k] = c * x - s * y
                        a[q, k] = s * x + c * y
                    for k in range(n):
                        x = vt[p, k]
                        y = vt[q, k]
                        vt[p, k] = c * x - s * y
                        vt[q, k] = s * x + c * y
                # columns: (J^T A) J, one matrix row at a time
                for k in range(n):
                    for j in range(cnt):
                        p = P[j]
                        q = Q[j]
                        c = C[j]
                        s = S[j]
                        x = a[k, p]
                        y = a[k, q]
                        a[k, p] = c * x - s * y
                        a[k, q] = s * x + c * y
                for j in range(cnt):
                    a[P[j], Q[j]] = 0.0
                    a[Q[j], P[j]] = 0.0
            last = players[m - 1]
            for i in range(m - 1, 1, -1):
                players[i] = players[i - 1]
            players[1] = last
        sweeps += 1
        converged = offdiag_norm(a) <= tol
    w = np.empty(n)
    for i in range(n):
        w[i] = a[i, i]
    return w, vt, sweeps, converged
