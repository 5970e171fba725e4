"""Small dense kernels: pivoted QR least squares, LU with partial pivoting,
and shifted-QR eigenvalues of upper Hessenberg matrices.

Sizes here are tiny (tens to a few hundred rows), so everything is written
directly on numpy arrays.  Pivot ties always go to the smallest index.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoConvergenceError, SingularMatrixError

# Instrumentation used by the stencil operation-count tests.
COUNTERS = {"qr": 0, "trisolve": 0}


def reset_counters():
    for key in COUNTERS:
        COUNTERS[key] = 0


@dataclass
class PivotedQR:
    """``A[:, perm] = Q @ R`` with ``Q`` thin (m x p) and ``R`` upper triangular."""

    q: np.ndarray
    r: np.ndarray
    perm: np.ndarray
    rank: int

    def solve(self, b):
        """Least-squares solution of ``A x = b`` (b may be 2-D)."""
        b = np.asarray(b, dtype=float)
        k = self.rank
        qtb = self.q[:, :k].T @ b
        z = solve_upper(self.r[:k, :k], qtb)
        x = np.zeros((self.r.shape[1],) + b.shape[1:])
        x[self.perm[:k]] = z
        return x

    def row_functional(self, v):
        """Coefficients ``c`` with ``v . lstsq(A, b) == c . b`` for every ``b``.

        One triangular solve with ``R^T`` and one product with ``Q``.
        """
        k = self.rank
        vp = np.asarray(v, dtype=float)[self.perm[:k]]
        z = solve_lower(self.r[:k, :k].T, vp)
        return self.q[:, :k] @ z


def solve_upper(r, b):
    COUNTERS["trisolve"] += 1
    n = r.shape[0]
    x = np.array(b, dtype=float, copy=True)
    for i in range(n - 1, -1, -1):
        if i + 1 < n:
            x[i] -= r[i, i + 1:] @ x[i + 1:]
        x[i] /= r[i, i]
    return x


def solve_lower(l, b):
    COUNTERS["trisolve"] += 1
    n = l.shape[0]
    x = np.array(b, dtype=float, copy=True)
    for i in range(n):
        if i:
            x[i] -= l[i, :i] @ x[:i]
        x[i] /= l[i, i]
    return x


def qr_pivoted(a, tol=1e-10):
    """Householder QR with column pivoting.

    Numerical rank counts diagonal entries of R above ``tol * |R[0, 0]|``.
    """
    COUNTERS["qr"] += 1
    a = np.array(a, dtype=float, copy=True)
    m, p = a.shape
    if m < p:
        raise ValueError(f"need at least as many rows as columns, got {m}x{p}")
    perm = np.arange(p)
    vs = []
    for j in range(p):
        sub = a[j:, j:]
        rem = np.einsum("ij,ij->j", sub, sub)
        piv = j + int(np.argmax(rem))
        if piv != j:
            a[:, [j, piv]] = a[:, [piv, j]]
            perm[[j, piv]] = perm[[piv, j]]
        x = a[j:, j]
        nx = np.sqrt(x @ x)
        v = x.copy()
        if nx == 0.0:
            vs.append(None)
            continue
        alpha = -nx if x[0] >= 0 else nx
        v[0] -= alpha
        v /= np.sqrt(v @ v)
        a[j:, j:] -= 2.0 * np.outer(v, v @ a[j:, j:])
        vs.append(v)
    r = np.triu(a[:p, :])
    q = np.eye(m, p)
    for j in range(p - 1, -1, -1):
        v = vs[j]
        if v is None:
            continue
        q[j:, :] -= 2.0 * np.outer(v, v @ q[j:, :])
    d = np.abs(np.diag(r))
    rank = 0 if d[0] == 0 else int(np.sum(d > tol * d[0]))
    return PivotedQR(q=q, r=r, perm=perm, rank=rank)


def lsq_solve_pivoted(a, b, tol=1e-10):
    """Column-wise least squares; returns ``(x, rank)`` and lets the caller judge rank < p."""
    f = qr_pivoted(a, tol)
    return f.solve(b), f.rank


@dataclass
class LUFactor:
    lu: np.ndarray
    piv: np.ndarray

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        x = b[self.piv].copy()
        n = self.lu.shape[0]
        for i in range(1, n):
            x[i] -= self.lu[i, :i] @ x[:i]
        for i in range(n - 1, -1, -1):
            if i + 1 < n:
                x[i] -= self.lu[i, i + 1:] @ x[i + 1:]
            x[i] /= self.lu[i, i]
        return x


def lu_factor(a):
    a = np.array(a, dtype=float, copy=True)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("LU needs a square matrix")
    scale = np.max(np.sum(np.abs(a), axis=1)) if n else 0.0
    piv = np.arange(n)
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if abs(a[p, k]) <= 1e-14 * scale:
            raise SingularMatrixError(f"pivot {k} vanishes (|a| = {abs(a[p, k]):.3e})")
        if p != k:
            a[[k, p]] = a[[p, k]]
            piv[[k, p]] = piv[[p, k]]
        a[k + 1:, k] /= a[k, k]
        a[k + 1:, k + 1:] -= np.outer(a[k + 1:, k], a[k, k + 1:])
    return LUFactor(lu=a, piv=piv)


def lu_solve(a, b):
    return lu_factor(a).solve(b)


def _givens(a, b):
    """Complex rotation (c real) with [c s; -conj(s) c] [a; b] = [r; 0]."""
    if b == 0:
        return 1.0, 0.0
    if a == 0:
        return 0.0, np.conj(b) / abs(b)
    t = np.hypot(abs(a), abs(b))
    c = abs(a) / t
    s = (a / abs(a)) * np.conj(b) / t
    return c, s


def hessenberg_eigs(h, max_sweeps_per_eig=100):
    """Eigenvalues of an upper Hessenberg matrix by Wilkinson-shifted complex QR.

    Deflation happens when a subdiagonal entry drops below machine
    precision relative to its diagonal neighbours.  Rotations are confined
    to the active block since no Schur vectors are wanted.
    """
    h = np.array(h, dtype=complex, copy=True)
    m = h.shape[0]
    if m == 0:
        return np.zeros(0, dtype=complex)
    eps = np.finfo(float).eps
    hnorm = max(np.abs(h).max(), np.finfo(float).tiny)
    eigs = np.zeros(m, dtype=complex)
    hi = m - 1
    sweeps = 0
    its = 0
    while hi >= 0:
        if hi == 0:
            eigs[0] = h[0, 0]
            break
        # find the start of the active unreduced block
        lo = hi
        while lo > 0:
            s = abs(h[lo - 1, lo - 1]) + abs(h[lo, lo])
            if s == 0:
                s = hnorm
            if abs(h[lo, lo - 1]) <= eps * s:
                h[lo, lo - 1] = 0.0
                break
            lo -= 1
        if lo == hi:
            eigs[hi] = h[hi, hi]
            hi -= 1
            its = 0
            continue
        sweeps += 1
        its += 1
        if sweeps > max_sweeps_per_eig * m:
            raise NoConvergenceError(f"Hessenberg QR did not converge after {sweeps} sweeps")
        a, b = h[hi - 1, hi - 1], h[hi - 1, hi]
        c, d = h[hi, hi - 1], h[hi, hi]
        tr = a + d
        det = a * d - b * c
        disc = np.sqrt(tr * tr / 4 - det)
        l1, l2 = tr / 2 + disc, tr / 2 - disc
        mu = l1 if abs(l1 - d) < abs(l2 - d) else l2
        if its % 11 == 10:
            mu = d + abs(h[hi, hi - 1]) * (1 + 1j)  # exceptional shift
        for i in range(lo, hi + 1):
            h[i, i] -= mu
        rots = []
        for k in range(lo, hi):
            cc, ss = _givens(h[k, k], h[k + 1, k])
            rots.append((cc, ss))
            row_k = h[k, k:hi + 1].copy()
            row_k1 = h[k + 1, k:hi + 1].copy()
            h[k, k:hi + 1] = cc * row_k + ss * row_k1
            h[k + 1, k:hi + 1] = -np.conj(ss) * row_k + cc * row_k1
        for idx, k in enumerate(range(lo, hi)):
            cc, ss = rots[idx]
            top = min(k + 2, hi) + 1
            col_k = h[lo:top, k].copy()
            col_k1 = h[lo:top, k + 1].copy()
            h[lo:top, k] = cc * col_k + np.conj(ss) * col_k1
            h[lo:top, k + 1] = -ss * col_k + cc * col_k1
        for i in range(lo, hi + 1):
            h[i, i] += mu
    return eigs
