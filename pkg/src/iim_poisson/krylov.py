"""GMRES variants, the bordered solve for singular systems, and Arnoldi.

Vectors are plain 1-D arrays; operators and preconditioners are callables.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import ConvergenceError, IncompatibleError

STAGNATION_WINDOW = 20
STAGNATION_TOL = 1e-14


@dataclass
class SolverConfig:
    """``tol`` of ``None`` means ``1e-6 / nx`` (filled in by callers that know nx)."""

    tol: float | None = None
    max_iter: int = 500
    restart: int | None = None
    side: str = "left"
    strict: bool = False

    def __post_init__(self):
        if self.tol is not None and not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.restart is not None and self.restart < 1:
            raise ValueError("restart must be >= 1")
        if self.side not in ("left", "right"):
            raise ValueError(f"side must be 'left' or 'right', got {self.side!r}")

    def resolved_tol(self, nx):
        return self.tol if self.tol is not None else 1e-6 / nx


@dataclass
class SolveReport:
    iterations: int = 0
    history: list = field(default_factory=list)
    status: str = "converged"
    residual_kind: str = "preconditioned"
    alpha: float | None = None
    restarts: int = 0

    @property
    def converged(self):
        return self.status == "converged"

    @property
    def relative_history(self):
        h = np.asarray(self.history, dtype=float)
        return h / h[0] if h.size and h[0] > 0 else h


def _identity(v):
    return v


def _givens(a, b):
    if b == 0.0:
        return 1.0, 0.0
    r = np.hypot(a, b)
    return a / r, b / r


def _orthogonalise(w, basis, j):
    """Modified Gram-Schmidt against ``basis[:j+1]`` with one re-orthogonalisation pass."""
    # operators may hand back their input; never modify it in place
    w = np.array(w, dtype=float)
    h = np.zeros(j + 2)
    for _ in range(2):
        for i in range(j + 1):
            c = basis[i] @ w
            w -= c * basis[i]
            h[i] += c
    h[j + 1] = np.linalg.norm(w)
    return w, h


def _stagnated(hist, ref):
    if len(hist) <= STAGNATION_WINDOW or ref == 0:
        return False
    return abs(hist[-1] - hist[-1 - STAGNATION_WINDOW]) / ref < STAGNATION_TOL


def _finish(report, x, strict):
    if strict and not report.converged:
        raise ConvergenceError(f"solver stopped with status {report.status} after "
                               f"{report.iterations} iterations", report=report, x=x)
    return x, report


def gmres(A, b, M=None, config=None, x0=None, tol=None):
    """Left-preconditioned GMRES; stops when ``|M(b - Ax)| <= tol |M b|``.

    ``config.restart`` (default none) restarts the Krylov space.  The
    history records preconditioned residual norms, starting with the
    initial one.
    """
    config = config or SolverConfig(tol=tol if tol is not None else 1e-8)
    tol = tol if tol is not None else (config.tol if config.tol is not None else 1e-8)
    M = M or _identity
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    report = SolveReport(residual_kind="preconditioned")
    mb = np.linalg.norm(M(b))
    if mb == 0.0:
        report.history.append(0.0)
        return np.zeros_like(b), report
    target = tol * mb
    m = config.restart or config.max_iter
    while True:
        r = M(b - A(x))
        beta = np.linalg.norm(r)
        if not report.history:
            report.history.append(beta)
        if beta <= target:
            report.status = "converged"
            return _finish(report, x, config.strict)
        basis = [r / beta]
        hm = np.zeros((m + 1, m))
        cs, sn = np.zeros(m), np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        j_done = 0
        status = None
        for j in range(m):
            w, h = _orthogonalise(M(A(basis[j])), basis, j)
            for i in range(j):
                t = cs[i] * h[i] + sn[i] * h[i + 1]
                h[i + 1] = -sn[i] * h[i] + cs[i] * h[i + 1]
                h[i] = t
            if h[j] == 0.0 and h[j + 1] == 0.0:
                # invariant Krylov space that does not contain the solution
                status = "stagnation"
                break
            c, s = _givens(h[j], h[j + 1])
            cs[j], sn[j] = c, s
            h[j] = c * h[j] + s * h[j + 1]
            h[j + 1] = 0.0
            g[j + 1] = -s * g[j]
            g[j] = c * g[j]
            hm[:j + 2, j] = h
            j_done = j + 1
            report.iterations += 1
            res = abs(g[j + 1])
            report.history.append(res)
            nrm = np.linalg.norm(w)
            if res <= target:
                status = "converged"
                break
            if nrm == 0.0 or nrm < 1e-300:
                status = "converged" if res <= target else "breakdown"
                break
            if _stagnated(report.history, mb):
                status = "stagnation"
                break
            if report.iterations >= config.max_iter:
                status = "max_iterations"
                break
            basis.append(w / nrm)
        y = np.zeros(j_done)
        for i in range(j_done - 1, -1, -1):
            y[i] = (g[i] - hm[i, i + 1:j_done] @ y[i + 1:]) / hm[i, i]
        for i in range(j_done):
            x += y[i] * basis[i]
        if status is not None:
            if status == "breakdown":
                status = "stagnation"
            report.status = status
            return _finish(report, x, config.strict)
        report.restarts += 1


def fgmres(A, b, M=None, config=None, x0=None, tol=None):
    """Right-preconditioned flexible GMRES with restarts (default every 10 iterations).

    ``M`` may change from one call to the next; the preconditioned vectors
    are stored.  The history records true residual norms ``|b - Ax|``.
    """
    config = config or SolverConfig(tol=tol if tol is not None else 1e-8, restart=10, side="right")
    tol = tol if tol is not None else (config.tol if config.tol is not None else 1e-8)
    M = M or _identity
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    report = SolveReport(residual_kind="true")
    nb = np.linalg.norm(b)
    if nb == 0.0:
        report.history.append(0.0)
        return np.zeros_like(b), report
    target = tol * nb
    m = config.restart or config.max_iter
    first = True
    while True:
        r = b - A(x)
        beta = np.linalg.norm(r)
        if first:
            report.history.append(beta)
            first = False
        else:
            report.history[-1] = beta
        if beta <= target:
            report.status = "converged"
            return _finish(report, x, config.strict)
        basis = [r / beta]
        zs = []
        hm = np.zeros((m + 1, m))
        cs, sn = np.zeros(m), np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        j_done = 0
        status = None
        for j in range(m):
            z = M(basis[j])
            zs.append(z)
            w, h = _orthogonalise(A(z), basis, j)
            nrm = h[j + 1]
            for i in range(j):
                t = cs[i] * h[i] + sn[i] * h[i + 1]
                h[i + 1] = -sn[i] * h[i] + cs[i] * h[i + 1]
                h[i] = t
            if h[j] == 0.0 and h[j + 1] == 0.0:
                # invariant Krylov space that does not contain the solution
                status = "stagnation"
                break
            c, s = _givens(h[j], h[j + 1])
            cs[j], sn[j] = c, s
            h[j] = c * h[j] + s * h[j + 1]
            h[j + 1] = 0.0
            g[j + 1] = -s * g[j]
            g[j] = c * g[j]
            hm[:j + 2, j] = h
            j_done = j + 1
            report.iterations += 1
            res = abs(g[j + 1])
            report.history.append(res)
            if res <= target:
                status = "converged"
                break
            if nrm < 1e-300:
                status = "stagnation"
                break
            if _stagnated(report.history, nb):
                status = "stagnation"
                break
            if report.iterations >= config.max_iter:
                status = "max_iterations"
                break
            basis.append(w / nrm)
        y = np.zeros(j_done)
        for i in range(j_done - 1, -1, -1):
            y[i] = (g[i] - hm[i, i + 1:j_done] @ y[i + 1:]) / hm[i, i]
        for i in range(j_done):
            x += y[i] * zs[i]
        if status is not None:
            # report the true residual of the returned iterate
            report.history[-1] = float(np.linalg.norm(b - A(x)))
            if status == "converged" and report.history[-1] > target * (1 + 1e-6):
                status = None
                report.restarts += 1
                continue
            report.status = status
            return _finish(report, x, config.strict)
        report.restarts += 1


def solve(A, b, M=None, config=None, tol=None):
    config = config or SolverConfig()
    if config.side == "right":
        return fgmres(A, b, M, config, tol=tol)
    return gmres(A, b, M, config, tol=tol)


def solve_augmented(A, b, mask, M=None, gamma=0.0, config=None, tol=None):
    """Solve ``[[A, 1], [1^T, 0]] [x; alpha] = [b; gamma]`` for a singular ``A``.

    ``mask`` selects the unknowns (the constant vector is one on ``mask``).
    The preconditioner acts on the ``A`` block only.  Returns
    ``(x, alpha, report)``.
    """
    mask = np.asarray(mask, dtype=bool)
    ones = mask.astype(float)
    n = ones.size
    M = M or _identity

    def K(v):
        x, a = v[:n], v[n]
        out = np.empty(n + 1)
        out[:n] = A(x) + a * ones
        out[n] = ones @ x
        return out

    def P(v):
        out = np.empty(n + 1)
        out[:n] = M(v[:n])
        out[n] = v[n]
        return out

    rhs = np.append(np.asarray(b, dtype=float), gamma)
    v, report = solve(K, rhs, P, config, tol=tol)
    x, alpha = v[:n], float(v[n])
    report.alpha = alpha
    if abs(alpha) > 1e3 * max(np.linalg.norm(b), np.finfo(float).tiny):
        raise IncompatibleError(f"border unknown {alpha:.3e} is far larger than the data")
    return x, alpha, report


def exact_inverse(A, dofs, singular=False, row_scale=None):
    """Preconditioner ``r -> A^{-1} r`` from a sparse LU of ``A`` restricted to ``dofs``.

    ``row_scale`` (per node) is applied to both the matrix rows and the
    residual; it leaves the inverse unchanged but keeps pivoting sane when
    coefficients differ by orders of magnitude.  Singular matrices are
    factored in bordered form and the border unknown is dropped.
    """
    dofs = np.asarray(dofs)
    n_full = A.shape[0]
    sc = np.ones(dofs.size) if row_scale is None else np.asarray(row_scale, dtype=float)[dofs]
    a = sp.diags(sc) @ sp.csr_matrix(A)[dofs][:, dofs]
    if singular:
        ones = np.ones((dofs.size, 1))
        a = sp.bmat([[a, ones], [ones.T, None]])
    lu = splu(sp.csc_matrix(a))

    def apply(r):
        rhs = np.asarray(r, dtype=float).ravel()[dofs] * sc
        if singular:
            rhs = np.append(rhs, 0.0)
        out = np.zeros(n_full)
        out[dofs] = lu.solve(rhs)[:dofs.size]
        return out

    return apply


def arnoldi(A, v0, m):
    """``m`` Arnoldi steps with re-orthogonalised MGS.

    Returns ``(H, V, breakdown)`` with ``H`` of shape ``(k + 1, k)`` where
    ``k <= m`` is the number of completed steps.
    """
    v0 = np.asarray(v0, dtype=float)
    basis = [v0 / np.linalg.norm(v0)]
    h = np.zeros((m + 1, m))
    breakdown = False
    k = m
    for j in range(m):
        w, col = _orthogonalise(A(basis[j]), basis, j)
        h[:j + 2, j] = col
        if col[j + 1] <= 1e-12 * max(1.0, np.abs(col[:j + 1]).max()):
            breakdown = True
            k = j + 1
            break
        basis.append(w / col[j + 1])
    return h[:k + 1, :k], np.array(basis[:k]), breakdown
