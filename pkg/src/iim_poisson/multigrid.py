"""Geometric multigrid on the Shortley-Weller discretisation.

Levels halve the node count per axis down to ``nx = 8`` and every level
re-intersects the geometry at its own spacing.  Smoothing is red-black
Gauss-Seidel, restriction is half weighting on the full grid, and the
coarsest level is solved with a dense LU factorisation (bordered when the
level operator is singular).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadResolutionError, ZeroDiagonalError
from .geometry import Condition
from .linalg import lu_factor
from .shortley_weller import SWOperator

COARSEST_NX = 8


def levels_for(nx, coarsest=COARSEST_NX):
    """Resolutions ``nx, nx/2, ..., coarsest``; raises unless ``nx = coarsest * 2^L``."""
    out = [int(nx)]
    while out[-1] > coarsest:
        if out[-1] % 2:
            break
        out.append(out[-1] // 2)
    if out[-1] != coarsest:
        raise BadResolutionError(f"nx = {nx} is not {coarsest} * 2^L")
    return out


def restrict_halfweight(fine):
    """Half-weighted restriction on a periodic grid: centre 1/2, edge neighbours 1/8."""
    f = np.asarray(fine, dtype=float)
    acc = 0.5 * f
    for axis in (0, 1):
        acc = acc + 0.125 * (np.roll(f, 1, axis=axis) + np.roll(f, -1, axis=axis))
    return acc[::2, ::2].copy()


def prolong_bilinear(coarse):
    """Standard bilinear interpolation onto the periodic grid with twice the nodes."""
    c = np.asarray(coarse, dtype=float)
    nx, ny = c.shape
    out = np.zeros((2 * nx, 2 * ny))
    cx = np.roll(c, -1, axis=0)
    cy = np.roll(c, -1, axis=1)
    cxy = np.roll(cx, -1, axis=1)
    out[::2, ::2] = c
    out[1::2, ::2] = 0.5 * (c + cx)
    out[::2, 1::2] = 0.5 * (c + cy)
    out[1::2, 1::2] = 0.25 * (c + cx + cy + cxy)
    return out


def prolong_domain_aware(coarse, coarse_mask):
    """Average only the coarse neighbours inside the domain; zero when there are none."""
    c = np.where(coarse_mask, coarse, 0.0)
    m = np.asarray(coarse_mask, dtype=float)
    num = prolong_bilinear(c)
    den = prolong_bilinear(m)
    out = np.zeros_like(num)
    ok = den > 1e-12
    out[ok] = num[ok] / den[ok]
    return out


@dataclass
class CycleReport:
    residuals: list = field(default_factory=list)

    @property
    def factors(self):
        r = np.asarray(self.residuals, dtype=float)
        if r.size < 2:
            return np.zeros(0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return r[1:] / r[:-1]

    def mean_factor(self, first=2, last=10):
        """Geometric mean of ``rho_i`` for ``first <= i <= last`` (1-based)."""
        f = self.factors[first - 1:last]
        f = f[np.isfinite(f) & (f > 0)]
        if f.size == 0:
            return 0.0
        return float(np.exp(np.mean(np.log(f))))


class Level:
    """One grid of the hierarchy with its assembled operator and colour masks."""

    def __init__(self, sw):
        self.sw = sw
        self.grid = sw.grid
        self.A = sw.A
        self.diag = sw.diagonal
        self.domain = sw.domain
        dom_diag = self.diag[self.domain]
        if np.any(dom_diag == 0.0):
            raise ZeroDiagonalError(f"zero diagonal on the nx = {self.grid.nx} level")
        ix, iy = np.divmod(np.arange(self.grid.size), self.grid.ny)
        red = (ix + iy) % 2 == 0
        self.colors = (red & self.domain, ~red & self.domain)
        self.inv_diag = np.zeros(self.grid.size)
        self.inv_diag[self.domain] = 1.0 / dom_diag
        self._coarse = None

    def residual(self, u, f):
        r = f - self.A @ u
        r[~self.domain] = 0.0
        return r

    def coarse_solver(self):
        if self._coarse is None:
            dofs = np.flatnonzero(self.domain)
            a = self.A[dofs][:, dofs].toarray()
            singular = self.sw.is_singular and not self.sw.pinned.any()
            if singular:
                n = a.shape[0]
                b = np.zeros((n + 1, n + 1))
                b[:n, :n] = a
                b[:n, n] = 1.0
                b[n, :n] = 1.0
                a = b
            self._coarse = (dofs, lu_factor(a), singular)
        return self._coarse


def smooth_rbgs(level, u, f, sweeps):
    """Red (i + j even) then black Gauss-Seidel half sweeps, in place."""
    for _ in range(sweeps):
        for color in level.colors:
            r = f - level.A @ u
            u[color] += r[color] * level.inv_diag[color]
    return u


class MGHierarchy:
    """Stack of Shortley-Weller levels from ``fine`` down to ``nx = 8``.

    Parameters
    ----------
    fine : SWOperator
        Finest-level operator; coarser levels are rebuilt from its geometry.
    nu1, nu2 : int
        Pre- and post-smoothing sweeps.
    cycle : {"v", "w"}
    prolongation : {"auto", "bilinear", "domain"}
        ``auto`` picks domain-aware averaging for Neumann conditions and
        bilinear interpolation otherwise.
    """

    def __init__(self, fine, coarsest_nx=COARSEST_NX, nu1=2, nu2=2, cycle="v", prolongation="auto"):
        sizes = levels_for(fine.grid.nx, coarsest_nx)
        if fine.grid.nx != fine.grid.ny:
            raise BadResolutionError("multigrid needs a square grid")
        self.levels = [Level(fine)]
        grid = fine.grid
        for _ in sizes[1:]:
            grid = grid.coarsen()
            sw = SWOperator(grid, fine.geometry, fine.condition, fine.beta_plus, fine.beta_minus,
                            shifted=fine.shifted, beta_divided=True)
            self.levels.append(Level(sw))
        self.nu1 = nu1
        self.nu2 = nu2
        self.cycle_kind = cycle.lower()
        if self.cycle_kind not in ("v", "w"):
            raise ValueError(f"cycle must be 'v' or 'w', got {cycle!r}")
        if prolongation == "auto":
            prolongation = "domain" if fine.condition is Condition.NEUMANN else "bilinear"
        self.prolongation = prolongation

    @property
    def fine(self):
        return self.levels[0]

    def _prolong(self, coarse_level, ec):
        c = ec.reshape(coarse_level.grid.shape)
        if self.prolongation == "domain":
            return prolong_domain_aware(c, coarse_level.domain.reshape(c.shape)).ravel()
        return prolong_bilinear(c).ravel()

    def _solve_coarse(self, level, f):
        dofs, lu, singular = level.coarse_solver()
        rhs = f[dofs]
        if singular:
            rhs = np.append(rhs, 0.0)
        x = lu.solve(rhs)
        u = np.zeros(level.grid.size)
        u[dofs] = x[:dofs.size]
        return u

    def _cycle(self, l, u, f):
        level = self.levels[l]
        if l == len(self.levels) - 1:
            return self._solve_coarse(level, f)
        smooth_rbgs(level, u, f, self.nu1)
        r = level.residual(u, f)
        coarse = self.levels[l + 1]
        rc = restrict_halfweight(r.reshape(level.grid.shape)).ravel()
        rc[~coarse.domain] = 0.0
        ec = np.zeros(coarse.grid.size)
        for _ in range(1 if self.cycle_kind == "v" else 2):
            ec = self._cycle(l + 1, ec, rc)
        e = self._prolong(coarse, ec)
        e[~level.domain] = 0.0
        u += e
        smooth_rbgs(level, u, f, self.nu2)
        return u

    def cycle(self, u, f):
        """One cycle on the finest level; returns the updated ``u`` (a new array)."""
        u = np.array(u, dtype=float).ravel()
        f = np.asarray(f, dtype=float).ravel()
        u[~self.fine.domain] = 0.0
        return self._cycle(0, u, f)

    def iterate(self, u, f, iterations=10):
        """Repeated cycles recording fine residual norms (plain 2-norm over the domain)."""
        report = CycleReport()
        u = np.array(u, dtype=float).ravel()
        report.residuals.append(float(np.linalg.norm(self.fine.residual(u, f))))
        for _ in range(iterations):
            if report.residuals[-1] == 0.0:
                break
            u = self.cycle(u, f)
            report.residuals.append(float(np.linalg.norm(self.fine.residual(u, f))))
        return u, report

    def preconditioner(self):
        """``M(r)``: one cycle from zero on ``r / beta``; linear in ``r``."""
        scale = self.fine.sw.rhs_scale()

        def apply(r):
            return self.cycle(np.zeros(self.fine.grid.size), np.asarray(r).ravel() * scale)

        return apply


def build_hierarchy(fine, coarsest_nx=COARSEST_NX, nu1=2, nu2=2, cycle="v", prolongation="auto"):
    return MGHierarchy(fine, coarsest_nx, nu1, nu2, cycle, prolongation)


def cycle(h, u, f, kind=None):
    """One cycle of ``kind`` (defaults to the hierarchy's own) plus its residual report."""
    if kind is not None and kind != h.cycle_kind:
        old = h.cycle_kind
        h.cycle_kind = kind
        try:
            return h.iterate(u, f, iterations=1)
        finally:
            h.cycle_kind = old
    return h.iterate(u, f, iterations=1)
