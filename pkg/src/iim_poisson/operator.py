"""High-order dimension-split Laplacian with immersed boundary/interface corrections.

The discrete operator is affine, ``L(u, g) = L_omega u + L_gamma g``, where
``g`` collects boundary data at the control points (Dirichlet values,
Neumann fluxes, or the ``(j0, j1)`` jump pairs).  Ghost values are stored
as a sparse table ``ghost = G u + G_data g``; :meth:`ImmersedOperator.apply`
uses that table together with shifted-array stencil sweeps, while
:meth:`ImmersedOperator.assemble` folds it into a CSR matrix.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.sparse as sp

from .errors import TooLargeError, UnsupportedOrderError
from .geometry import Condition, find_control_points
from .grid import PointClass, ScalarField, classify_points
from .iim import (
    fit_control_point,
    interface_wall_coeffs,
    neumann_wall_coeffs,
)

_D2 = {
    2: [Fraction(1), Fraction(-2), Fraction(1)],
    4: [Fraction(-1, 12), Fraction(4, 3), Fraction(-5, 2), Fraction(4, 3), Fraction(-1, 12)],
    6: [Fraction(1, 90), Fraction(-3, 20), Fraction(3, 2), Fraction(-49, 18),
        Fraction(3, 2), Fraction(-3, 20), Fraction(1, 90)],
}
_D1 = {
    2: [Fraction(-1, 2), Fraction(0), Fraction(1, 2)],
    4: [Fraction(1, 12), Fraction(-2, 3), Fraction(0), Fraction(2, 3), Fraction(-1, 12)],
    6: [Fraction(-1, 60), Fraction(3, 20), Fraction(-3, 4), Fraction(0),
        Fraction(3, 4), Fraction(-3, 20), Fraction(1, 60)],
}

MAX_ASSEMBLY_NX = 1024


@dataclass(frozen=True)
class StencilSpec:
    """Centred 1D second-derivative stencil ``a[-w..w]`` and its first-derivative partner."""

    order: int
    coeffs: tuple
    d1_coeffs: tuple

    @property
    def half_width(self):
        return self.order // 2

    @property
    def a(self):
        return np.array([float(c) for c in self.coeffs])

    @property
    def b(self):
        return np.array([float(c) for c in self.d1_coeffs])


def interior_stencil(order):
    if order not in _D2:
        raise UnsupportedOrderError(f"interior order must be 2, 4 or 6, got {order}")
    return StencilSpec(order=order, coeffs=tuple(_D2[order]), d1_coeffs=tuple(_D1[order]))


def symbol_sigma(spec, ktheta):
    """Von Neumann symbol ``sigma(k) = 2 sum_j a_j (1 - cos jk)``; nonnegative."""
    w = spec.half_width
    a = spec.a
    kt = np.asarray(ktheta, dtype=float)
    return 2.0 * sum(a[w + j] * (1.0 - np.cos(j * kt)) for j in range(1, w + 1))


def sigma_max(spec, samples=20001):
    kt = np.linspace(0.0, np.pi, samples)
    return float(np.max(symbol_sigma(spec, kt)))


class ImmersedOperator:
    """``beta * Laplacian`` of order ``n`` with order-``k`` boundary interpolants.

    Parameters
    ----------
    grid : Grid2D
    geometry : LevelSetGeometry or None
        ``None`` gives the plain periodic (or framed) Laplacian.
    order, border : int
        Interior stencil order ``n`` and boundary interpolant order ``k``.
    condition : Condition
        Dirichlet/Neumann on the plus-side domain, or jump conditions
        across an interface (both sides are unknowns).
    """

    def __init__(self, grid, geometry, order=4, border=5, condition=Condition.DIRICHLET,
                 beta_plus=1.0, beta_minus=1.0):
        self.grid = grid
        self.geometry = geometry
        self.spec = interior_stencil(order)
        self.k = int(border)
        self.condition = Condition(condition)
        self.beta_plus = float(beta_plus)
        self.beta_minus = float(beta_minus)
        self.two_sided = self.condition is Condition.JUMP
        w = self.spec.half_width
        if geometry is None:
            self.side = np.ones(grid.shape, dtype=np.int8)
        else:
            x, y = grid.coords()
            self.side = np.where(geometry.phi(x, y) > 0, 1, -1).astype(np.int8)
        self.tags = classify_points(grid, geometry, w, two_sided=self.two_sided)
        self.domain = (self.tags != PointClass.EXTERIOR).ravel()
        side_flat = self.side.ravel()
        self.beta_node = np.where(side_flat > 0, self.beta_plus, self.beta_minus)
        self.beta_node[~self.domain] = 0.0
        self.points = [] if geometry is None else find_control_points(grid, geometry, self.condition)
        self.sides = (1, -1) if self.two_sided else (1,)
        self.n_data = len(self.points) * (2 if self.two_sided else 1)
        self.stencils = {}
        self._build_stencils()
        self._build_ghost_table()
        self._build_corrections()
        self._matrix = None
        self._data_matrix = None

    # -- construction -------------------------------------------------
    def _build_stencils(self):
        g = self.grid
        w = self.spec.half_width
        # exterior nodes (including a non-periodic frame) never enter a fit
        side_map = np.where(self.tags == PointClass.EXTERIOR, 0, self.side).astype(np.int8)
        for cp in self.points:
            for s in self.sides:
                beta = 1.0 if self.two_sided else self.beta_plus
                self.stencils[cp.index, s] = fit_control_point(
                    cp, g, self.geometry, self.k, s, self.condition, w, beta, side_map=side_map)

    def _wall_forms(self, cp):
        """Per side: (node indices, node coeffs, data indices, data coeffs) of the wall value."""
        c = cp.index
        if self.condition is Condition.DIRICHLET:
            return {1: (np.zeros(0, int), np.zeros(0), np.array([c]), np.array([1.0]))}
        if self.condition is Condition.NEUMANN:
            ss = self.stencils[c, 1]
            cn, cq = neumann_wall_coeffs(ss)
            return {1: (ss.iset.nodes, cn, np.array([c]), np.array([cq]))}
        ssp, ssm = self.stencils[c, 1], self.stencils[c, -1]
        forms = interface_wall_coeffs(ssp, ssm, self.beta_plus, self.beta_minus)
        out = {}
        for s, (cpn, cmn, c0, c1) in forms.items():
            out[s] = (np.concatenate([ssp.iset.nodes, ssm.iset.nodes]), np.concatenate([cpn, cmn]),
                      np.array([2 * c, 2 * c + 1]), np.array([c0, c1]))
        return out

    def _build_ghost_table(self):
        w = self.spec.half_width
        n = self.grid.size
        rows, cols, vals = [], [], []
        drows, dcols, dvals = [], [], []
        wrows, wcols, wvals = [], [], []
        wdrows, wdcols, wdvals = [], [], []
        self.ghost_base = np.full((max(len(self.points), 1), 2), -1, dtype=np.int64)
        self.wall_row = {}
        gid = 0
        for cp in self.points:
            forms = self._wall_forms(cp)
            for s in self.sides:
                ss = self.stencils[cp.index, s]
                wn, wc, wd, wdc = forms[s]
                wr = len(self.wall_row)
                self.wall_row[cp.index, s] = wr
                wrows.append(np.full(wn.size, wr))
                wcols.append(wn)
                wvals.append(wc)
                wdrows.append(np.full(wd.size, wr))
                wdcols.append(wd)
                wdvals.append(wdc)
                self.ghost_base[cp.index, 0 if s > 0 else 1] = gid
                for m in range(w):
                    g0 = ss.ghost[m, 0]
                    rows.append(np.full(ss.iset.nodes.size + wn.size, gid))
                    cols.append(np.concatenate([ss.iset.nodes, wn]))
                    vals.append(np.concatenate([ss.ghost[m, 1:], g0 * wc]))
                    drows.append(np.full(wd.size, gid))
                    dcols.append(wd)
                    dvals.append(g0 * wdc)
                    gid += 1
        self.n_ghost = gid
        cat = lambda parts, dt=float: np.concatenate(parts).astype(dt) if parts else np.zeros(0, dt)
        self.G = sp.csr_matrix((cat(vals), (cat(rows, int), cat(cols, int))), shape=(gid, n))
        self.G_data = sp.csr_matrix((cat(dvals), (cat(drows, int), cat(dcols, int))),
                                    shape=(gid, self.n_data))
        nw = len(self.wall_row)
        self.W = sp.csr_matrix((cat(wvals), (cat(wrows, int), cat(wcols, int))), shape=(nw, n))
        self.W_data = sp.csr_matrix((cat(wdvals), (cat(wdrows, int), cat(wdcols, int))),
                                    shape=(nw, self.n_data))

    def _build_corrections(self):
        """List every stencil entry that must read a ghost instead of the grid value."""
        g = self.grid
        w = self.spec.half_width
        nx, ny = g.shape
        ix, iy = np.divmod(np.arange(g.size), ny)
        side = self.side.ravel()
        edge_cp = [np.full(g.size, -1, dtype=np.int64) for _ in range(2)]
        for cp in self.points:
            edge_cp[cp.axis][cp.lo[0] * ny + cp.lo[1]] = cp.index

        def shift(axis, d):
            if axis == 0:
                return ((ix + d) % nx) * ny + iy
            return ix * ny + (iy + d) % ny

        rows, axes, offs, gids, qs = [], [], [], [], []
        for axis in (0, 1):
            for d in (-1, 1):
                first = np.zeros(g.size, dtype=np.int64)
                for j in range(1, w + 1):
                    diff = (side[shift(axis, d * j)] != side) & (first == 0)
                    first[diff] = j
                for j in range(1, w + 1):
                    q = shift(axis, d * j)
                    sel = self.domain & (first > 0) & (j >= first) & (side[q] != side)
                    i = np.flatnonzero(sel)
                    if i.size == 0:
                        continue
                    fc = first[i]
                    # lower node of the crossed edge
                    if d > 0:
                        lx = ix[i] + (fc - 1) * (axis == 0)
                        ly = iy[i] + (fc - 1) * (axis == 1)
                    else:
                        lx = ix[i] - fc * (axis == 0)
                        ly = iy[i] - fc * (axis == 1)
                    lower = (lx % nx) * ny + (ly % ny)
                    cpi = edge_cp[axis][lower]
                    if np.any(cpi < 0):
                        raise RuntimeError("stencil crosses an edge without a control point")
                    sidx = np.where(side[i] > 0, 0, 1)
                    gid = self.ghost_base[cpi, sidx] + (j - fc)
                    rows.append(i)
                    axes.append(np.full(i.size, axis))
                    offs.append(np.full(i.size, d * j))
                    gids.append(gid)
                    qs.append(q[i])
        cat = lambda parts: np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
        self.corr_row = cat(rows)
        self.corr_axis = cat(axes)
        self.corr_off = cat(offs)
        self.corr_gid = cat(gids)
        self.corr_q = cat(qs)

    # -- application ----------------------------------------------------
    @property
    def is_singular(self):
        if self.geometry is None:
            return all(self.grid.periodic)
        return self.condition is not Condition.DIRICHLET and all(self.grid.periodic)

    def zero_data(self):
        return np.zeros(self.n_data)

    def _ghosts(self, u, g):
        gh = self.G @ u
        if g is not None and self.n_data:
            gh = gh + self.G_data @ g
        return gh

    def apply(self, u, g=None):
        """Matrix-free ``L_omega u + L_gamma g`` on flat (or grid-shaped) ``u``."""
        u = np.asarray(u, dtype=float).ravel().copy()
        u[~self.domain] = 0.0
        a = self.spec.a
        w = self.spec.half_width
        dx2 = self.grid.dx ** 2
        U = u.reshape(self.grid.shape)
        lap = np.zeros(self.grid.shape)
        for axis in (0, 1):
            for j in range(-w, w + 1):
                lap += a[w + j] * np.roll(U, -j, axis=axis)
        out = lap.ravel() / dx2
        if self.corr_row.size:
            gh = self._ghosts(u, g)
            wts = a[w + self.corr_off] / dx2
            out += np.bincount(self.corr_row, weights=wts * (gh[self.corr_gid] - u[self.corr_q]),
                               minlength=u.size)
        out *= self.beta_node
        out[~self.domain] = 0.0
        return out

    def gradient(self, u, g=None):
        """Centred first derivatives with the same ghost treatment; returns (du/dx, du/dy)."""
        u = np.asarray(u, dtype=float).ravel().copy()
        u[~self.domain] = 0.0
        b = self.spec.b
        w = self.spec.half_width
        dx = self.grid.dx
        U = u.reshape(self.grid.shape)
        gh = self._ghosts(u, g) if self.corr_row.size else None
        result = []
        for axis in (0, 1):
            d = np.zeros(self.grid.shape)
            for j in range(-w, w + 1):
                if b[w + j]:
                    d += b[w + j] * np.roll(U, -j, axis=axis)
            d = d.ravel() / dx
            if gh is not None:
                sel = self.corr_axis == axis
                wts = b[w + self.corr_off[sel]] / dx
                d += np.bincount(self.corr_row[sel],
                                 weights=wts * (gh[self.corr_gid[sel]] - u[self.corr_q[sel]]),
                                 minlength=u.size)
            d[~self.domain] = 0.0
            result.append(d)
        return tuple(result)

    def assemble(self):
        """Return ``(L_omega, L_gamma)`` as CSR matrices on the full node set.

        Rows and columns of exterior nodes are empty; use :attr:`dofs` to
        restrict to the unknowns.
        """
        if max(self.grid.nx, self.grid.ny) > MAX_ASSEMBLY_NX:
            raise TooLargeError(f"assembly guarded at nx <= {MAX_ASSEMBLY_NX}")
        if self._matrix is not None:
            return self._matrix, self._data_matrix
        g = self.grid
        n = g.size
        nx, ny = g.shape
        a = self.spec.a
        w = self.spec.half_width
        dx2 = g.dx ** 2
        ix, iy = np.divmod(np.arange(n), ny)
        dom = np.flatnonzero(self.domain)
        rows, cols, vals = [], [], []
        for axis in (0, 1):
            for j in range(-w, w + 1):
                if axis == 0:
                    c = ((ix[dom] + j) % nx) * ny + iy[dom]
                else:
                    c = ix[dom] * ny + (iy[dom] + j) % ny
                rows.append(dom)
                cols.append(c)
                vals.append(np.full(dom.size, a[w + j] / dx2))
        wts = a[w + self.corr_off] / dx2
        rows.append(self.corr_row)
        cols.append(self.corr_q)
        vals.append(-wts)
        base = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n, n))
        corr = sp.csr_matrix((wts, (self.corr_row, self.corr_gid)), shape=(n, self.n_ghost))
        beta = sp.diags(self.beta_node)
        mat = beta @ (base + corr @ self.G)
        mat = sp.csr_matrix(mat)
        mat.eliminate_zeros()
        data = sp.csr_matrix(beta @ (corr @ self.G_data))
        self._matrix, self._data_matrix = mat, data
        return mat, data

    @property
    def dofs(self):
        return np.flatnonzero(self.domain)

    # -- post-processing ----------------------------------------------------
    def wall_values(self, u, g=None, side=1):
        """Boundary values at every control point on ``side``."""
        u = np.asarray(u, dtype=float).ravel()
        vals = self.W @ u
        if g is not None and self.n_data:
            vals = vals + self.W_data @ g
        idx = [self.wall_row[cp.index, side] for cp in self.points]
        return vals[idx]

    def boundary_quantity(self, u, g=None):
        """The boundary quantity not fixed by the data, one value per control point.

        Dirichlet: ``beta d_n u``; Neumann: ``u`` on the wall; jump:
        ``d_n u`` on the plus side.
        """
        u = np.asarray(u, dtype=float).ravel()
        if self.condition is Condition.NEUMANN:
            return self.wall_values(u, g)
        out = np.empty(len(self.points))
        wall = self.wall_values(u, g, side=1) if self.two_sided else None
        for cp in self.points:
            ss = self.stencils[cp.index, 1]
            if self.two_sided:
                uc = wall[cp.index]
                out[cp.index] = (ss.dn[0] * uc + ss.dn[1:] @ u[ss.iset.nodes]) / ss.beta
            else:
                uc = 0.0 if g is None else g[cp.index]
                out[cp.index] = ss.dn[0] * uc + ss.dn[1:] @ u[ss.iset.nodes]
        return out

    def field(self, values):
        return ScalarField(self.grid, np.asarray(values).reshape(self.grid.shape), self.tags.copy())

    def control_positions(self):
        pos = np.array([cp.position for cp in self.points]).reshape(-1, 2)
        nrm = np.array([cp.normal for cp in self.points]).reshape(-1, 2)
        return pos, nrm


def build_operator(grid, geometry, order=4, border=5, condition=Condition.DIRICHLET,
                   beta_plus=1.0, beta_minus=1.0):
    return ImmersedOperator(grid, geometry, order, border, condition, beta_plus, beta_minus)


def apply(op, u, boundary_data=None):
    return op.apply(u, boundary_data)


def assemble(op):
    return op.assemble()


def gradient(op, u, boundary_data=None):
    return op.gradient(u, boundary_data)


def boundary_quantity(op, u, boundary_data=None):
    return op.boundary_quantity(u, boundary_data)


def extremal_spectrum(op, krylov_dim=200, seed=0):
    """Ritz values of ``dx^2 L_omega / beta_max`` from an Arnoldi run.

    For singular operators the constant null vector is deflated exactly
    and the zero eigenvalue is appended to the result.
    """
    from .krylov import arnoldi
    from .linalg import hessenberg_eigs

    mat, _ = op.assemble()
    dofs = op.dofs
    a = mat[dofs][:, dofs]
    scale = op.grid.dx ** 2 / max(op.beta_plus, op.beta_minus if op.two_sided else op.beta_plus)
    a = (a * scale).tocsr()
    v0 = np.random.default_rng(seed).standard_normal(dofs.size)
    if not op.is_singular:
        h, _, breakdown = arnoldi(lambda v: a @ v, v0, min(krylov_dim, dofs.size))
        m = h.shape[1]
        return hessenberg_eigs(h[:m, :m]), breakdown
    # A 1 = 0, so in an orthonormal basis [e, Q] the matrix is block upper
    # triangular: the spectrum is {0} plus that of P A P on the complement of e.
    e = np.full(dofs.size, 1.0 / np.sqrt(dofs.size))

    def deflated(v):
        v = v - (e @ v) * e
        w = a @ v
        return w - (e @ w) * e

    v0 -= (e @ v0) * e
    h, _, breakdown = arnoldi(deflated, v0, min(krylov_dim, dofs.size - 1))
    m = h.shape[1]
    return np.append(hessenberg_eigs(h[:m, :m]), 0.0), breakdown
