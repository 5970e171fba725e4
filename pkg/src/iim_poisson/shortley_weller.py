"""Second-order Shortley-Weller discretisation used to build preconditioners.

Stencils are dimension split.  Along each axis a node whose neighbour lies
across the surface uses a shortened arm ending at the crossing.  For
Neumann and jump conditions the normal derivative is replaced by the axis
derivative (``d_n u ~ sign(n_axis) d_x u``), which is deliberately
inconsistent but robust at any resolution.

By default the operator is the constant-coefficient Laplacian acting on
``f / beta`` on each side; ``beta_divided=False`` multiplies rows by beta.
"""
from __future__ import annotations

from dataclasses import replace

import numpy as np
import scipy.sparse as sp

from .geometry import Condition, find_control_points
from .grid import PointClass, classify_points

PIN_DIAGONAL = -4.0


def shift_intersections(points):
    """Move crossings away from grid nodes.

    Boundary crossings closer than dx/2 to their in-domain node move to
    exactly dx/2; interface crossings move to the edge midpoint.  The
    shifted position is stored in ``shifted_theta``; ``theta`` is kept.
    """
    out = []
    for cp in points:
        if cp.kind is Condition.JUMP:
            t = 0.5
        elif cp.side_lo > 0:
            t = max(cp.theta, 0.5)
        else:
            t = min(cp.theta, 0.5)
        out.append(replace(cp, shifted_theta=t))
    return out


def sw_dirichlet_coeffs(psi_minus, psi_plus):
    """Weights ``(c_w-, c_i, c_w+)`` (times 1/dx^2) of the shortened three-point stencil."""
    pm, pp = psi_minus, psi_plus
    return 2.0 / (pm * (pm + pp)), -2.0 / (pm * pp), 2.0 / (pp * (pm + pp))


def sw_neumann_coeffs(case, psi_minus, psi_plus):
    """Weights (times 1/dx^2) of the flux-based stencils.

    Returns a dict with keys among ``"u_minus"``, ``"u_i"``, ``"u_plus"``
    (node values) and ``"g_minus"``, ``"g_plus"`` (multiplying ``dx * d_x u``
    at the wall).  Case ``a`` has the wall on the low side, ``b`` on the
    high side, ``c`` on both.
    """
    pm, pp = psi_minus, psi_plus
    if case == "a":
        s = 2.0 / (pp * (2 * pm + pp))
        return {"g_minus": -2.0 / (2 * pm + pp), "u_i": -s, "u_plus": s}
    if case == "b":
        s = 2.0 / (pm * (pm + 2 * pp))
        return {"u_minus": s, "u_i": -s, "g_plus": 2.0 / (pm + 2 * pp)}
    if case == "c":
        return {"g_minus": -1.0 / (pm + pp), "g_plus": 1.0 / (pm + pp)}
    raise ValueError(f"unknown Neumann case {case!r}")


def sw_interface_wall_values(psi_minus, psi_plus, beta_minus, beta_plus, j0, j1, u_i, u_ip1):
    """Wall values ``(u_w+, u_w-)`` between ``u_i`` (minus side) and ``u_ip1`` (plus side).

    ``psi_minus`` is the fractional distance from the minus node to the
    crossing.  Jumps are ``j0 = u_w+ - u_w-`` and ``j1`` the flux jump
    measured along the minus-to-plus direction.
    """
    am = psi_minus / beta_minus
    ap = psi_plus / beta_plus
    s = am + ap
    ubar = (ap * u_i + am * u_ip1) / s - ap * am * j1 / s
    return ubar + ap * j0 / s, ubar - am * j0 / s


class SWOperator:
    """Assembled Shortley-Weller operator ``A u + B g`` on the full node set.

    Data vector layout matches :class:`~iim_poisson.operator.ImmersedOperator`:
    one value per control point, or ``(j0, j1)`` pairs for interfaces.
    ``dx`` factors in jump data use the grid spacing.
    """

    def __init__(self, grid, geometry, condition=Condition.DIRICHLET, beta_plus=1.0, beta_minus=1.0,
                 shifted=True, beta_divided=True, points=None):
        self.grid = grid
        self.geometry = geometry
        self.condition = Condition(condition)
        self.beta_plus = float(beta_plus)
        self.beta_minus = float(beta_minus)
        self.shifted = shifted
        self.beta_divided = beta_divided
        self.two_sided = self.condition is Condition.JUMP
        if geometry is None:
            self.side = np.ones(grid.shape, dtype=np.int8)
            pts = []
        else:
            x, y = grid.coords()
            self.side = np.where(geometry.phi(x, y) > 0, 1, -1).astype(np.int8)
            pts = points if points is not None else find_control_points(
                grid, geometry, self.condition, strict=False)
        self.points = shift_intersections(pts) if shifted else list(pts)
        self.tags = classify_points(grid, geometry, 1, two_sided=self.two_sided)
        self.domain = (self.tags != PointClass.EXTERIOR).ravel()
        self.n_data = len(self.points) * (2 if self.two_sided else 1)
        self.beta_node = np.where(self.side.ravel() > 0, self.beta_plus, self.beta_minus)
        self.beta_node[~self.domain] = 0.0
        self.pinned = np.zeros(grid.size, dtype=bool)
        self._assemble()

    def _theta(self):
        t = np.array([cp.theta if cp.shifted_theta is None else cp.shifted_theta for cp in self.points])
        return t

    def _assemble(self):
        g = self.grid
        n = g.size
        nx, ny = g.shape
        dx = g.dx
        ix, iy = np.divmod(np.arange(n), ny)
        side = self.side.ravel()
        dom = np.flatnonzero(self.domain)
        theta = self._theta() if self.points else np.zeros(0)
        normal = np.array([cp.normal for cp in self.points]).reshape(-1, 2)
        edge_cp = [np.full(n, -1, dtype=np.int64) for _ in range(2)]
        for cp in self.points:
            edge_cp[cp.axis][cp.lo[0] * ny + cp.lo[1]] = cp.index

        rows, cols, vals = [], [], []
        drows, dcols, dvals = [], [], []

        def add(r, c, v):
            rows.append(r)
            cols.append(c)
            vals.append(v)

        def add_data(r, c, v):
            drows.append(r)
            dcols.append(c)
            dvals.append(v)

        i = dom
        si = side[i]
        for axis in (0, 1):
            nb, crossed, psi, cpi = {}, {}, {}, {}
            for d in (-1, 1):
                if axis == 0:
                    nbr = ((ix[i] + d) % nx) * ny + iy[i]
                else:
                    nbr = ix[i] * ny + (iy[i] + d) % ny
                nb[d] = nbr
                cr = side[nbr] != si
                crossed[d] = cr
                lower = i if d > 0 else nbr
                c = np.where(cr, edge_cp[axis][lower], -1)
                if np.any(c[cr] < 0):
                    raise RuntimeError("crossed edge without a control point")
                cpi[d] = c
                p = np.ones(i.size)
                if cr.any():
                    t = theta[c[cr]]
                    # distance from node i to the crossing: theta from lo, 1-theta from hi
                    p[cr] = t if d > 0 else 1.0 - t
                psi[d] = p
            if self.condition is Condition.NEUMANN:
                self._neumann_axis(i, nb, crossed, psi, cpi, normal, dx, add, add_data)
            else:
                cm, ci, cpl = sw_dirichlet_coeffs(psi[-1], psi[1])
                add(i, i, ci / dx**2)
                for d, cd in ((-1, cm), (1, cpl)):
                    cd = cd / dx**2
                    reg = ~crossed[d]
                    add(i[reg], nb[d][reg], cd[reg])
                    cr = crossed[d]
                    if not cr.any():
                        continue
                    if self.condition is Condition.DIRICHLET:
                        add_data(i[cr], cpi[d][cr], cd[cr])
                        continue
                    # interface: wall value on this node's side from the two-point jump system
                    rr = i[cr]
                    s_self = si[cr]
                    b_self = np.where(s_self > 0, self.beta_plus, self.beta_minus)
                    b_other = np.where(s_self > 0, self.beta_minus, self.beta_plus)
                    p_self = psi[d][cr]
                    p_other = 1.0 - p_self
                    a_self = p_self / b_self
                    a_other = p_other / b_other
                    ssum = a_self + a_other
                    c = cd[cr]
                    add(rr, rr, c * a_other / ssum)
                    add(rr, nb[d][cr], c * a_self / ssum)
                    add_data(rr, 2 * cpi[d][cr], c * s_self * a_self / ssum)
                    add_data(rr, 2 * cpi[d][cr] + 1, -c * dx * a_self * a_other / ssum)
        cat = lambda parts, dt=float: np.concatenate(parts).astype(dt) if parts else np.zeros(0, dt)
        a = sp.csr_matrix((cat(vals), (cat(rows, int), cat(cols, int))), shape=(n, n))
        b = sp.csr_matrix((cat(dvals), (cat(drows, int), cat(dcols, int))), shape=(n, self.n_data))
        diag = a.diagonal()
        zero = self.domain & (np.abs(diag) < 1e-12 / dx**2)
        if zero.any():
            # isolated nodes (only possible for flux conditions): pin them
            self.pinned = zero
            keep = sp.diags((~zero).astype(float))
            a = keep @ a + sp.diags(np.where(zero, PIN_DIAGONAL / dx**2, 0.0))
            b = keep @ b
        if not self.beta_divided:
            bet = sp.diags(self.beta_node)
            a = bet @ a
            b = bet @ b
        self.A = sp.csr_matrix(a)
        self.A.sum_duplicates()
        self.A.eliminate_zeros()
        self.B = sp.csr_matrix(b)
        self.diagonal = self.A.diagonal()

    def _neumann_axis(self, i, nb, crossed, psi, cpi, normal, dx, add, add_data):
        """Add one axis of the Neumann stencils; returns the diagonal contribution."""
        cm, cp_ = crossed[-1], crossed[1]
        diag = np.zeros(i.size)
        h2 = dx**2
        beta = self.beta_plus
        reg = ~cm & ~cp_
        add(i[reg], nb[-1][reg], np.full(reg.sum(), 1.0 / h2))
        add(i[reg], nb[1][reg], np.full(reg.sum(), 1.0 / h2))
        add(i[reg], i[reg], np.full(reg.sum(), -2.0 / h2))
        diag[reg] = -2.0 / h2

        def sgn(c):
            if c.size == 0:
                return np.zeros(0)
            ax = np.array([self.points[k].axis for k in c])
            return np.sign(normal[c, ax])

        for case, sel in (("a", cm & ~cp_), ("b", ~cm & cp_), ("c", cm & cp_)):
            if not sel.any():
                continue
            w = sw_neumann_coeffs(case, psi[-1][sel], psi[1][sel])
            r = i[sel]
            if "u_i" in w:
                add(r, r, w["u_i"] / h2)
                diag[sel] = w["u_i"] / h2
            if "u_minus" in w:
                add(r, nb[-1][sel], w["u_minus"] / h2)
            if "u_plus" in w:
                add(r, nb[1][sel], w["u_plus"] / h2)
            # g multiplies dx * d_x u = dx * sign(n_axis) * qbar / beta
            for key, d in (("g_minus", -1), ("g_plus", 1)):
                if key in w:
                    c = cpi[d][sel]
                    add_data(r, c, w[key] * dx * sgn(c) / (beta * h2))
        return diag

    @property
    def shape(self):
        return self.A.shape

    @property
    def dofs(self):
        return np.flatnonzero(self.domain)

    @property
    def is_singular(self):
        if not all(self.grid.periodic):
            return False
        return self.geometry is None or self.condition is not Condition.DIRICHLET

    def apply(self, u, g=None):
        u = np.asarray(u, dtype=float).ravel()
        out = self.A @ u
        if g is not None and self.n_data:
            out = out + self.B @ g
        out[~self.domain] = 0.0
        return out

    def control_positions(self):
        """Crossing positions (after any shift) and normals, one row per control point."""
        pos = np.array([cp.position for cp in self.points], dtype=float).reshape(-1, 2)
        nrm = np.array([cp.normal for cp in self.points], dtype=float).reshape(-1, 2)
        if self.points:
            moved = self._theta() - np.array([cp.theta for cp in self.points])
            axis = np.array([cp.axis for cp in self.points])
            pos[np.arange(axis.size), axis] += moved * self.grid.dx
        return pos, nrm

    def rhs_scale(self):
        """Per-node factor turning ``beta * Laplacian`` residuals into this operator's units."""
        if not self.beta_divided:
            return np.where(self.domain, 1.0, 0.0)
        with np.errstate(divide="ignore"):
            return np.where(self.domain, 1.0 / np.where(self.beta_node > 0, self.beta_node, 1.0), 0.0)


def build_sw(grid, geometry, condition=Condition.DIRICHLET, beta_plus=1.0, beta_minus=1.0,
             shifted=True, beta_divided=True):
    return SWOperator(grid, geometry, condition, beta_plus, beta_minus, shifted, beta_divided)


def apply_sw(op, u, boundary_data=None):
    return op.apply(u, boundary_data)
