"""Least-squares boundary interpolants for immersed boundaries and interfaces.

Every control point owns a polynomial of total degree ``< k`` fitted to the
boundary value at the control point and to the grid values inside a
half-ellipse on one side of the surface.  Ghost values for the 1D finite
difference stencils crossing that point, and the normal derivative at the
point, are linear functionals of the fitted data; this module computes
their coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import (
    InsufficientPointsError,
    RankDeficientError,
    SingularInterfaceSystemError,
    SingularWallStencilError,
)
from .linalg import qr_pivoted

# (tangential, normal) semi-axes per unit of polynomial order, in dx.
ELLIPSE_AXES = (1.5, 1.5)
GROWTH = 1.3
MAX_GROWTH = 3


@lru_cache(maxsize=None)
def monomial_exponents(k):
    """Exponent pairs of the 2D monomials of total degree < k, by degree."""
    return tuple((d - q, q) for d in range(k) for q in range(d + 1))


def vandermonde(offsets, k):
    offsets = np.atleast_2d(np.asarray(offsets, dtype=float))
    ex = monomial_exponents(k)
    px = np.array([e[0] for e in ex])
    py = np.array([e[1] for e in ex])
    return offsets[:, :1] ** px * offsets[:, 1:2] ** py


@dataclass
class InterpolationSet:
    """Nodes used by one control point on one side of the surface.

    ``offsets`` are node positions relative to the control point in units
    of dx (unwrapped across periodic seams).
    """

    cp_index: int
    side: int
    nodes: np.ndarray
    offsets: np.ndarray
    k: int
    semi_axes: tuple
    excluded: int

    @property
    def n_monomials(self):
        return self.k * (self.k + 1) // 2

    def __len__(self):
        return len(self.nodes)


def side_map_for(grid, geometry):
    x, y = grid.coords()
    return np.where(geometry.phi(x, y) > 0, 1, -1).astype(np.int8)


def collect_interpolation_points(cp, grid, geometry, k, side, side_map=None, start=0):
    """Half-elliptical node set on ``side`` (+1 or -1) of control point ``cp``.

    The ellipse is centred on the control point, its major axis is
    tangential, and only the half opening into ``side`` is used.  The
    grid node nearest to the control point is always dropped.  Axes start
    at ``(1.5 k, 1.5 k) dx`` and grow by 1.3 up to three times until at
    least twice as many nodes as monomials are found.
    """
    if side_map is None:
        side_map = side_map_for(grid, geometry)
    side = 1 if side > 0 else -1
    m = k * (k + 1) // 2
    dx = grid.dx
    pc = np.array([(cp.position[0] - grid.origin[0]) / dx, (cp.position[1] - grid.origin[1]) / dx])
    nrm = side * np.asarray(cp.normal, dtype=float)
    tan = np.array([-nrm[1], nrm[0]])
    near = cp.lo if cp.theta < 0.5 else cp.hi
    near_flat = near[0] * grid.ny + near[1]
    a, b = ELLIPSE_AXES[0] * k * GROWTH**start, ELLIPSE_AXES[1] * k * GROWTH**start
    for attempt in range(start, MAX_GROWTH + 1):
        reach = int(np.ceil(max(a, b))) + 1
        i0, j0 = int(np.floor(pc[0])), int(np.floor(pc[1]))
        ii = np.arange(i0 - reach, i0 + reach + 2)
        jj = np.arange(j0 - reach, j0 + reach + 2)
        ii, jj = np.meshgrid(ii, jj, indexing="ij")
        ii, jj = ii.ravel(), jj.ravel()
        ok = np.ones(ii.size, dtype=bool)
        if not grid.periodic[0]:
            ok &= (ii >= 0) & (ii < grid.nx)
        if not grid.periodic[1]:
            ok &= (jj >= 0) & (jj < grid.ny)
        ii, jj = ii[ok], jj[ok]
        iw, jw = ii % grid.nx, jj % grid.ny
        off = np.stack([ii - pc[0], jj - pc[1]], axis=1)
        s_t = off @ tan
        s_n = off @ nrm
        flat = iw * grid.ny + jw
        keep = (s_n >= 0.0) & ((s_t / a) ** 2 + (s_n / b) ** 2 <= 1.0)
        keep &= side_map[iw, jw] == side
        keep &= flat != near_flat
        if np.count_nonzero(keep) >= 2 * m:
            return InterpolationSet(cp_index=cp.index, side=side, nodes=flat[keep],
                                    offsets=off[keep], k=k, semi_axes=(a, b), excluded=near_flat)
        a, b = a * GROWTH, b * GROWTH
    raise InsufficientPointsError(
        f"control point {cp.index} at {cp.position}: only {int(np.count_nonzero(keep))} nodes "
        f"for order {k} (need {2 * m}); geometry too coarse for this order")


@dataclass
class StencilSet:
    """Ghost and normal-derivative coefficients of one control point / side.

    Column 0 of every coefficient row multiplies the boundary value at the
    control point; column ``1 + a`` multiplies ``u`` at ``iset.nodes[a]``.
    ``dn`` approximates ``beta * d/dn`` at the control point.
    """

    iset: InterpolationSet
    ghost: np.ndarray
    normal: tuple
    dx: float
    beta: float
    _factor: object = field(repr=False, default=None)
    _colnorm: np.ndarray = field(repr=False, default=None)
    _dn: np.ndarray = field(repr=False, default=None)

    @property
    def dn(self):
        if self._dn is None:
            ex = monomial_exponents(self.iset.k)
            v = np.zeros(len(ex))
            v[ex.index((1, 0))] = self.normal[0]
            v[ex.index((0, 1))] = self.normal[1]
            self._dn = self.beta / self.dx * self._factor.row_functional(v / self._colnorm)
        return self._dn

    def ghost_values(self, wall, u_samples):
        return self.ghost[:, 0] * wall + self.ghost[:, 1:] @ np.asarray(u_samples)


def build_stencils(iset, cond, ghost_offsets, normal, dx, beta=1.0):
    """Factor the scaled least-squares system once and extract stencils.

    ``ghost_offsets`` are ghost node positions relative to the control
    point in dx units.  Neumann and jump conditions also get the
    normal-derivative stencil up front; for Dirichlet it is built lazily
    (it is only needed for post-processing).
    """
    from .geometry import Condition

    k = iset.k
    m = iset.n_monomials
    rows = np.vstack([np.zeros((1, 2)), iset.offsets])
    v = vandermonde(rows, k)
    colnorm = np.sqrt(np.einsum("ij,ij->j", v, v))
    f = qr_pivoted(v / colnorm, tol=1e-10)
    if f.rank < m:
        raise RankDeficientError(
            f"control point {iset.cp_index}: least-squares rank {f.rank} < {m}")
    vg = vandermonde(np.asarray(ghost_offsets, dtype=float).reshape(-1, 2), k) / colnorm
    ghost = np.array([f.row_functional(row) for row in vg])
    ss = StencilSet(iset=iset, ghost=ghost, normal=tuple(normal), dx=dx, beta=beta,
                    _factor=f, _colnorm=colnorm)
    if Condition(cond) is not Condition.DIRICHLET:
        ss.dn  # noqa: B018  (force the extra stencil)
    return ss


def fit_control_point(cp, grid, geometry, k, side, cond, w, beta=1.0, side_map=None):
    """Collect points and build stencils, growing the ellipse on rank deficiency."""
    err = None
    for start in range(MAX_GROWTH + 1):
        iset = collect_interpolation_points(cp, grid, geometry, k, side, side_map, start=start)
        try:
            return build_stencils(iset, cond, ghost_offsets_for(cp, side, w), cp.normal, grid.dx, beta)
        except RankDeficientError as exc:
            err = exc
    raise err


def neumann_wall_value(ss, q_bar, u_samples):
    """Boundary value that makes the fitted flux match ``q_bar``."""
    dn = ss.dn
    _check_wall(dn)
    return (q_bar - dn[1:] @ np.asarray(u_samples)) / dn[0]


def neumann_wall_coeffs(ss):
    """Return ``(c_nodes, c_flux)`` with wall value ``c_nodes . u + c_flux q_bar``."""
    dn = ss.dn
    _check_wall(dn)
    return -dn[1:] / dn[0], 1.0 / dn[0]


def _check_wall(dn):
    if abs(dn[0]) < 1e-14 * np.max(np.abs(dn[1:])):
        raise SingularWallStencilError("normal-derivative stencil has no weight on the wall value")


def _interface_parts(ss_plus, ss_minus, beta_plus, beta_minus):
    dp = ss_plus.dn / ss_plus.beta
    dm = ss_minus.dn / ss_minus.beta
    den = beta_plus * dp[0] - beta_minus * dm[0]
    scale = max(abs(beta_plus * dp[0]), abs(beta_minus * dm[0]))
    if den == 0 or abs(den) < 1e-14 * scale:
        raise SingularInterfaceSystemError("interface wall system is singular")
    return dp, dm, den


def interface_wall_values(ss_plus, ss_minus, beta_plus, beta_minus, j0, j1, u_plus, u_minus):
    """Wall values ``(u+, u-)`` at the control point from the two-sided fits.

    Jumps follow ``[u] = u+ - u- = j0`` and
    ``[beta d_n u] = beta+ d_n u+ - beta- d_n u- = j1``.
    """
    dp, dm, den = _interface_parts(ss_plus, ss_minus, beta_plus, beta_minus)
    ubar = -(beta_plus * (dp[1:] @ np.asarray(u_plus)) - beta_minus * (dm[1:] @ np.asarray(u_minus))) / den
    up = ubar + (j1 - beta_minus * dm[0] * j0) / den
    um = ubar + (j1 - beta_plus * dp[0] * j0) / den
    return up, um


def interface_wall_coeffs(ss_plus, ss_minus, beta_plus, beta_minus):
    """Linear form of :func:`interface_wall_values`.

    Returns ``{side: (c_plus_nodes, c_minus_nodes, c_j0, c_j1)}`` for side +1 and -1.
    """
    dp, dm, den = _interface_parts(ss_plus, ss_minus, beta_plus, beta_minus)
    cp = -beta_plus * dp[1:] / den
    cm = beta_minus * dm[1:] / den
    return {
        1: (cp, cm, -beta_minus * dm[0] / den, 1.0 / den),
        -1: (cp, cm, -beta_plus * dp[0] / den, 1.0 / den),
    }


def ghost_offsets_for(cp, side, w):
    """Offsets (dx units) of the ``w`` nodes beyond ``cp`` seen from ``side``."""
    e = np.zeros(2)
    e[cp.axis] = 1.0
    if cp.side_lo == side:
        steps = (1.0 - cp.theta) + np.arange(w)
    else:
        steps = -(cp.theta + np.arange(w))
    return steps[:, None] * e[None, :]
