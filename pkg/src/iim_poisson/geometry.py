"""Level-set geometries and grid-line/interface intersections.

Sign convention: ``phi > 0`` is the plus side (the problem domain for
boundary problems) and normals point along ``grad(phi)``, i.e. from the
minus side into the plus side.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import MultipleCrossingsError


class Condition(str, Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"
    JUMP = "jump"


class LevelSetGeometry:
    """Base class; subclasses provide ``phi`` and usually ``grad``/``curvature``."""

    name = "levelset"

    def phi(self, x, y):
        raise NotImplementedError

    def grad(self, x, y, h=1e-6):
        gx = (self.phi(x + h, y) - self.phi(x - h, y)) / (2 * h)
        gy = (self.phi(x, y + h) - self.phi(x, y - h)) / (2 * h)
        return gx, gy

    def normal(self, x, y):
        gx, gy = self.grad(x, y)
        nrm = np.hypot(gx, gy)
        return gx / nrm, gy / nrm

    def curvature(self, x, y, h=1e-4):
        """Curvature of the level curve through (x, y), positive when convex seen from the minus side."""
        p = self.phi
        px = (p(x + h, y) - p(x - h, y)) / (2 * h)
        py = (p(x, y + h) - p(x, y - h)) / (2 * h)
        pxx = (p(x + h, y) - 2 * p(x, y) + p(x - h, y)) / h**2
        pyy = (p(x, y + h) - 2 * p(x, y) + p(x, y - h)) / h**2
        pxy = (p(x + h, y + h) - p(x + h, y - h) - p(x - h, y + h) + p(x - h, y - h)) / (4 * h**2)
        g = np.hypot(px, py)
        return (pxx * py**2 - 2 * px * py * pxy + pyy * px**2) / g**3

    def params(self):
        return {}


@dataclass
class Circle(LevelSetGeometry):
    center: tuple = (0.5, 0.5)
    radius: float = 0.25
    name = "circle"

    def phi(self, x, y):
        return np.hypot(x - self.center[0], y - self.center[1]) - self.radius

    def grad(self, x, y):
        dx, dy = x - self.center[0], y - self.center[1]
        r = np.hypot(dx, dy)
        return dx / r, dy / r

    def curvature(self, x, y):
        return np.ones_like(np.asarray(x, dtype=float)) / self.radius

    def sample_boundary(self, n):
        t = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        return (self.center[0] + self.radius * np.cos(t), self.center[1] + self.radius * np.sin(t))

    def params(self):
        return {"center": tuple(self.center), "radius": self.radius}


@dataclass
class Star(LevelSetGeometry):
    """Five-lobed perturbed circle ``|x - c| = r0 + r_tilde cos(5 theta)``.

    ``phi`` is negative inside the body, so the plus side is the exterior.
    """

    center: tuple = (0.501, 0.502)
    r0: float = 0.28
    r_tilde: float = 0.025
    lobes: int = 5
    name = "star"

    def __post_init__(self):
        if not self.r_tilde < self.r0:
            raise ValueError("star perturbation must be smaller than the mean radius")

    def radius(self, theta):
        return self.r0 + self.r_tilde * np.cos(self.lobes * theta)

    def phi(self, x, y):
        dx, dy = x - self.center[0], y - self.center[1]
        return np.hypot(dx, dy) - self.radius(np.arctan2(dy, dx))

    def grad(self, x, y):
        dx, dy = x - self.center[0], y - self.center[1]
        rho = np.hypot(dx, dy)
        th = np.arctan2(dy, dx)
        dR = -self.lobes * self.r_tilde * np.sin(self.lobes * th)
        gx = dx / rho + dR * dy / rho**2
        gy = dy / rho - dR * dx / rho**2
        return gx, gy

    def curvature(self, x, y):
        th = np.arctan2(y - self.center[1], x - self.center[0])
        return self._curvature_theta(th)

    def _curvature_theta(self, th):
        m = self.lobes
        R = self.radius(th)
        dR = -m * self.r_tilde * np.sin(m * th)
        d2R = -m * m * self.r_tilde * np.cos(m * th)
        return (R**2 + 2 * dR**2 - R * d2R) / (R**2 + dR**2) ** 1.5

    def sample_boundary(self, n):
        t = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        R = self.radius(t)
        return (self.center[0] + R * np.cos(t), self.center[1] + R * np.sin(t))

    def params(self):
        return {"center": tuple(self.center), "r0": self.r0, "r_tilde": self.r_tilde}


@dataclass
class Line(LevelSetGeometry):
    """Straight line through ``point``; the plus side lies along ``normal``."""

    point: tuple = (0.5, 0.5)
    normal_vec: tuple = (1.0, 0.0)
    name = "line"

    def _n(self):
        n = np.asarray(self.normal_vec, dtype=float)
        return n / np.linalg.norm(n)

    def phi(self, x, y):
        n = self._n()
        return (x - self.point[0]) * n[0] + (y - self.point[1]) * n[1]

    def grad(self, x, y):
        n = self._n()
        shape = np.shape(np.asarray(x) + np.asarray(y))
        return np.full(shape, n[0]), np.full(shape, n[1])

    def curvature(self, x, y):
        return np.zeros(np.shape(np.asarray(x) + np.asarray(y)))

    def params(self):
        return {"point": tuple(self.point), "normal": tuple(self._n())}


@dataclass
class Box(LevelSetGeometry):
    """Axis-aligned square, positive inside (used for small hand-checked domains)."""

    center: tuple = (0.5, 0.5)
    half_width: float = 0.2
    name = "box"

    def phi(self, x, y):
        return self.half_width - np.maximum(np.abs(x - self.center[0]), np.abs(y - self.center[1]))

    def params(self):
        return {"center": tuple(self.center), "half_width": self.half_width}


GEOMETRIES = {"circle": Circle, "star": Star, "line": Line, "box": Box}


def star_geometry(center=(0.501, 0.502), r0=0.28, r_tilde=0.025):
    return Star(center=tuple(center), r0=r0, r_tilde=r_tilde)


def make_geometry(name, **params):
    try:
        cls = GEOMETRIES[name]
    except KeyError:
        raise ValueError(f"unknown geometry {name!r}; choose from {sorted(GEOMETRIES)}") from None
    return cls(**params)


@dataclass
class ControlPoint:
    """Crossing of the grid edge ``lo -> hi`` (along ``axis``) with the zero set.

    ``theta`` is the distance from ``lo`` to the crossing in units of dx, so
    the fractional spacings seen from the two flanking nodes are
    ``psi_minus = theta`` (from ``lo``) and ``psi_plus = 1 - theta`` (from ``hi``).
    ``side_lo`` is the sign of phi at ``lo``.
    """

    index: int
    axis: int
    lo: tuple
    hi: tuple
    theta: float
    position: tuple
    normal: tuple
    side_lo: int
    kind: Condition = Condition.DIRICHLET
    shifted_theta: float | None = None

    @property
    def psi_minus(self):
        return self.theta

    @property
    def psi_plus(self):
        return 1.0 - self.theta

    def psi_from(self, node):
        """Fractional distance from flanking node ``node`` to the crossing."""
        t = self.theta if self.shifted_theta is None else self.shifted_theta
        return t if tuple(node) == tuple(self.lo) else 1.0 - t

    def node_on_side(self, side):
        return self.lo if self.side_lo == side else self.hi


def _edge_pairs(side, axis, periodic):
    nb = np.roll(side, -1, axis=axis)
    cross = side != nb
    if not periodic:
        idx = [slice(None)] * 2
        idx[axis] = -1
        cross[tuple(idx)] = False
    return cross


def find_control_points(grid, geometry, kind=Condition.DIRICHLET, strict=True, iterations=60):
    """Locate every sign change of phi along grid edges.

    Roots are refined by vectorised bisection; crossings that would land on
    a node are nudged ``1e-6 dx`` into the edge.  With ``strict`` set, a
    sign pattern that reveals more than one crossing on an edge (sampled
    at quarter points) raises :class:`MultipleCrossingsError`.
    """
    kind = Condition(kind)
    x, y = grid.coords()
    phi = geometry.phi(x, y)
    side = np.where(phi > 0, 1, -1).astype(np.int8)
    dx = grid.dx
    out = []
    for axis in (0, 1):
        cross = _edge_pairs(side, axis, grid.periodic[axis])
        e = np.array([1.0, 0.0]) if axis == 0 else np.array([0.0, 1.0])
        if strict:
            _check_edges(geometry, x, y, side, cross, axis, e, dx, grid.periodic[axis])
        ii, jj = np.nonzero(cross)
        if ii.size == 0:
            continue
        x0, y0 = x[ii, jj], y[ii, jj]
        s0 = side[ii, jj].astype(float)
        a = np.zeros(ii.size)
        b = np.ones(ii.size)
        for _ in range(iterations):
            m = 0.5 * (a + b)
            pm = geometry.phi(x0 + m * dx * e[0], y0 + m * dx * e[1])
            same = np.where(pm > 0, 1.0, -1.0) == s0
            a = np.where(same, m, a)
            b = np.where(same, b, m)
        theta = 0.5 * (a + b)
        theta = np.clip(theta, 1e-6, 1.0 - 1e-6)
        px = x0 + theta * dx * e[0]
        py = y0 + theta * dx * e[1]
        gx, gy = geometry.grad(px, py)
        gn = np.hypot(gx, gy)
        nxs, nys = gx / gn, gy / gn
        n = grid.nx if axis == 0 else grid.ny
        for k in range(ii.size):
            lo = (int(ii[k]), int(jj[k]))
            hi = ((lo[0] + 1) % n, lo[1]) if axis == 0 else (lo[0], (lo[1] + 1) % n)
            out.append(ControlPoint(
                index=len(out), axis=axis, lo=lo, hi=hi, theta=float(theta[k]),
                position=(float(px[k]), float(py[k])), normal=(float(nxs[k]), float(nys[k])),
                side_lo=int(side[lo]), kind=kind))
    return out


def _check_edges(geometry, x, y, side, cross, axis, e, dx, periodic):
    samples = [geometry.phi(x + t * dx * e[0], y + t * dx * e[1]) > 0 for t in (0.25, 0.5, 0.75)]
    hi_side = np.roll(side, -1, axis=axis) > 0
    seq = [side > 0] + samples + [hi_side]
    changes = sum((seq[i] != seq[i + 1]).astype(int) for i in range(4))
    bad = changes > 1
    if not periodic:
        idx = [slice(None)] * 2
        idx[axis] = -1
        bad[tuple(idx)] = False
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise MultipleCrossingsError(
            f"edge at node ({i}, {j}) along axis {axis} is crossed {int(changes[i, j])} times; "
            "geometry is under-resolved")


def edge_map(grid, points):
    """Dict ``(axis, lo_flat) -> control point index``."""
    return {(cp.axis, cp.lo[0] * grid.ny + cp.lo[1]): cp.index for cp in points}


def check_curvature_constraint(geometry, dx, samples=10000, grid=None):
    """True iff max |kappa dx| < 1/4 over sampled boundary points."""
    if hasattr(geometry, "sample_boundary"):
        px, py = geometry.sample_boundary(samples)
    else:
        if grid is None:
            from .grid import Grid2D
            grid = Grid2D.unit(int(round(1.0 / dx)))
        pts = find_control_points(grid, geometry, strict=False)
        if not pts:
            return True
        px = np.array([p.position[0] for p in pts])
        py = np.array([p.position[1] for p in pts])
    kappa = np.abs(geometry.curvature(px, py))
    return bool(np.max(kappa) * dx < 0.25)


def with_kind(points, kind):
    return [replace(p, kind=Condition(kind)) for p in points]
