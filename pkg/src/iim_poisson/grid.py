"""Uniform node-centred Cartesian grids, masked scalar fields and norms."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np


class PointClass(IntEnum):
    INTERIOR = 0
    AFFECTED = 1
    EXTERIOR = 2


@dataclass(frozen=True)
class Grid2D:
    """Square-cell lattice with node ``(i, j)`` at ``origin + (i*dx, j*dx)``.

    Arrays living on the grid have shape ``(nx, ny)``; the first index runs
    along x.  Periodic axes wrap node ``nx`` back onto node ``0``.
    """

    nx: int
    ny: int
    dx: float
    origin: tuple = (0.0, 0.0)
    periodic: tuple = (True, True)

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid needs at least 2 nodes per axis, got {self.nx}x{self.ny}")
        if not self.dx > 0:
            raise ValueError("dx must be positive")

    @classmethod
    def unit(cls, nx, periodic=True):
        """``nx`` x ``nx`` nodes covering the unit square, ``dx = 1/nx``."""
        p = (bool(periodic), bool(periodic))
        return cls(nx=nx, ny=nx, dx=1.0 / nx, origin=(0.0, 0.0), periodic=p)

    @property
    def shape(self):
        return (self.nx, self.ny)

    @property
    def size(self):
        return self.nx * self.ny

    def node(self, i, j):
        return (self.origin[0] + i * self.dx, self.origin[1] + j * self.dx)

    def coords(self):
        x = self.origin[0] + self.dx * np.arange(self.nx)
        y = self.origin[1] + self.dx * np.arange(self.ny)
        return np.meshgrid(x, y, indexing="ij")

    def coarsen(self):
        if self.nx % 2 or self.ny % 2:
            raise ValueError("cannot coarsen a grid with an odd node count")
        return Grid2D(self.nx // 2, self.ny // 2, 2.0 * self.dx, self.origin, self.periodic)

    def flat(self, i, j):
        return np.asarray(i) * self.ny + np.asarray(j)


@dataclass
class ScalarField:
    """Node values together with the classification tags of each node."""

    grid: Grid2D
    values: np.ndarray
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)
        if self.mask is None:
            self.mask = np.full(self.grid.shape, PointClass.INTERIOR, dtype=np.int8)

    @property
    def active(self):
        return self.mask != PointClass.EXTERIOR

    def zero_exterior(self):
        self.values[~self.active] = 0.0
        return self


def _footprint_exceeds(grid, inside, w):
    """True where a node's +-w footprint along either axis leaves ``inside``."""
    out = np.zeros(grid.shape, dtype=bool)
    for axis, n in ((0, grid.nx), (1, grid.ny)):
        periodic = grid.periodic[axis]
        for s in range(1, w + 1):
            for d in (-1, 1):
                if periodic:
                    nb = np.roll(inside, -d * s, axis=axis)
                else:
                    nb = np.zeros_like(inside)
                    src = [slice(None)] * 2
                    dst = [slice(None)] * 2
                    if d > 0:
                        src[axis], dst[axis] = slice(s, n), slice(0, n - s)
                    else:
                        src[axis], dst[axis] = slice(0, n - s), slice(s, n)
                    nb[tuple(dst)] = inside[tuple(src)]
                out |= ~nb
    return out


def classify_points(grid, geometry, stencil_half_width, two_sided=False):
    """Tag every node INTERIOR, AFFECTED or EXTERIOR.

    The problem domain is ``phi > 0``.  With ``two_sided=True`` (interface
    problems) both sides belong to the domain and a node is AFFECTED when its
    footprint reaches the opposite side.  On non-periodic axes nodes within
    ``stencil_half_width`` of the box edge are EXTERIOR.
    """
    w = int(stencil_half_width)
    tags = np.full(grid.shape, PointClass.INTERIOR, dtype=np.int8)
    if geometry is None:
        side = np.ones(grid.shape, dtype=bool)
    else:
        x, y = grid.coords()
        side = geometry.phi(x, y) > 0
    frame = np.zeros(grid.shape, dtype=bool)
    for axis, n in ((0, grid.nx), (1, grid.ny)):
        if not grid.periodic[axis]:
            idx = [slice(None)] * 2
            idx[axis] = np.r_[0:w, n - w:n]
            frame[tuple(idx)] = True
    if two_sided:
        affected = _footprint_exceeds(grid, side & ~frame, w) & side
        affected |= _footprint_exceeds(grid, ~side & ~frame, w) & ~side
        exterior = frame
    else:
        affected = _footprint_exceeds(grid, side & ~frame, w) & side
        exterior = ~side | frame
    affected &= ~frame
    tags[affected] = PointClass.AFFECTED
    tags[exterior] = PointClass.EXTERIOR
    return tags


def field_norm(field, kind="Linf"):
    """Plain vector norm over the non-exterior nodes (no cell-area weights)."""
    vals = field.values[field.active]
    if vals.size == 0:
        return 0.0
    if kind in ("Linf", "inf", np.inf):
        return float(np.max(np.abs(vals)))
    if kind in ("L2", 2):
        return float(np.sqrt(np.dot(vals, vals)))
    raise ValueError(f"unknown norm kind {kind!r}")


def project_zero_mean(field):
    """Subtract the mean over non-exterior nodes in place and return the field."""
    act = field.active
    if act.any():
        field.values[act] -= field.values[act].mean()
    field.values[~act] = 0.0
    return field
