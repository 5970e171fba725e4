"""Manufactured solutions and the boundary data they induce."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Condition


def _s(x, y):
    return np.sin(4 * np.pi * x) * np.sin(2 * np.pi * y)


def _sx(x, y):
    return 4 * np.pi * np.cos(4 * np.pi * x) * np.sin(2 * np.pi * y)


def _sy(x, y):
    return 2 * np.pi * np.sin(4 * np.pi * x) * np.cos(2 * np.pi * y)


def _slap(x, y):
    return -20 * np.pi**2 * _s(x, y)


@dataclass(frozen=True)
class ManufacturedCase:
    """``u = offset + scale * s`` on each side, with ``s = sin(4 pi x) sin(2 pi y)``.

    ``plus``/``minus`` hold ``(offset, scale)``.
    """

    name: str
    plus: tuple = (0.0, 1.0)
    minus: tuple = (0.0, 1.0)

    def _coef(self, side):
        return self.plus if side > 0 else self.minus

    def u(self, x, y, side=1):
        a, b = self._coef(side)
        return a + b * _s(x, y)

    def grad(self, x, y, side=1):
        _, b = self._coef(side)
        return b * _sx(x, y), b * _sy(x, y)

    def laplacian(self, x, y, side=1):
        _, b = self._coef(side)
        return b * _slap(x, y)

    def u_sides(self, x, y, side):
        """Exact values with the side chosen per point (``side`` array of +-1)."""
        return np.where(side > 0, self.u(x, y, 1), self.u(x, y, -1))

    def rhs(self, x, y, side, beta_plus=1.0, beta_minus=1.0):
        """``beta * Laplacian(u)`` per side."""
        return np.where(side > 0, beta_plus * self.laplacian(x, y, 1),
                        beta_minus * self.laplacian(x, y, -1))

    def normal_derivative(self, x, y, nx, ny, side=1):
        gx, gy = self.grad(x, y, side)
        return gx * nx + gy * ny

    def boundary_data(self, op, beta_plus=1.0, beta_minus=1.0):
        """Data vector for ``op`` (Dirichlet values, fluxes ``beta d_n u``, or jump pairs)."""
        pos, nrm = op.control_positions()
        x, y = pos[:, 0], pos[:, 1]
        cond = op.condition
        if cond is Condition.DIRICHLET:
            return self.u(x, y, 1)
        if cond is Condition.NEUMANN:
            return beta_plus * self.normal_derivative(x, y, nrm[:, 0], nrm[:, 1], 1)
        j0 = self.u(x, y, 1) - self.u(x, y, -1)
        j1 = (beta_plus * self.normal_derivative(x, y, nrm[:, 0], nrm[:, 1], 1)
              - beta_minus * self.normal_derivative(x, y, nrm[:, 0], nrm[:, 1], -1))
        out = np.empty(2 * x.size)
        out[0::2] = j0
        out[1::2] = j1
        return out

    def boundary_quantity(self, op, beta_plus=1.0):
        """Exact value of what :meth:`ImmersedOperator.boundary_quantity` recovers."""
        pos, nrm = op.control_positions()
        x, y = pos[:, 0], pos[:, 1]
        dn = self.normal_derivative(x, y, nrm[:, 0], nrm[:, 1], 1)
        if op.condition is Condition.DIRICHLET:
            return beta_plus * dn
        if op.condition is Condition.NEUMANN:
            return self.u(x, y, 1)
        return dn


CASES = {
    "sine": ManufacturedCase("sine"),
    "interface": ManufacturedCase("interface", plus=(0.6, 0.4), minus=(0.0, 1.0)),
}


def get_case(name):
    try:
        return CASES[name]
    except KeyError:
        raise ValueError(f"unknown manufactured case {name!r}; choose from {sorted(CASES)}") from None
