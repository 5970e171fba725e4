from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.sparse.linalg import spsolve

from iim_poisson.geometry import Circle, Condition, ControlPoint, LevelSetGeometry, Star
from iim_poisson.grid import Grid2D
from iim_poisson.manufactured import get_case
from iim_poisson.shortley_weller import (
    PIN_DIAGONAL,
    SWOperator,
    shift_intersections,
    sw_dirichlet_coeffs,
    sw_interface_wall_values,
    sw_neumann_coeffs,
)

psi = st.floats(0.5, 1.0)


def _cp(theta, side_lo=1, kind=Condition.DIRICHLET):
    return ControlPoint(index=0, axis=0, lo=(3, 4), hi=(4, 4), theta=theta,
                        position=(0.1, 0.2), normal=(1.0, 0.0), side_lo=side_lo, kind=kind)


def _quadratic_weights(pm, pp):
    # exactness on 1, x, x^2 with nodes at -pm, 0, pp; solved in exact arithmetic
    pm, pp = Fraction(pm), Fraction(pp)
    a = [[1, 1, 1], [-pm, 0, pp], [pm * pm, 0, pp * pp]]
    b = [Fraction(0), Fraction(0), Fraction(2)]
    n = 3
    for c in range(n):
        p = next(r for r in range(c, n) if a[r][c] != 0)
        a[c], a[p] = a[p], a[c]
        b[c], b[p] = b[p], b[c]
        for r in range(n):
            if r != c and a[r][c] != 0:
                f = a[r][c] / a[c][c]
                a[r] = [x - f * y for x, y in zip(a[r], a[c])]
                b[r] -= f * b[c]
    return [float(b[i] / a[i][i]) for i in range(n)]


# ---------------------------------------------------------------- shifting

def test_shift_keeps_far_crossing():
    (out,) = shift_intersections([_cp(0.8, side_lo=1)])
    assert out.shifted_theta == 0.8
    assert out.theta == 0.8


def test_shift_moves_near_crossing_to_half():
    (out,) = shift_intersections([_cp(0.1, side_lo=1)])
    assert out.shifted_theta == 0.5
    # in-domain node on the high side: distance is 1 - theta
    (out,) = shift_intersections([_cp(0.9, side_lo=-1)])
    assert out.shifted_theta == 0.5


def test_shift_interface_to_midpoint():
    (out,) = shift_intersections([_cp(0.3, kind=Condition.JUMP)])
    assert out.shifted_theta == 0.5
    assert out.psi_minus == 0.3


@given(st.floats(1e-6, 1.0), st.sampled_from([1, -1]))
def test_shift_distance_at_least_half(theta, side_lo):
    (out,) = shift_intersections([_cp(theta, side_lo=side_lo)])
    dist = out.shifted_theta if side_lo > 0 else 1.0 - out.shifted_theta
    assert dist >= 0.5


# ------------------------------------------------------------ coefficients

@pytest.mark.parametrize("pm, pp, expected", [
    (1.0, 1.0, (1.0, -2.0, 1.0)),
    (0.5, 0.5, (4.0, -8.0, 4.0)),
    (0.5, 1.0, (8 / 3, -4.0, 4 / 3)),
])
def test_dirichlet_coeff_examples(pm, pp, expected):
    c = sw_dirichlet_coeffs(pm, pp)
    np.testing.assert_allclose(c, expected, rtol=1e-14)
    np.testing.assert_allclose(c, _quadratic_weights(pm, pp), rtol=1e-14)
    assert abs(sum(c)) < 1e-13


@settings(max_examples=50)
@given(psi, psi)
def test_dirichlet_coeffs_quadratic_exact_and_bounded(pm, pp):
    c = np.array(sw_dirichlet_coeffs(pm, pp))
    nodes = np.array([-pm, 0.0, pp])
    for deg, want in ((0, 0.0), (1, 0.0), (2, 2.0)):
        assert c @ nodes**deg == pytest.approx(want, abs=1e-12)
    assert np.abs(c).max() <= 8.0 + 1e-12


def test_neumann_case_a_linear():
    w = sw_neumann_coeffs("a", 1.0, 1.0)
    dx, x0 = 0.1, 0.3
    val = w["g_minus"] * dx * 1.0 + w["u_i"] * x0 + w["u_plus"] * (x0 + dx)
    assert val == pytest.approx(0.0, abs=1e-14)


def test_neumann_case_b_linear():
    w = sw_neumann_coeffs("b", 0.7, 0.6)
    dx, x0 = 0.1, 0.3
    val = w["u_minus"] * (x0 - 0.7 * dx) + w["u_i"] * x0 + w["g_plus"] * dx * 1.0
    assert val == pytest.approx(0.0, abs=1e-14)


@settings(max_examples=30)
@given(psi, psi)
def test_neumann_case_c_quadratic(pm, pp):
    w = sw_neumann_coeffs("c", pm, pp)
    dx, x0 = 0.05, 0.4
    gm, gp = 2 * (x0 - pm * dx), 2 * (x0 + pp * dx)
    val = (w["g_minus"] * dx * gm + w["g_plus"] * dx * gp) / dx**2
    assert val == pytest.approx(2.0, rel=1e-12)


@pytest.mark.parametrize("case", ["a", "b", "c"])
def test_neumann_constant_zero_flux(case):
    w = sw_neumann_coeffs(case, 0.6, 0.8)
    u = sum(v for k, v in w.items() if k.startswith("u"))
    assert u == pytest.approx(0.0, abs=1e-14)


def test_neumann_bad_case():
    with pytest.raises(ValueError):
        sw_neumann_coeffs("d", 1.0, 1.0)


# ------------------------------------------------------------- interfaces

def test_interface_symmetric_average():
    wp, wm = sw_interface_wall_values(0.5, 0.5, 2.0, 2.0, 0.0, 0.0, 1.0, 3.0)
    assert wp == pytest.approx(2.0)
    assert wm == pytest.approx(2.0)


def test_interface_value_jump():
    wp, wm = sw_interface_wall_values(0.4, 0.6, 1.0, 3.0, 1.0, 0.0, 0.2, 0.5)
    assert wp - wm == pytest.approx(1.0, abs=1e-14)


@settings(max_examples=50)
@given(psi, psi, st.floats(1e-3, 1e3), st.floats(1e-3, 1e3),
       st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_interface_matches_two_by_two_solve(pm, pp, bm, bp, j0, j1, ui, uj):
    wp, wm = sw_interface_wall_values(pm, pp, bm, bp, j0, j1, ui, uj)
    am, ap = pm / bm, pp / bp
    # [u] = u_w+ - u_w- ; flux jump from one-sided differences
    m = np.array([[1.0, -1.0], [-1.0 / ap, -1.0 / am]])
    rhs = np.array([j0, j1 - uj / ap - ui / am])
    ref = np.linalg.solve(m, rhs)
    np.testing.assert_allclose([wp, wm], ref, rtol=1e-9, atol=1e-9)


def test_interface_large_ratio_limit():
    wp, wm = sw_interface_wall_values(0.5, 0.5, 1e4, 1.0, 0.0, 0.0, 1.0, 2.0)
    am, ap = 0.5 / 1e4, 0.5
    assert wp == pytest.approx((ap * 1.0 + am * 2.0) / (ap + am), rel=1e-14)
    assert abs(wp - 1.0) < 1e-3


# ------------------------------------------------------- assembled operator

def _regular(op):
    side = op.side
    same = np.ones(side.shape, dtype=bool)
    for ax in (0, 1):
        for d in (-1, 1):
            same &= np.roll(side, d, axis=ax) == side
    return same.ravel() & op.domain


@pytest.mark.parametrize("cond", ["dirichlet", "neumann", "jump"])
def test_regular_rows_are_five_point(cond):
    g = Grid2D.unit(32)
    op = SWOperator(g, Star(), cond, beta_plus=0.5)
    a = op.A.tocsr()
    h2 = g.dx**2
    for i in np.flatnonzero(_regular(op))[::7]:
        row = a.getrow(i)
        beta = op.beta_node[i] if not op.beta_divided else 1.0
        vals = dict(zip(row.indices, row.data * h2 / beta))
        assert vals.pop(i) == pytest.approx(-4.0)
        assert len(vals) == 4
        np.testing.assert_allclose(list(vals.values()), 1.0)


@pytest.mark.parametrize("cond", ["dirichlet", "jump"])
@pytest.mark.parametrize("shifted", [True, False])
def test_rows_sum_to_zero(cond, shifted):
    g = Grid2D.unit(64)
    op = SWOperator(g, Star(), cond, beta_plus=0.5, shifted=shifted)
    ones = np.ones(g.size)
    if cond == "dirichlet":
        out = op.apply(ones, np.ones(op.n_data))
    else:
        out = op.apply(ones, np.zeros(op.n_data))
    assert np.abs(out).max() < 1e-9 / g.dx**2


def test_neumann_constant_is_in_kernel():
    g = Grid2D.unit(64)
    op = SWOperator(g, Star(), "neumann")
    out = op.apply(np.ones(g.size), np.zeros(op.n_data))
    assert np.abs(out).max() < 1e-9 / g.dx**2
    assert op.is_singular


def test_shifted_dirichlet_coefficients_bounded():
    g = Grid2D.unit(128)
    op = SWOperator(g, Star(), "dirichlet")
    h2 = g.dx**2
    a = op.A.tocoo()
    off = a.row != a.col
    assert np.abs(a.data[off]).max() * h2 <= 8.0 + 1e-9
    # diagonal collects one c_i per axis
    assert np.abs(a.data[~off]).max() * h2 <= 16.0 + 1e-9
    assert np.abs(op.B.data).max() * h2 <= 8.0 + 1e-9


def test_full_domain_quadratic():
    g = Grid2D.unit(32)
    op = SWOperator(g, None)
    x, y = g.coords()
    u = x**2 + 3 * y**2
    lap = op.apply(u.ravel()).reshape(g.shape)
    # away from the periodic seam the 5-point stencil is exact on quadratics
    np.testing.assert_allclose(lap[1:-1, 1:-1], 8.0, rtol=1e-9)


def test_rotation_commutes(rng):
    n = 32
    g = Grid2D.unit(n)
    op = SWOperator(g, Circle(center=(0.5, 0.5), radius=0.3), "dirichlet")
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")

    def rot(a):
        return a.reshape(n, n)[j, (-i) % n].ravel()

    u = rng.standard_normal(g.size)
    u[~op.domain] = 0.0
    zero = np.zeros(op.n_data)
    np.testing.assert_allclose(rot(op.apply(u, zero)), op.apply(rot(u), zero),
                               atol=1e-9 / g.dx**2)


def test_control_positions_follow_shift():
    g = Grid2D.unit(64)
    geo = Star()
    op = SWOperator(g, geo, "jump")
    pos, _ = op.control_positions()
    for cp, p in zip(op.points, pos):
        lo = np.array(cp.lo) * g.dx
        want = lo.copy()
        want[cp.axis] += 0.5 * g.dx
        np.testing.assert_allclose(p, want, atol=1e-14)


class _Dot(LevelSetGeometry):
    # a disc holding exactly one node
    def phi(self, x, y):
        return 0.6 / 16 - np.hypot(x - 0.5, y - 0.5)


def test_isolated_node_is_pinned():
    g = Grid2D.unit(16)
    op = SWOperator(g, _Dot(), "neumann")
    node = 8 * 16 + 8
    assert op.pinned.sum() == 1 and op.pinned[node]
    assert op.A[node, node] == pytest.approx(PIN_DIAGONAL / g.dx**2)


@pytest.mark.slow
def test_unshifted_dirichlet_second_order():
    case = get_case("sine")
    sizes = [64, 128, 256, 512]
    errs = []
    for nx in sizes:
        g = Grid2D.unit(nx)
        op = SWOperator(g, Star(), "dirichlet", shifted=False)
        x, y = (c.ravel() for c in g.coords())
        side = op.side.ravel()
        d = op.dofs
        b = case.rhs(x, y, side) - op.B @ case.boundary_data(op)
        u = spsolve(op.A[d][:, d].tocsc(), b[d])
        errs.append(np.abs(u - case.u_sides(x, y, side)[d]).max())
    slope = -np.polyfit(np.log2(sizes), np.log2(errs), 1)[0]
    assert slope >= 1.7
