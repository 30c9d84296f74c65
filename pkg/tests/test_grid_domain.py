import numpy as np
import pytest

from cma.errors import GridTooCoarse, NegativeRhs, NonMonotoneRhs, StencilIncomplete
from cma.grid_domain import (
    Ball, Box, GridFunction, build_domain, complex_hessian_field, discrete_complex_hessian, discrete_hessian,
    hessian_field, psh_defect, read_csv, stencil_offsets, tol_psh, unit_ball, write_csv,
)
from cma.rhs import Constant, ExpU, Product, ProblemSpec, Radial, RadialPoly, eval_rhs, validate_rhs


def sq(p):
    return np.sum(p ** 2, axis=-1)


# -- domain --------------------------------------------------------------------------

def test_unit_ball_node_count_matches_area():
    g = unit_ball(1, 1 / 32)
    assert abs(g.interior.sum() - np.pi * 32 ** 2) / (np.pi * 32 ** 2) < 0.02
    assert not np.any(g.interior & g.boundary)
    assert g.diam == pytest.approx(2.0, abs=1e-12)


def test_too_coarse():
    with pytest.raises(GridTooCoarse):
        unit_ball(1, 1 / 2)
    with pytest.raises(ValueError):
        unit_ball(1, -0.1)


@pytest.mark.parametrize("n,h", [(1, 1 / 16), (2, 1 / 8)])
def test_stencil_closed(n, h):
    g = unit_ball(n, h)
    assert g.stencil_closed()
    for off in stencil_offsets(g.m):
        idx = np.argwhere(g.interior) + np.array(off)
        assert np.all(g.mask[tuple(idx.T)])


def test_box_domain():
    g = build_domain(Box((-1, -1), (1, 1)), 0.125, 1)
    pts = g.points(g.interior)
    assert np.all(np.abs(pts) < 1)
    assert g.diam == pytest.approx(2 * np.sqrt(2))
    np.testing.assert_allclose(g.center, [0, 0])


# -- discrete Hessians --------------------------------------------------------------------

def test_hessian_of_square_norm():
    g = unit_ball(1, 1 / 8)
    u = GridFunction.from_callable(g, sq)
    node = g.node_of((0.0, 0.0))
    np.testing.assert_allclose(discrete_hessian(u, node).entries, 2 * np.eye(2), atol=1e-10)


def test_hessian_odd_cubic_vanishes():
    g = unit_ball(1, 1 / 16)
    u = GridFunction.from_callable(g, lambda p: p[:, 0] ** 3)
    s = discrete_hessian(u, g.node_of((0.0, 0.0))).entries
    assert abs(s[0, 0]) < 1e-10


@pytest.mark.parametrize("n", [1, 2])
def test_hessian_exact_on_random_quadratic(n):
    rng = np.random.default_rng(n)
    g = unit_ball(n, 1 / 6 if n == 2 else 1 / 16)
    a = rng.normal(size=(g.m, g.m))
    a = a + a.T
    b = rng.normal(size=g.m)
    u = GridFunction.from_callable(g, lambda p: 0.5 * np.einsum("ki,ij,kj->k", p, a, p) + p @ b + 1.0)
    hs = hessian_field(u)
    assert np.max(np.abs(hs - a)) < 1e-9


def test_hessian_second_order_on_smooth_function():
    errs = []
    for h in (1 / 8, 1 / 16, 1 / 32):
        g = unit_ball(1, h)
        u = GridFunction.from_callable(g, lambda p: np.exp(sq(p)))
        x = g.points(g.interior)
        r2 = sq(x)
        exact = np.exp(r2)[:, None, None] * (2 * np.eye(2) + 4 * np.einsum("ki,kj->kij", x, x))
        errs.append(np.max(np.abs(hessian_field(u) - exact)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.8)


def test_stencil_incomplete_on_boundary():
    g = unit_ball(1, 1 / 8)
    u = GridFunction.from_callable(g, sq)
    node = tuple(np.argwhere(g.boundary)[0])
    with pytest.raises(StencilIncomplete):
        discrete_hessian(u, node)


@pytest.mark.parametrize("fn,expected", [
    (sq, 2.0),
    (lambda p: p[:, 0] ** 2, 1.0),
    (lambda p: p[:, 0] ** 2 - p[:, 1] ** 2, 0.0),  # Re(z^2)
])
def test_complex_hessian_examples(fn, expected):
    g = unit_ball(1, 1 / 8)
    u = GridFunction.from_callable(g, fn)
    h = discrete_complex_hessian(u, g.node_of((0.25, -0.125)))
    np.testing.assert_allclose(h.entries, [[expected]], atol=1e-10)


def test_complex_hessian_is_hermitian():
    rng = np.random.default_rng(0)
    g = unit_ball(2, 1 / 6)
    u = GridFunction(g, np.where(g.mask, rng.normal(size=g.dims), np.nan))
    hc = complex_hessian_field(u)
    np.testing.assert_allclose(hc, np.conj(np.swapaxes(hc, 1, 2)), atol=1e-12)


def test_psh_defect_examples():
    g = unit_ball(1, 1 / 8)
    assert psh_defect(GridFunction.from_callable(g, sq)) == pytest.approx(2.0, abs=1e-10)
    assert psh_defect(GridFunction.from_callable(g, lambda p: -sq(p))) == pytest.approx(-2.0, abs=1e-10)
    # Re(z^2) adds nothing; dd^c of 0.1 |z|^2 is 0.2 under the normalisation dd^c |z|^2 = 2
    u = GridFunction.from_callable(g, lambda p: p[:, 0] ** 2 - p[:, 1] ** 2 + 0.1 * sq(p))
    assert psh_defect(u) == pytest.approx(0.2, abs=1e-10)
    assert tol_psh(g) == pytest.approx(10 / 8)


def test_psh_defect_n2_pluriharmonic_plus_square():
    g = unit_ball(2, 1 / 6)
    # Re(z1 z2) = x1 x2 - y1 y2 is pluriharmonic
    u = GridFunction.from_callable(g, lambda p: p[:, 0] * p[:, 1] - p[:, 2] * p[:, 3] + 0.1 * sq(p))
    assert psh_defect(u) == pytest.approx(0.2, abs=1e-10)


# -- grid functions and CSV -------------------------------------------------------------

def test_grid_function_rejects_nan_on_mask():
    g = unit_ball(1, 1 / 8)
    vals = np.zeros(g.dims)
    vals[g.node_of((0.0, 0.0))] = np.nan
    with pytest.raises(ValueError):
        GridFunction(g, vals)
    GridFunction(g, vals, strict=False)


def test_csv_round_trip(tmp_path):
    g = unit_ball(1, 1 / 8)
    u = GridFunction.from_callable(g, lambda p: np.sin(p[:, 0]) + sq(p))
    path = tmp_path / "u.csv"
    write_csv(u, path)
    text = path.read_bytes()
    assert b"\r\n" not in text
    header = text.split(b"\n", 1)[0].decode()
    assert header == "index_0,index_1,x_0,x_1,value"
    assert text.count(b"\n") == g.mask.sum() + 1
    back = read_csv(path, g)
    np.testing.assert_array_equal(back.values[g.mask], u.values[g.mask])


# -- right-hand sides -------------------------------------------------------------------

def test_eval_rhs_examples():
    g = unit_ball(1, 1 / 8)
    node = g.node_of((0.25, 0.5))
    assert eval_rhs(Constant(4.0), g, node, -3.0) == 4.0
    assert eval_rhs(ExpU(RadialPoly((2.0,))), g, node, 0.0) == pytest.approx(2.0)
    for n in (1, 2):
        gn = unit_ball(n, 1 / 8 if n == 1 else 1 / 4)
        phi = RadialPoly((2.0 ** n * np.e,), -1.0)
        pts = gn.points(gn.interior)
        vals = ExpU(phi)(pts, sq(pts) - 1)
        np.testing.assert_allclose(vals, 2.0 ** n, rtol=1e-12)


def test_rhs_validation():
    g = unit_ball(1, 1 / 8)
    with pytest.raises(NegativeRhs):
        Constant(-1.0)
    with pytest.raises(NegativeRhs):
        validate_rhs(Radial(RadialPoly((-1.0, 1.0))), g)
    with pytest.raises(NonMonotoneRhs):
        Product(RadialPoly((1.0,)), (0.0, 1.0), (2.0, 1.0))
    validate_rhs(Product(RadialPoly((1.0,)), (0.0, 1.0), (1.0, 2.0)), g)


def test_problem_spec_requires_same_grid():
    g1, g2 = unit_ball(1, 1 / 8), unit_ball(1, 1 / 8)
    with pytest.raises(ValueError):
        ProblemSpec(g1, GridFunction.constant(g2, 0.0), Constant(1.0))
