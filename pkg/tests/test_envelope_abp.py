import math

import numpy as np
import pytest

from cma.envelope_abp import (
    abp_check, abp_constant, abp_gradient_witness, convex_envelope, discrete_convexity_defect,
    envelope_of_obstacle, envelope_supersolution_check, lower_hull_exact, normal_image_measure, stability_bound,
    tol_contact, unit_ball_volume,
)
from cma.errors import BoundarySignViolation, NotConvex
from cma.grid_domain import Box, GridFunction, build_domain, unit_ball


def sq(p):
    return np.sum(p ** 2, axis=-1)


def const(c):
    return lambda p, t: np.full(len(p), float(c))


@pytest.fixture(scope="module")
def g1():
    return unit_ball(1, 1 / 16)


def hat(grid):
    vals = np.where(grid.mask, 0.0, np.nan)
    vals[grid.node_of((0.0,) * grid.m)] = -1.0
    return GridFunction(grid, vals)


def brute_lower_hull(points, values):
    """max over all lower supporting planes through triples of points (tiny inputs only)."""
    best = np.full(len(points), -np.inf)
    k = len(points)
    for i in range(k):
        for j in range(i + 1, k):
            for l in range(j + 1, k):
                A = np.column_stack([points[[i, j, l]], np.ones(3)])
                if abs(np.linalg.det(A)) < 1e-12:
                    continue
                coef = np.linalg.solve(A, values[[i, j, l]])
                plane = points @ coef[:2] + coef[2]
                if np.all(plane <= values + 1e-12):
                    best = np.maximum(best, plane)
    return best


# -- constants -----------------------------------------------------------------------

def test_abp_constant():
    assert abp_constant(1) == pytest.approx(2 / math.sqrt(math.pi))
    assert abp_constant(2) == pytest.approx(2 * (math.pi ** 2 / 2) ** (-0.25))
    assert unit_ball_volume(4) == pytest.approx(math.pi ** 2 / 2)


# -- envelopes ------------------------------------------------------------------------

def test_exact_hull_matches_brute_force():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1, 1, size=(14, 2))
    vals = rng.normal(size=14)
    np.testing.assert_allclose(lower_hull_exact(pts, vals), brute_lower_hull(pts, vals), atol=1e-10)


def test_paraboloid_envelope(g1):
    w = GridFunction.from_callable(g1, lambda p: sq(p) - 1)
    env = convex_envelope(w)
    assert np.max(np.abs(env.gamma.values - w.values)[g1.interior]) < 1e-12
    assert np.array_equal(env.contact_mask, g1.interior)
    assert env.is_convex()


def test_nonnegative_gives_zero_envelope(g1):
    w = GridFunction.from_callable(g1, lambda p: 1 + sq(p))
    env = convex_envelope(w)
    np.testing.assert_allclose(env.gamma.values[g1.interior], 0.0)
    assert not env.contact_mask.any()


def test_hat_gives_cone(g1):
    env = convex_envelope(hat(g1))
    pts = g1.points(g1.interior)
    assert np.max(np.abs(env.gamma.values[g1.interior] - (np.sqrt(sq(pts)) - 1))) <= 1.5 * g1.h
    assert np.argwhere(env.contact_mask).tolist() == [list(g1.node_of((0.0, 0.0)))]


def test_boundary_sign_violation(g1):
    with pytest.raises(BoundarySignViolation):
        convex_envelope(GridFunction.from_callable(g1, lambda p: sq(p) - 4))


def test_idempotence(g1):
    w = GridFunction.from_callable(g1, lambda p: np.minimum(0, (sq(p) - 1) * (1 + 0.3 * p[:, 0])))
    env = convex_envelope(w)
    again = convex_envelope(GridFunction(g1, np.where(g1.interior, env.gamma.values, 0.0)))
    np.testing.assert_allclose(again.gamma.values[g1.interior], env.gamma.values[g1.interior], atol=1e-10)


def test_contact_inside_domain(g1):
    rng = np.random.default_rng(2)
    vals = np.where(g1.interior, -rng.uniform(0, 1, size=g1.dims), 0.0)
    env = convex_envelope(GridFunction(g1, np.where(g1.mask, vals, np.nan)))
    assert not np.any(env.contact_mask & ~g1.interior)
    assert env.contact_mask.any()
    assert discrete_convexity_defect(env.gamma) >= -1e-9


def test_sweep_on_separable_inputs_matches_planar_hull():
    h = 1 / 6
    g2 = build_domain(Box((-1, -1), (1, 1)), h, 1)
    g4 = build_domain(Box((-1,) * 4, (1,) * 4), h, 2)

    def a(x, y):
        return -(np.exp(-6 * ((x - 0.3) ** 2 + y ** 2)) + 0.7 * np.exp(-6 * ((x + 0.4) ** 2 + (y - 0.3) ** 2)))

    G2, _, _ = envelope_of_obstacle(g2, np.where(g2.interior, a(g2.coords[..., 0], g2.coords[..., 1]), np.nan), "hull")
    S2, _, _ = envelope_of_obstacle(g2, np.where(g2.interior, a(g2.coords[..., 0], g2.coords[..., 1]), np.nan), "sweep")
    x = g4.coords
    obst = a(x[..., 0], x[..., 1]) + a(x[..., 2], x[..., 3])
    G4, method, _ = envelope_of_obstacle(g4, np.where(g4.interior, obst, np.nan))
    assert method == "sweep"
    i = np.argwhere(g4.interior)
    got = G4[g4.interior]
    # the sweep kernel respects the product structure exactly
    np.testing.assert_allclose(got, S2[i[:, 0], i[:, 1]] + S2[i[:, 2], i[:, 3]], atol=1e-10)
    oracle = G2[i[:, 0], i[:, 1]] + G2[i[:, 2], i[:, 3]]
    assert np.max(np.abs(got - oracle)) <= 3 * tol_contact(h, np.max(np.abs(obst[g4.interior])))
    assert np.all(got >= oracle - 1e-10)


# -- normal mapping ---------------------------------------------------------------------

def test_paraboloid_image_converges_to_4pi():
    gaps = []
    for h in (1 / 16, 1 / 32):
        g = unit_ball(1, h)
        env = convex_envelope(GridFunction.from_callable(g, lambda p: sq(p) - 1))
        gaps.append(4 * np.pi - normal_image_measure(env.gamma, g.interior))
    assert 0 < gaps[1] < gaps[0] and gaps[0] / gaps[1] > 1.8
    assert gaps[1] <= 30 * (1 / 32)


def test_cone_vertex_measure(g1):
    env = convex_envelope(hat(g1))
    m = normal_image_measure(env.gamma, env.contact_mask)
    # the rim of interior nodes sits inside the unit circle, so the vertex slopes reach slightly past 1
    assert abs(m - np.pi) <= 3 * g1.h


def test_affine_measure_is_zero(g1):
    gamma = GridFunction.from_callable(g1, lambda p: 0.3 * p[:, 0] - p[:, 1])
    assert normal_image_measure(gamma, g1.interior) == pytest.approx(0.0, abs=1e-10)


def test_not_convex_rejected(g1):
    with pytest.raises(NotConvex):
        normal_image_measure(GridFunction.from_callable(g1, lambda p: -sq(p)), g1.interior)


# -- ABP ------------------------------------------------------------------------------------

def test_abp_radial_example(g1):
    u = GridFunction.from_callable(g1, lambda p: sq(p) - 1)
    rep = abp_check(u, const(2.0))
    assert rep.sup_u_minus == pytest.approx(1.0)
    assert rep.l2_contact_norm == pytest.approx(2 * math.sqrt(math.pi), rel=0.02)
    assert rep.bound == pytest.approx(4.0, rel=0.05)
    assert rep.passed and rep.ball_contained
    assert rep.l2_contact_norm <= rep.l2_full_norm + 1e-12


def test_abp_nonnegative_trivial(g1):
    rep = abp_check(GridFunction.from_callable(g1, lambda p: sq(p) + 0.1), const(2.0))
    assert rep.sup_u_minus == 0.0 and rep.passed


def test_alexandrov_chain(g1):
    # |grad Gamma(U)| <= sum over contact nodes in U of f^2 h^2 for sub-masks U
    u = GridFunction.from_callable(g1, lambda p: sq(p) - 1)
    env = convex_envelope(u)
    pts = g1.coords
    for rad in (0.3, 0.6, 0.9):
        U = g1.interior & (sq(pts) < rad ** 2)
        lhs = normal_image_measure(env.gamma, U)
        rhs = np.sum(4.0 * (U & env.contact_mask)) * g1.cell_volume()
        assert lhs <= rhs + 10 * g1.h


# -- real MA supersolution of the envelope ----------------------------------------------------

def test_envelope_super_radial_equality(g1):
    u = GridFunction.from_callable(g1, lambda p: sq(p) - 1)
    rep = envelope_supersolution_check(u, const(2.0))
    assert rep.passed and rep.contact_equality <= 10 * g1.h
    assert envelope_supersolution_check(u, const(4.0)).passed


def test_cone_off_contact_is_flat(g1):
    rep = envelope_supersolution_check(hat(g1), const(2.0))
    assert rep.off_contact_tested > 0
    assert rep.off_contact_worst <= rep.tolerance
    assert rep.off_contact_worst <= 1e-8


# -- stability ----------------------------------------------------------------------------------

def test_stability_examples(g1):
    u1 = GridFunction.from_callable(g1, lambda p: sq(p) - 1)
    u2 = GridFunction.from_callable(g1, lambda p: 2 * sq(p) - 2)
    same = stability_bound(u1, u1, const(2.0), const(2.0))
    assert same.lhs == 0.0 and same.rhs == 0.0 and same.passed
    a = stability_bound(u1, u2, const(2.0), const(4.0))
    b = stability_bound(u2, u1, const(4.0), const(2.0))
    assert a.passed and b.passed
    assert a.rhs == pytest.approx(b.rhs)
    interior_gap = np.max(np.abs((u1 - u2).values[g1.interior]))
    assert interior_gap == pytest.approx(1.0)


# -- gradient witness ------------------------------------------------------------------------------

def test_gradient_witness_paraboloid(g1):
    w = GridFunction.from_callable(g1, lambda p: sq(p) - 1)
    node = abp_gradient_witness(w, 0.2)
    x = g1.coords[node]
    assert 2 * np.linalg.norm(x) < 0.2


def test_gradient_witness_cone_vertex(g1):
    # the vertex has central-difference gradient 0; its discrete Hessian is large
    assert abp_gradient_witness(hat(g1), 0.1) == g1.node_of((0.0, 0.0))


def test_gradient_witness_preconditions(g1):
    with pytest.raises(ValueError):
        abp_gradient_witness(GridFunction.from_callable(g1, lambda p: sq(p) + 1), 0.1)
    with pytest.raises(ValueError):
        abp_gradient_witness(GridFunction.from_callable(g1, lambda p: sq(p) - 1), 1.0)


def test_gradient_witness_exists_on_random_inputs(g1):
    rng = np.random.default_rng(4)
    for _ in range(5):
        vals = np.where(g1.interior, -rng.uniform(0, 1, size=g1.dims) * (1 - sq(g1.coords)), 0.0)
        w = GridFunction(g1, np.where(g1.mask, vals, np.nan))
        delta = -w.min() / (4 * g1.diam)
        node = abp_gradient_witness(w, delta)
        assert w.values[node] < 0
