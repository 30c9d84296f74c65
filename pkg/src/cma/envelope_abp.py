"""Convex envelopes, normal-mapping measures and ABP-type bounds on the lattice.

The envelope of ``w`` is the lower convex hull of the graph of ``-w^-`` over
the interior nodes (the constraint only binds in the domain). It is reported
on interior nodes and left undefined (NaN) on the boundary layer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog, minimize
from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError

from .errors import BoundarySignViolation, NotConvex, NoWitness
from .grid_domain import Ball, GridFunction, discrete_hessian, shifted, stencil_offsets
from .regularize import directional_second_differences
from .viscosity_jets import DEFAULT_RADIUS, DEFAULT_SLACK_TOL, default_tol, fit_jets, window_slack

TOL_CONVEX = 1e-8


def unit_ball_volume(m: int) -> float:
    return math.pi ** (m / 2) / math.gamma(m / 2 + 1)


def abp_constant(n: int) -> float:
    """``C(n) = 2 |B_1|^{-1/2n}`` with ``|B_1|`` the unit-ball volume in R^{2n}."""
    return 2.0 * unit_ball_volume(2 * n) ** (-1.0 / (2 * n))


def tol_contact(h: float, w_sup: float) -> float:
    return 10.0 * h ** 2 * (1.0 + w_sup)


def enclosing_radius(grid) -> float:
    """Radius ``r`` of a ball about the domain centre containing the domain."""
    if isinstance(grid.shape, Ball):
        return float(grid.shape.radius)
    return 0.5 * grid.diam


# -- envelope kernels ------------------------------------------------------------------

def lower_hull_exact(points: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Lower convex hull of the graph ``{(x, value)}`` evaluated at the same points."""
    if np.ptp(values) == 0:
        return values.copy()
    cloud = np.column_stack([points, values])
    try:
        hull = ConvexHull(cloud)
    except QhullError:
        hull = ConvexHull(cloud, qhull_options="QJ")
    eq = hull.equations
    lower = eq[eq[:, -2] < -1e-12]
    a = lower[:, :-2]
    c = lower[:, -2]
    b = lower[:, -1]
    out = np.full(len(points), -np.inf)
    for s in range(0, len(lower), 1024):
        planes = -(points @ a[s:s + 1024].T + b[s:s + 1024]) / c[s:s + 1024]
        out = np.maximum(out, planes.max(axis=1))
    return np.minimum(out, values)


def sweep_envelope(mask: np.ndarray, obstacle: np.ndarray, max_sweeps: int = 5000,
                   tol: float = 1e-13) -> tuple[np.ndarray, int]:
    """Largest function below ``obstacle`` that is midpoint-convex along axis and diagonal chords.

    Red-black sweeps replace each value by the smallest chord midpoint
    ``(G(x + k v) + G(x - k v)) / 2`` over all chord lengths ``k`` that stay
    on the mask, until nothing moves.
    """
    m = mask.ndim
    G = np.where(mask, obstacle, np.nan)
    dirs = [off for off in stencil_offsets(m) if off > tuple([0] * m)]
    idx = np.indices(mask.shape).sum(axis=0)
    colours = [(idx % 2 == 0) & mask, (idx % 2 == 1) & mask]
    kmax = max(mask.shape)
    chords = []
    for v in dirs:
        for k in range(1, kmax):
            off = tuple(k * o for o in v)
            both = shifted(mask, off) & shifted(mask, tuple(-o for o in off)) & mask
            if not np.any(both):
                break
            chords.append((off, both))
    for sweep in range(1, max_sweeps + 1):
        change = 0.0
        for col in colours:
            best = G.copy()
            for off, both in chords:
                sel = both & col
                mid = 0.5 * (shifted(G, off) + shifted(G, tuple(-o for o in off)))
                best = np.where(sel, np.fmin(best, mid), best)
            delta = np.nanmax(np.where(col, G - best, 0.0))
            change = max(change, delta)
            G = np.where(col, best, G)
        if change <= tol * (1.0 + np.nanmax(np.abs(G))):
            return G, sweep
    return G, max_sweeps


def envelope_of_obstacle(grid, obstacle: np.ndarray, method: str = "auto") -> tuple[np.ndarray, str, int]:
    """Convex envelope of an obstacle given on the interior nodes (full-lattice array, NaN elsewhere)."""
    if method == "auto":
        method = "hull" if grid.n == 1 else "sweep"
    if method == "hull":
        if grid.m != 2:
            raise ValueError("exact hull is only used for n = 1")
        out = np.full(grid.dims, np.nan)
        out[grid.interior] = lower_hull_exact(grid.points(grid.interior), obstacle[grid.interior])
        return out, method, 0
    if method == "sweep":
        out, sweeps = sweep_envelope(grid.interior, obstacle)
        return out, method, sweeps
    raise ValueError(f"unknown envelope method {method!r}")


# -- convex envelope ---------------------------------------------------------------

@dataclass
class EnvelopeResult:
    gamma: GridFunction
    contact_mask: np.ndarray
    w_minus: GridFunction
    r: float
    tol_contact: float
    method: str
    sweeps: int = 0

    def is_convex(self, tol: float = TOL_CONVEX) -> bool:
        return discrete_convexity_defect(self.gamma) >= -tol


def discrete_convexity_defect(gamma: GridFunction) -> float:
    """Most negative directional second difference over nodes where the envelope is defined."""
    g = gamma.grid
    ok = np.isfinite(gamma.values)
    worst = np.inf
    for off in (o for o in stencil_offsets(g.m) if o > tuple([0] * g.m)):
        neg = tuple(-o for o in off)
        both = ok & shifted(ok, off) & shifted(ok, neg)
        if np.any(both):
            d2 = shifted(gamma.values, off) + shifted(gamma.values, neg) - 2 * gamma.values
            worst = min(worst, float(np.min(d2[both])) / (g.h ** 2 * sum(o * o for o in off)))
    return worst


def convex_envelope(w: GridFunction, method: str = "auto", r: float | None = None,
                    contact_tol: float | None = None) -> EnvelopeResult:
    """Convex envelope ``Gamma_w`` of ``-w^-`` and the contact set ``{w = Gamma_w}`` in the interior.

    Contact nodes satisfy ``|w - Gamma_w| <= tol_contact`` and ``w < 0``: the
    envelope is strictly negative inside the domain unless ``w^- = 0``.
    """
    g = w.grid
    wsup = w.sup_norm()
    if np.min(w.values[g.boundary]) < -1e-10 * (1.0 + wsup):
        raise BoundarySignViolation(f"w = {np.min(w.values[g.boundary]):.3e} < 0 on the boundary")
    w_minus = np.where(g.mask, np.maximum(-w.values, 0.0), 0.0)
    w_minus[g.boundary] = 0.0
    gamma, method, sweeps = envelope_of_obstacle(g, np.where(g.interior, -w_minus, np.nan), method)
    ctol = tol_contact(g.h, wsup) if contact_tol is None else contact_tol
    if np.max(w_minus) > 0:
        gap = np.abs(np.where(g.interior, w.values - gamma, np.inf))
        contact = g.interior & (gap <= ctol) & (w_minus > 0)
    else:
        contact = np.zeros(g.dims, dtype=bool)
    r = enclosing_radius(g) if r is None else r
    return EnvelopeResult(GridFunction(g, gamma, strict=False), contact, GridFunction(g, w_minus), r, ctol, method, sweeps)


# -- normal mapping --------------------------------------------------------------------

def _clip_polygon(poly: np.ndarray, a: np.ndarray, b: float) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex polygon by ``a . p <= b``."""
    if len(poly) == 0:
        return poly
    s = poly @ a - b
    out = []
    n = len(poly)
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        sp, sq = s[i], s[(i + 1) % n]
        if sp <= 0:
            out.append(p)
        if (sp < 0 < sq) or (sq < 0 < sp):
            out.append(p + (q - p) * (sp / (sp - sq)))
    return np.array(out).reshape(-1, 2)


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _cell_volume(A: np.ndarray, b: np.ndarray, guess: np.ndarray, bound: float) -> float:
    """Volume of ``{p : A p <= b}``, intersected with ``|p|_inf <= bound``."""
    m = A.shape[1]
    if m == 2:
        poly = np.array([[-bound, -bound], [bound, -bound], [bound, bound], [-bound, bound]], float)
        for ai, bi in zip(A, b):
            poly = _clip_polygon(poly, ai, bi)
            if len(poly) < 3:
                return 0.0
        return _polygon_area(poly)
    A = np.vstack([A, np.eye(m), -np.eye(m)])
    b = np.concatenate([b, np.full(2 * m, bound)])
    norms = np.linalg.norm(A, axis=1)
    slack = b - A @ guess
    if np.all(slack > 1e-9 * (1 + np.abs(b))):
        inner = guess
    else:
        res = linprog(np.r_[np.zeros(m), -1.0], A_ub=np.column_stack([A, norms]), b_ub=b,
                      bounds=[(None, None)] * m + [(0, None)], method="highs")
        if res.status != 0 or res.x[-1] <= 1e-12:
            return 0.0
        inner = res.x[:m]
    hs = HalfspaceIntersection(np.column_stack([A, -b]), inner)
    try:
        return float(ConvexHull(hs.intersections).volume)
    except QhullError:
        return 0.0


def _window_offsets(m: int, radius: int) -> np.ndarray:
    offs = np.array(list(np.ndindex(*([2 * radius + 1] * m)))) - radius
    return offs[np.any(offs != 0, axis=1)]


def _slope_bound(gamma: GridFunction) -> float:
    g = gamma.grid
    return 10.0 * (1.0 + np.nanmax(gamma.values) - np.nanmin(gamma.values)) / g.h


def subgradient_cell(gamma: GridFunction, node, radius: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Half-spaces ``A p <= b`` of the discrete subdifferential at ``node`` and a central-difference guess.

    The slopes ``p`` satisfy ``Gamma(y) >= Gamma(x) + p.(y - x)`` for the
    lattice neighbours ``y`` in a window of half-width ``radius``.
    """
    g = gamma.grid
    radius = (3 if g.n == 1 else 1) if radius is None else radius
    node = np.asarray(node)
    ok = np.isfinite(gamma.values)
    idx = node + _window_offsets(g.m, radius)
    inside = np.all((idx >= 0) & (idx < np.array(g.dims)), axis=1)
    idx = idx[inside]
    idx = idx[ok[tuple(idx.T)]]
    A = (idx - node) * g.h
    b = gamma.values[tuple(idx.T)] - gamma.values[tuple(node)]
    eye = np.eye(g.m, dtype=int)
    guess = np.array([gamma.values[tuple(node + e)] - gamma.values[tuple(node - e)] for e in eye]) / (2 * g.h)
    return A, b, guess


def min_norm_subgradient(A: np.ndarray, b: np.ndarray, guess: np.ndarray) -> float:
    """Smallest ``|p|`` over ``{p : A p <= b}`` (inf when the cell is empty)."""
    if np.all(b >= -1e-12):
        return 0.0
    res = minimize(lambda p: p @ p, np.nan_to_num(guess), jac=lambda p: 2 * p, method="SLSQP",
                   constraints=[{"type": "ineq", "fun": lambda p: b - A @ p, "jac": lambda p: -A}])
    if not res.success or np.min(b - A @ res.x) < -1e-9 * (1 + np.abs(b).max()):
        return float("inf")
    return float(np.linalg.norm(res.x))


def normal_image_measure(gamma: GridFunction, subset_mask: np.ndarray, radius: int | None = None,
                         per_node: bool = False):
    """Lebesgue measure of the subgradient image of ``subset_mask`` nodes.

    Each node contributes the volume of its :func:`subgradient_cell` (window
    half-width 3 for n = 1, 1 for n = 2). Nodes whose axis neighbours fall
    outside the envelope's support are skipped.
    """
    g = gamma.grid
    if discrete_convexity_defect(gamma) < -TOL_CONVEX * (1 + gamma.sup_norm()) / g.h ** 2:
        raise NotConvex("envelope fails the discrete convexity test")
    ok = np.isfinite(gamma.values)
    axis_ok = ok.copy()
    for a in range(g.m):
        e = [0] * g.m
        e[a] = 1
        axis_ok &= shifted(ok, tuple(e)) & shifted(ok, tuple(-x for x in e))
    nodes = np.argwhere(subset_mask & g.interior & axis_ok)
    vol = np.zeros(len(nodes))
    bound = _slope_bound(gamma)
    for i, node in enumerate(nodes):
        A, b, guess = subgradient_cell(gamma, node, radius)
        vol[i] = _cell_volume(A, b, guess, bound)
    if per_node:
        return float(vol.sum()), nodes, vol
    return float(vol.sum())


# -- ABP estimate ------------------------------------------------------------------

@dataclass
class AbpReport:
    sup_u_minus: float
    l2_contact_norm: float
    l2_full_norm: float
    Cn: float
    r: float
    bound: float
    tolerance: float
    image_measure: float
    ball_measure: float
    tol_measure: float

    @property
    def passed(self) -> bool:
        return self.sup_u_minus <= self.bound + self.tolerance

    @property
    def ball_contained(self) -> bool:
        return self.image_measure >= self.ball_measure - self.tol_measure

    def record(self) -> dict:
        return {
            "sup_u_minus": self.sup_u_minus,
            "l2_contact": self.l2_contact_norm,
            "l2_full": self.l2_full_norm,
            "Cn": self.Cn,
            "r": self.r,
            "bound": self.bound,
            "pass": bool(self.passed and self.ball_contained),
            "image_measure": self.image_measure,
            "ball_measure": self.ball_measure,
        }

    def to_text(self) -> str:
        return "\n".join(f"{k}: {v}" for k, v in self.record().items()) + "\n"


def _f_on(f, u: GridFunction, which: np.ndarray) -> np.ndarray:
    g = u.grid
    return np.maximum(f(g.coords[which], u.values[which]), 0.0)


def abp_check(u: GridFunction, f, prob=None, r: float | None = None, tol: float | None = None,
              method: str = "auto", envelope: EnvelopeResult | None = None) -> AbpReport:
    """``sup u^- <= C(n) r ||f chi_contact||_{L^2}^{1/n}`` plus the normal-image ball containment."""
    g = u.grid
    if prob is not None:
        f = prob.f
    tol = default_tol(g.h) if tol is None else tol
    env = convex_envelope(u, method=method, r=r) if envelope is None else envelope
    vol = g.cell_volume()
    sup_minus = float(np.max(np.maximum(-u.values[g.mask], 0.0)))
    l2_contact = math.sqrt(float(np.sum(_f_on(f, u, env.contact_mask) ** 2)) * vol)
    l2_full = math.sqrt(float(np.sum(_f_on(f, u, g.interior) ** 2)) * vol)
    cn = abp_constant(g.n)
    bound = cn * env.r * l2_contact ** (1.0 / g.n)
    ball = unit_ball_volume(g.m) * (sup_minus / (2 * env.r)) ** g.m
    image = normal_image_measure(env.gamma, env.contact_mask) if sup_minus > 0 else 0.0
    return AbpReport(sup_minus, l2_contact, l2_full, cn, env.r, bound, tol, image, ball, 10.0 * g.h * ball)


# -- real Monge-Ampere supersolution test on the envelope ---------------------------------

@dataclass
class EnvelopeSuperReport:
    contact_worst: float
    off_contact_worst: float
    contact_equality: float
    contact_tested: int
    off_contact_tested: int
    off_contact_ruled: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.contact_worst <= self.tolerance and self.off_contact_worst <= self.tolerance

    def record(self) -> dict:
        return {
            "verdict": "pass" if self.passed else "fail",
            "contact_worst": self.contact_worst,
            "off_contact_worst": self.off_contact_worst,
            "contact_equality": self.contact_equality,
            "contact_tested": self.contact_tested,
            "off_contact_tested": self.off_contact_tested,
            "off_contact_ruled": self.off_contact_ruled,
            "tolerance": self.tolerance,
        }


def affine_chord_mask(gamma: GridFunction, rtol: float = 1e-9) -> np.ndarray:
    """Nodes ``x`` at the midpoint of an axis or diagonal lattice chord on which ``Gamma`` is affine."""
    g = gamma.grid
    G = gamma.values
    scale = rtol * (1.0 + np.nanmax(np.abs(G)))
    found = np.zeros(g.dims, dtype=bool)
    for v in (o for o in stencil_offsets(g.m) if o > tuple([0] * g.m)):
        for k in range(1, max(g.dims)):
            lo = shifted(G, tuple(-k * o for o in v))
            hi = shifted(G, tuple(k * o for o in v))
            found |= np.abs(np.nan_to_num(0.5 * (lo + hi) - G, nan=np.inf)) <= scale
    return found & np.isfinite(G)


def ruled_mask(env: EnvelopeResult, w: GridFunction, rtol: float = 1e-9) -> np.ndarray:
    """Nodes lying inside a segment on which the envelope is affine.

    For the exact hull these are the nodes strictly below the obstacle (they
    are not hull vertices, so they sit inside a face). For sweeps an affine
    axis or diagonal chord is located explicitly.
    """
    g = w.grid
    if env.method == "sweep":
        return affine_chord_mask(env.gamma, rtol)
    obstacle = -env.w_minus.values
    scale = rtol * (1.0 + env.gamma.sup_norm())
    return g.interior & (obstacle - np.nan_to_num(env.gamma.values, nan=np.inf) > scale)


def envelope_supersolution_check(u: GridFunction, f, tol: float | None = None,
                                 radius: int = DEFAULT_RADIUS, slack_tol: float = DEFAULT_SLACK_TOL,
                                 envelope: EnvelopeResult | None = None) -> EnvelopeSuperReport:
    """Real Monge-Ampere supersolution test for ``Gamma_u`` with right-hand side ``f^2 chi_contact``.

    Readings are ``det_r^{1/2n}`` of a convex quadratic touching ``Gamma_u``
    from below: on the contact set it must be ``<= f^{1/n} + tol``, off it
    ``<= tol``. Off the contact set, a segment through the node on which
    ``Gamma_u`` is affine forces every touching convex quadratic to be flat
    along it, so the reading is 0 (see :func:`ruled_mask`). Otherwise the least-squares jet with its
    Hessian projected onto the PSD cone is used, if it touches within
    ``slack_tol * h^2``.
    """
    g = u.grid
    tol = default_tol(g.h) if tol is None else tol
    env = convex_envelope(u) if envelope is None else envelope
    if not env.is_convex(TOL_CONVEX * (1 + env.gamma.sup_norm()) / g.h ** 2):
        raise NotConvex("envelope fails the discrete convexity test")
    nodes = np.argwhere(g.interior)
    jf = fit_jets(env.gamma, nodes, radius)
    lam, vec = np.linalg.eigh(jf.hessian)
    lam = np.clip(lam, 0, None)
    hess = np.einsum("nij,nj,nkj->nik", vec, lam, vec)
    _, below = window_slack(env.gamma, nodes, hess, jf.gradient, radius)
    touching = below <= slack_tol * g.h ** 2
    root = np.prod(lam, axis=1) ** (1.0 / g.m)
    sel = tuple(nodes.T)
    on = env.contact_mask[sel]
    ruled = ruled_mask(env, u)[sel] & ~on
    root[ruled] = 0.0
    touching |= ruled
    frt = np.maximum(f(g.coords[sel], u.values[sel]), 0.0) ** (1.0 / g.n)
    c_sel = touching & on
    o_sel = touching & ~on
    contact_worst = float(np.max(root[c_sel] - frt[c_sel])) if np.any(c_sel) else float("-inf")
    equality = float(np.max(np.abs(root[c_sel] - frt[c_sel]))) if np.any(c_sel) else 0.0
    off_worst = float(np.max(root[o_sel])) if np.any(o_sel) else float("-inf")
    return EnvelopeSuperReport(contact_worst, off_worst, equality, int(c_sel.sum()), int(o_sel.sum()),
                               int(ruled.sum()), tol)


# -- stability ------------------------------------------------------------------------

@dataclass
class StabilityReport:
    lhs: float
    boundary_term: float
    rhs: float
    orders: list

    tolerance: float

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs + self.tolerance

    def record(self) -> dict:
        return {"lhs": self.lhs, "boundary_term": self.boundary_term, "rhs": self.rhs,
                "pass": self.passed, "orders": self.orders}


def stability_bound(u1: GridFunction, u2: GridFunction, f1, f2, tol: float | None = None,
                    method: str = "auto") -> StabilityReport:
    """``|u1 - u2|_inf <= |u1 - u2|_{inf, boundary} + C(n) diam ||(f1 - f2) chi||^{1/n}``, both orders."""
    g = u1.grid
    tol = default_tol(g.h) if tol is None else tol
    diff = u1.values - u2.values
    lhs = float(np.max(np.abs(diff[g.mask])))
    bterm = float(np.max(np.abs(diff[g.boundary])))
    pts = g.coords[g.interior]
    df = np.abs(f1(pts, u1.values[g.interior]) - f2(pts, u2.values[g.interior]))
    dfield = np.zeros(g.dims)
    dfield[g.interior] = df
    cn = abp_constant(g.n)
    orders = []
    for sign in (1.0, -1.0):
        w = sign * diff
        shift = max(0.0, -float(np.min(w[g.boundary])))
        env = convex_envelope(GridFunction(g, w + shift), method=method)
        l2 = math.sqrt(float(np.sum(dfield[env.contact_mask] ** 2)) * g.cell_volume())
        orders.append({"sign": sign, "l2_contact": l2, "rhs": bterm + cn * g.diam * l2 ** (1.0 / g.n)})
    rhs = max(o["rhs"] for o in orders)
    return StabilityReport(lhs, bterm, rhs, orders, tol)


# -- gradient witness ------------------------------------------------------------------

def abp_gradient_witness(w: GridFunction, delta: float, tol: float | None = None,
                         envelope: EnvelopeResult | None = None):
    """Contact node with ``w = Gamma_w < 0``, ``|grad Gamma| < delta`` and ``det^{1/2n} D^2 Gamma >= delta/d``.

    A node qualifies on its pointwise readings (central-difference gradient,
    discrete Hessian) or on its Alexandrov readings (smallest subgradient,
    subgradient-cell volume over ``h^{2n}``). The two agree where ``Gamma``
    is smooth; at vertices of a polyhedral envelope only the latter are
    meaningful.
    """
    g = w.grid
    tol = default_tol(g.h) if tol is None else tol
    a = -w.min()
    d = g.diam
    if a <= 0:
        raise ValueError("w must take a negative value")
    if not 0 < delta < a / (2 * d):
        raise ValueError(f"delta must lie in (0, {a / (2 * d):.4g})")
    env = convex_envelope(w) if envelope is None else envelope
    G = env.gamma.values
    need = delta / d - tol
    bound = _slope_bound(env.gamma)
    best = None
    for node in map(tuple, np.argwhere(env.contact_mask)):
        if not G[node] < 0:
            continue
        A, b, guess = subgradient_cell(env.gamma, node)
        readings = []
        if np.all(np.isfinite(guess)):
            hess = discrete_hessian(env.gamma, node).entries
            if np.all(np.isfinite(hess)):
                readings.append((float(np.linalg.norm(guess)), float(np.linalg.det(hess))))
        pmin = min_norm_subgradient(A, b, guess)
        if pmin < delta:
            readings.append((pmin, _cell_volume(A, b, np.nan_to_num(guess), bound) / g.h ** g.m))
        for gnorm, det in readings:
            if gnorm < delta and np.isfinite(det) and max(det, 0.0) ** (1.0 / g.m) >= need:
                if best is None or gnorm < best[1]:
                    best = (node, gnorm, det)
    if best is None:
        raise NoWitness("no contact node satisfies the gradient and determinant bounds")
    return best[0]
