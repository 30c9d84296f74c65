"""Dirichlet solver for ``M_C(u) = f(z, u)`` and the Perron-type refinement operators.

The main path is a monotone pointwise scheme: at an interior node the center
value is chosen so that ``det^{1/n}(dd^c_h u) = f^{1/n}(z, u)`` with the
neighbours frozen, sweeping parity colours until the residual falls below
``tol_solve``. Subsolution replacement, bumps, the harmonic majorant and the
default subsolution are provided as verifiable refinement passes.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import jn_zeros

from .errors import BumpInvalid, NoConvergence, NoSubsolution, NonMonotoneRhs, NotPsh
from .grid_domain import Ball, GridFunction
from .hermitian_core import QuadraticJet
from .regularize import interior_core
from .viscosity_jets import ViscosityReport, check_both, check_subsolution, check_supersolution, default_tol

log = logging.getLogger(__name__)

BISECT_TOL = 1e-12


# -- discrete operator -------------------------------------------------------------

class DiscreteOperator:
    """Sparse maps from masked-node values to the entries of ``dd^c_h u`` at interior nodes.

    Entries are ``[a]`` for n = 1 and ``[a, d, Re b, Im b]`` for n = 2, where
    ``dd^c_h u = [[a, b], [conj(b), d]]``. The center value enters every
    diagonal entry with coefficient ``-2/h^2`` and no off-diagonal entry.
    """

    def __init__(self, grid):
        self.grid = grid
        g = grid
        m = g.m
        self.pos = np.full(g.dims, -1, dtype=np.int64)
        self.pos[g.mask] = np.arange(int(g.mask.sum()))
        self.nodes = np.argwhere(g.interior)
        self.rows = self.pos[g.interior]
        S = {}
        for a in range(m):
            for b in range(a, m):
                S[a, b] = self._second_difference(a, b)
        n = g.n
        half = 0.5
        if n == 1:
            ops = [half * (S[0, 0] + S[1, 1])]
        else:
            ops = [half * (S[0, 0] + S[2, 2]), half * (S[1, 1] + S[3, 3]),
                   half * (S[0, 1] + S[2, 3]), half * (S[1, 2] - S[0, 3])]
        self.k = len(ops)
        self.E = sp.vstack(ops).tocsr()
        self.points = g.coords[g.interior]
        self.n_int = len(self.rows)
        colour = np.zeros(self.n_int, dtype=int)
        for a in range(m):
            colour += (self.nodes[:, a] % 2) << a
        self.colours = [np.flatnonzero(colour == c) for c in range(2 ** m) if np.any(colour == c)]
        self._colour_ops = [self._restrict(rows) for rows in self.colours]

    def _second_difference(self, a: int, b: int) -> sp.csr_matrix:
        g = self.grid
        m = g.m
        h2 = g.h ** 2
        terms = []
        if a == b:
            e = np.zeros(m, dtype=int)
            e[a] = 1
            terms = [(e, 1.0 / h2), (-e, 1.0 / h2), (np.zeros(m, dtype=int), -2.0 / h2)]
        else:
            for sa in (1, -1):
                for sb in (1, -1):
                    e = np.zeros(m, dtype=int)
                    e[a], e[b] = sa, sb
                    terms.append((e, sa * sb / (4.0 * h2)))
        rows, cols, vals = [], [], []
        for off, w in terms:
            nb = self.nodes + off
            col = self.pos[tuple(nb.T)]
            if np.any(col < 0):
                raise ValueError("Hessian stencil leaves the closed domain")
            rows.append(np.arange(len(nb)))
            cols.append(col)
            vals.append(np.full(len(nb), w))
        shape = (len(self.nodes), int(g.mask.sum()))
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape)

    def _restrict(self, rows: np.ndarray) -> sp.csr_matrix:
        idx = np.concatenate([rows + j * self.n_int for j in range(self.k)])
        return self.E[idx]

    def entries(self, vec: np.ndarray, colour: int | None = None) -> np.ndarray:
        E = self.E if colour is None else self._colour_ops[colour]
        return (E @ vec).reshape(self.k, -1)

    def to_vector(self, u: GridFunction) -> np.ndarray:
        return u.values[self.grid.mask].copy()

    def to_grid(self, vec: np.ndarray) -> GridFunction:
        vals = np.full(self.grid.dims, np.nan)
        vals[self.grid.mask] = vec
        return GridFunction(self.grid, vals)


def root_det_entries(ent: np.ndarray) -> np.ndarray:
    """Monotone ``det^{1/n}``: the root when PSD, the smallest eigenvalue otherwise."""
    if ent.shape[0] == 1:
        return ent[0].copy()
    a, d, br, bi = ent
    det = a * d - br ** 2 - bi ** 2
    lam = 0.5 * (a + d) - np.sqrt(0.25 * (a - d) ** 2 + br ** 2 + bi ** 2)
    psd = lam >= 0
    return np.where(psd, np.sqrt(np.maximum(det, 0.0)), lam)


def _shift_for_root(ent: np.ndarray, F: np.ndarray) -> np.ndarray:
    """``s`` with ``root_det(H - s I) = F`` for ``F >= 0`` (closed form)."""
    if ent.shape[0] == 1:
        return ent[0] - F
    a, d, br, bi = ent
    return 0.5 * ((a + d) - np.sqrt((a - d) ** 2 + 4 * (br ** 2 + bi ** 2) + 4 * F ** 2))


def _shifted_entries(ent: np.ndarray, s: np.ndarray) -> np.ndarray:
    out = ent.copy()
    out[0] -= s
    if ent.shape[0] > 1:
        out[1] -= s
    return out


def pointwise_solve(op: DiscreteOperator, vec: np.ndarray, rows: np.ndarray, f, lo: np.ndarray,
                    hi: np.ndarray, colour: int | None = None) -> np.ndarray:
    """Center values solving the node equation with neighbours frozen.

    ``rows`` index interior nodes. The solution of the strictly decreasing
    scalar equation is returned unclamped, except that for ``t``-dependent
    ``f`` it is searched by bisection inside ``[lo, hi]``.
    """
    g = op.grid
    h2 = g.h ** 2
    pos = op.rows[rows]
    c = vec[pos]
    ent = op.entries(vec, colour) if colour is not None else op.entries(vec)[:, rows]
    ent0 = _shifted_entries(ent, -2.0 * c / h2)
    pts = op.points[rows]
    n = g.n
    if not getattr(f, "t_dependent", False):
        F = f.root(pts, c, n)
        return 0.5 * h2 * _shift_for_root(ent0, F)
    a, b = lo.copy(), hi.copy()

    def G(t):
        return root_det_entries(_shifted_entries(ent0, 2.0 * t / h2)) - f.root(pts, t, n)

    ga, gb = G(a), G(b)
    for _ in range(200):
        mid = 0.5 * (a + b)
        gm = G(mid)
        right = gm > 0
        a = np.where(right, mid, a)
        b = np.where(right, b, mid)
        if np.max(b - a) <= BISECT_TOL:
            break
    out = 0.5 * (a + b)
    out = np.where(ga <= 0, lo, out)
    return np.where(gb >= 0, hi, out)


def residual_field(op: DiscreteOperator, vec: np.ndarray, f) -> np.ndarray:
    """``det^{1/n}(dd^c_h u) - f^{1/n}(z, u)`` at interior nodes (signed)."""
    rd = root_det_entries(op.entries(vec))
    return rd - f.root(op.points, vec[op.rows], op.grid.n)


# -- barriers -----------------------------------------------------------------------

def laplacian_operator(grid) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """``(2m+1)``-point Laplacian split into interior and boundary-layer columns."""
    g = grid
    pos_int = np.full(g.dims, -1, dtype=np.int64)
    pos_int[g.interior] = np.arange(int(g.interior.sum()))
    pos_bd = np.full(g.dims, -1, dtype=np.int64)
    pos_bd[g.boundary] = np.arange(int(g.boundary.sum()))
    nodes = np.argwhere(g.interior)
    N = len(nodes)
    ri, ci, vi, rb, cb, vb = [], [], [], [], [], []
    ri.append(np.arange(N))
    ci.append(np.arange(N))
    vi.append(np.full(N, -2.0 * g.m / g.h ** 2))
    for a in range(g.m):
        for s in (1, -1):
            nb = nodes.copy()
            nb[:, a] += s
            j_int = pos_int[tuple(nb.T)]
            j_bd = pos_bd[tuple(nb.T)]
            k = j_int >= 0
            ri.append(np.flatnonzero(k))
            ci.append(j_int[k])
            vi.append(np.full(int(k.sum()), 1.0 / g.h ** 2))
            rb.append(np.flatnonzero(~k))
            cb.append(j_bd[~k])
            vb.append(np.full(int((~k).sum()), 1.0 / g.h ** 2))
    L_int = sp.csr_matrix((np.concatenate(vi), (np.concatenate(ri), np.concatenate(ci))), shape=(N, N))
    L_bd = sp.csr_matrix((np.concatenate(vb), (np.concatenate(rb), np.concatenate(cb))),
                         shape=(N, int(g.boundary.sum())))
    return L_int, L_bd


def harmonic_majorant(g: GridFunction, grid=None) -> GridFunction:
    """Discrete harmonic function with the boundary-layer values of ``g``.

    Solved directly (sparse LU) in real dimension 2 and by conjugate
    gradients on ``-L`` in dimension 4, where LU fill-in is prohibitive.
    The discrete maximum principle holds for the ``(2m+1)``-point Laplacian.
    """
    grid = g.grid if grid is None else grid
    L_int, L_bd = laplacian_operator(grid)
    gb = g.values[grid.boundary]
    rhs = -(L_bd @ gb)
    if grid.m <= 2:
        u_int = spla.spsolve(L_int.tocsc(), rhs)
    else:
        u_int, info = spla.cg(-L_int, -rhs, rtol=1e-13, atol=0.0, maxiter=20 * L_int.shape[0])
        if info != 0:
            raise NoConvergence(f"harmonic solve did not converge (info={info})")
    res = float(np.max(np.abs(L_int @ u_int - rhs))) * grid.h ** 2 if len(u_int) else 0.0
    if res > 1e-10 * (1.0 + float(np.max(np.abs(gb)))):
        raise NoConvergence(f"harmonic solve residual {res:.3e}")
    vals = np.full(grid.dims, np.nan)
    vals[grid.interior] = u_int
    vals[grid.boundary] = gb
    return GridFunction(grid, vals)


def exhaustion(grid) -> np.ndarray:
    """``rho = |z - c|^2 - R_out^2`` where ``R_out`` is the largest node radius; ``rho <= 0`` on the closed domain."""
    r2 = np.sum((grid.coords - grid.center) ** 2, axis=-1)
    return r2 - np.max(r2[grid.mask])


@dataclass
class SubsolutionResult:
    u: GridFunction
    A: float
    report: ViscosityReport


def default_subsolution(prob, a_start: float = 1.0, a_max: float = 4096.0, u_over: GridFunction | None = None,
                        **check_kw) -> SubsolutionResult:
    """``A rho + g_hat`` on the closed grid for the first ``A`` of a doubling schedule that verifies.

    ``rho <= 0`` on every masked node, so the result is ``<= g`` on the
    boundary layer. Keeping the smooth formula there (rather than pasting
    ``g``) matters for n = 2, where mixed differences across a pasted jump
    have no sign.
    """
    grid = prob.grid
    g_hat = harmonic_majorant(prob.g) if u_over is None else u_over
    rho = exhaustion(grid)
    A = a_start
    last = None
    while A <= a_max:
        vals = A * rho + g_hat.values
        u = GridFunction(grid, vals)
        try:
            rep = check_subsolution(u, prob, **check_kw)
        except NotPsh as exc:
            last = exc
        else:
            if rep.passed:
                return SubsolutionResult(u, A, rep)
            last = rep
        A *= 2.0
    worst = getattr(last, "worst_violation", float("nan"))
    raise NoSubsolution(f"no A <= {a_max} gives a subsolution (last violation {worst:.3e})")


# -- moduli of continuity -----------------------------------------------------------

def _pair_max_by_sqdist(grid, values: np.ndarray, which: np.ndarray | None = None, chunk: int = 512) -> np.ndarray:
    """``best[k] = max |v(x) - v(y)|`` over node pairs at squared index distance exactly ``k``."""
    which = grid.mask if which is None else which
    idx = np.argwhere(which)
    v = values[which]
    span = np.array(grid.dims) - 1
    kmax = int(np.sum(span ** 2))
    best = np.zeros(kmax + 1)
    for s in range(0, len(idx), chunk):
        d = idx[s:s + chunk, None, :] - idx[None, :, :]
        k = np.einsum("ijk,ijk->ij", d, d)
        dv = np.abs(v[s:s + chunk, None] - v[None, :])
        np.maximum.at(best, k.ravel(), dv.ravel())
    return best


def concave_majorant(t: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vertices of the least concave majorant of the points ``(0, 0), (t_k, w_k)``."""
    t = np.concatenate([[0.0], np.asarray(t, dtype=float)])
    w = np.concatenate([[0.0], np.asarray(w, dtype=float)])
    order = np.argsort(t, kind="stable")
    t, w = t[order], w[order]
    hull = []
    for p in zip(t, w):
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) >= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    ht = np.array([p[0] for p in hull])
    hw = np.maximum.accumulate(np.array([p[1] for p in hull]))
    return ht, hw


@dataclass
class SampledModulus:
    t: np.ndarray
    omega: np.ndarray

    def __call__(self, s) -> np.ndarray:
        return np.interp(s, self.t, self.omega)


def exact_modulus(u: GridFunction, which: np.ndarray | None = None) -> SampledModulus:
    """Modulus at every realised lattice distance (cumulative max over squared distances)."""
    g = u.grid
    best = _pair_max_by_sqdist(g, u.values, which)
    k = np.arange(len(best))
    return SampledModulus(np.sqrt(k) * g.h, np.maximum.accumulate(best))


def measure_modulus(u: GridFunction, ladder=None) -> SampledModulus:
    """``omega_u(t_k) = max{|u(x) - u(y)| : |x - y| <= t_k}`` on a dyadic ladder ``t_k = h 2^k``."""
    g = u.grid
    ex = exact_modulus(u)
    if ladder is None:
        top = ex.t[-1]
        ladder = [g.h]
        while ladder[-1] < top:
            ladder.append(2 * ladder[-1])
    ladder = np.asarray(ladder, dtype=float)
    kk = np.floor((ladder / g.h) ** 2 + 1e-9).astype(int)
    kk = np.clip(kk, 0, len(ex.omega) - 1)
    return SampledModulus(ladder, ex.omega[kk])


@dataclass
class ModulusSpec:
    """Concave (hence subadditive) moduli for subsolution replacement.

    ``omega`` bounds the barriers (and optionally the subsolution itself);
    ``omega_f`` is the spatial modulus of ``f^{1/n}`` on ``V``; ``M``
    bounds ``|t|`` on ``V``; ``d`` is the domain diameter; ``osc_f`` is the
    oscillation of ``f`` over ``V`` (max of ``f`` and ``f^{1/n}`` readings).
    """

    t: np.ndarray
    w: np.ndarray
    t_f: np.ndarray
    w_f: np.ndarray
    M: float
    d: float
    osc_f: float

    def omega(self, s) -> np.ndarray:
        return np.interp(s, self.t, self.w)

    def omega_f(self, s) -> np.ndarray:
        return np.interp(s, self.t_f, self.w_f)

    def subadditivity_defect(self, samples: int = 64) -> float:
        s = np.linspace(0.0, self.d, samples)
        a, b = np.meshgrid(s, s)
        ok = a + b <= self.d
        defect = self.omega(a + b) - self.omega(a) - self.omega(b)
        return float(np.max(defect[ok]))

    @classmethod
    def build(cls, prob, *funcs: GridFunction, M: float | None = None, u_under: GridFunction | None = None):
        """Modulus data from the given barrier functions and the right-hand side."""
        g = prob.grid
        d = g.diam
        raw = np.zeros(1)
        t_all = None
        for u in funcs:
            ex = exact_modulus(u)
            t_all = ex.t
            raw = ex.omega if raw.size == 1 else np.maximum(raw, ex.omega)
        t, w = concave_majorant(t_all, raw)
        if M is None:
            base = max(prob.g.sup_norm(g.boundary), u_under.sup_norm() if u_under is not None else 0.0)
            M = base + d ** 2
        pts = g.points()
        froot_hi = prob.f.root(pts, np.full(len(pts), M), g.n)
        froot_lo = prob.f.root(pts, np.full(len(pts), -M), g.n)
        f_hi = prob.f(pts, np.full(len(pts), M))
        f_lo = prob.f(pts, np.full(len(pts), -M))
        vals = np.full(g.dims, np.nan)
        vals[g.mask] = froot_hi
        exf = exact_modulus(GridFunction(g, vals))
        tf, wf = concave_majorant(exf.t, exf.omega)
        osc = max(float(np.max(f_hi) - np.min(f_lo)), float(np.max(froot_hi) - np.min(froot_lo)))
        return cls(t, w, tf, wf, float(M), float(d), osc)


# -- subsolution replacement ----------------------------------------------------------

def improve_subsolution(u: GridFunction, prob, mod: ModulusSpec, u_under: GridFunction,
                        chunk: int = 256) -> GridFunction:
    """``u~(z0) = max(u_under(z0), sup_y u(y) - omega(|y - z0|) + omega_f(|y - z0|)/2 (|z0|^2 - d^2))``.

    Coordinates are centred on the domain centre so that ``0`` lies in the
    domain and ``|z0| <= d``.
    """
    g = u.grid
    idx = np.argwhere(g.mask)
    pts = g.coords[g.mask] - g.center
    vals = u.values[g.mask]
    under = u_under.values[g.mask]
    r2 = np.sum(pts ** 2, axis=1)
    kmax = int(np.sum((np.array(g.dims) - 1) ** 2))
    s_tab = np.sqrt(np.arange(kmax + 1)) * g.h
    w_tab = mod.omega(s_tab)
    wf_tab = mod.omega_f(s_tab)
    out = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        dd = idx[s:s + chunk, None, :] - idx[None, :, :]
        k = np.einsum("ijk,ijk->ij", dd, dd)
        cand = vals[None, :] - w_tab[k] + 0.5 * wf_tab[k] * (r2[s:s + chunk, None] - mod.d ** 2)
        out[s:s + chunk] = np.maximum(cand.max(axis=1), under[s:s + chunk])
    res = np.full(g.dims, np.nan)
    res[g.mask] = out
    return GridFunction(g, res)


@dataclass
class SubReplaceReport:
    subsolution: ViscosityReport
    min_gain: float
    boundary_gap: float
    clause_iii_statement: float
    clause_iii_proof: float
    tolerance: float

    @property
    def clause_i(self) -> bool:
        return self.subsolution.passed

    @property
    def clause_ii(self) -> bool:
        return self.min_gain >= -self.tolerance and self.boundary_gap <= self.tolerance

    @property
    def clause_iii(self) -> bool:
        """The weaker (larger) of the two readings of the modulus bound."""
        return min(self.clause_iii_statement, self.clause_iii_proof) <= self.tolerance

    @property
    def passed(self) -> bool:
        return self.clause_i and self.clause_ii and self.clause_iii


def sub_replace_report(u: GridFunction, u_tilde: GridFunction, prob, mod: ModulusSpec,
                       tol: float | None = None, u_under: GridFunction | None = None,
                       **check_kw) -> SubReplaceReport:
    """Check clauses i-iii of the subsolution replacement for ``u_tilde``.

    Clause iii is evaluated under both readings,
    ``3 d osc t + d^2 omega_f(t + omega(t))`` and
    ``3 d osc t + d^2 omega_f(t) + omega(t)``; each field holds the worst
    excess of the measured modulus over that bound.

    Layer nodes sit off the boundary, where ``u_under`` falls short of ``g``
    by O(h); with ``u_under`` given, the boundary gap is measured beyond that
    shortfall.
    """
    g = u.grid
    tol = g.h ** 2 if tol is None else tol
    sub = check_subsolution(u_tilde, prob, **check_kw)
    gain = float(np.min(u_tilde.values[g.mask] - u.values[g.mask]))
    gb = prob.g.values[g.boundary]
    bgap = np.abs(u_tilde.values[g.boundary] - gb)
    if u_under is not None:
        bgap = bgap - np.abs(u_under.values[g.boundary] - gb)
    bgap = float(np.max(bgap))
    ex = exact_modulus(u_tilde)
    s = ex.t
    lin = 3.0 * mod.d * mod.osc_f * s
    stmt = lin + mod.d ** 2 * mod.omega_f(s + mod.omega(s))
    proof = lin + mod.d ** 2 * mod.omega_f(s) + mod.omega(s)
    pos = s > 0
    return SubReplaceReport(sub, gain, bgap, float(np.max((ex.omega - stmt)[pos])),
                            float(np.max((ex.omega - proof)[pos])), tol)


# -- bump ---------------------------------------------------------------------------

def bump(u: GridFunction, z0, jet: QuadraticJet, eps: float, rad: float, prob, margin: float = 0.0,
         **check_kw) -> GridFunction:
    """``max(psi, u)`` on ``B_rad(z0)`` with ``psi = jet - (eps/2)(|z - z0|^2 - rad^2)``.

    Raises ``ValueError`` if the jet's Monge-Ampere value does not exceed
    ``f(z0, u(z0)) + margin`` and :class:`BumpInvalid` if ``psi`` is not psh,
    not a strict subsolution on the ball, gives no lift, or the result fails
    the subsolution check.
    """
    g = u.grid
    node = tuple(int(i) for i in z0)
    x0 = g.coords[node]
    n = g.n
    f0 = float(prob.f(x0[None, :], np.array([u.values[node]]))[0])
    if jet.monge_ampere() <= f0 + margin:
        raise ValueError(f"jet Monge-Ampere {jet.monge_ampere():.4g} does not exceed f = {f0:.4g}")
    ddc = jet.ddc().entries - eps * np.eye(n)
    lam = np.linalg.eigvalsh(ddc)
    if lam[0] < 0:
        raise BumpInvalid(f"psi is not psh (smallest eigenvalue {lam[0]:.3e})")
    root = float(np.prod(lam) ** (1.0 / n))
    r2 = np.sum((g.coords - x0) ** 2, axis=-1)
    ball = g.mask & (r2 < rad ** 2)
    psi = np.where(ball, jet(g.coords) - 0.5 * eps * (r2 - rad ** 2), -np.inf)
    new = np.where(ball, np.maximum(psi, u.values), u.values)
    froot = prob.f.root(g.coords[ball], new[ball], n)
    if np.any(root <= froot):
        raise BumpInvalid("psi is not a strict subsolution on the ball")
    if not np.any(psi[ball] > u.values[ball]):
        raise BumpInvalid("psi stays below u on the ball: no lift")
    out = GridFunction(g, new)
    near = g.interior & (r2 < (rad + 4 * g.h * 3) ** 2)
    rep = check_subsolution(out, prob, which=near, **check_kw)
    if not rep.passed:
        raise BumpInvalid(f"bumped function fails the subsolution check ({rep.worst_violation:.3e})")
    return out


# -- solver ----------------------------------------------------------------------------

def tol_solve(prob, u_over: GridFunction) -> float:
    """``h^2 (1 + osc g + d^2 sup f^{1/n})``."""
    g = prob.grid
    gb = prob.g.values[g.boundary]
    pts = g.points()
    sup_root = float(np.max(prob.f.root(pts, u_over.values[g.mask], g.n)))
    return g.h ** 2 * (1.0 + float(np.ptp(gb)) + g.diam ** 2 * sup_root)


def sor_factor(grid) -> float:
    """Relaxation factor from the lowest Dirichlet eigenvalue of the enclosing ball or box."""
    m = grid.m
    if isinstance(grid.shape, Ball):
        lam1 = (jn_zeros(m // 2 - 1, 1)[0] / grid.shape.radius) ** 2
    else:
        lam1 = sum((math.pi / (hi - lo)) ** 2 for lo, hi in zip(grid.shape.lower, grid.shape.upper))
    return 2.0 / (1.0 + grid.h * math.sqrt(lam1 / m))


@dataclass
class SolveOptions:
    max_iters: int = 20000
    tol: float | None = None
    init: str = "over"
    relax: float | None = None
    a_start: float = 1.0
    perron_refine: bool = False
    refine_a_start: float = 2.0
    sweeps_per_pass: int = 10
    max_passes: int = 200
    improve: bool = True
    verify: bool = True
    check_tol: float | None = None
    verify_margin: float = 0.0


@dataclass
class SolveReport:
    solution: GridFunction
    iterations: int
    residual: float
    sub_verdict: ViscosityReport | None
    super_verdict: ViscosityReport | None
    measured_modulus: SampledModulus | None
    tol_solve: float
    u_under: GridFunction
    u_over: GridFunction
    A: float
    refine_history: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        ok = self.residual < self.tol_solve
        if self.sub_verdict is not None:
            ok = ok and self.sub_verdict.passed and self.super_verdict.passed
        return ok

    def record(self) -> dict:
        rec = {
            "iterations": self.iterations,
            "residual": self.residual,
            "tol_solve": self.tol_solve,
            "A": self.A,
            "pass": self.passed,
        }
        if self.sub_verdict is not None:
            rec["sub_worst"] = self.sub_verdict.worst_violation
            rec["super_worst"] = self.super_verdict.worst_violation
        if self.refine_history:
            rec["refine_history"] = list(self.refine_history)
        return rec


def _sweep(op, vec, f, lo_vec, hi_vec, relax: float, rows_mask: np.ndarray | None = None,
           lift_only: bool = False) -> float:
    """One coloured sweep; returns the largest change."""
    change = 0.0
    for ci, rows in enumerate(op.colours):
        if rows_mask is not None:
            sel = rows[rows_mask[rows]]
            if sel.size == 0:
                continue
            target = pointwise_solve(op, vec, sel, f, lo_vec[sel] - 1.0, hi_vec[sel] + 1.0)
            rows = sel
        else:
            target = pointwise_solve(op, vec, rows, f, lo_vec[rows] - 1.0, hi_vec[rows] + 1.0, colour=ci)
        pos = op.rows[rows]
        old = vec[pos]
        new = old + relax * (target - old)
        if lift_only:
            new = np.maximum(new, old)
        new = np.clip(new, lo_vec[rows], hi_vec[rows])
        change = max(change, float(np.max(np.abs(new - old))))
        vec[pos] = new
    return change


def iterate(op, vec, f, lo_vec, hi_vec, tol: float, max_iters: int, relax: float,
            settle: int = 3) -> tuple[int, float]:
    """Sweep until the residual stays below ``tol`` for ``settle`` consecutive checks.

    Over-relaxed sweeps make the residual non-monotone; a single crossing can
    be a transient dip with the error still far from its settled size.
    Returns (sweeps, residual).
    """
    res = float(np.max(np.abs(residual_field(op, vec, f))))
    below = int(res < tol)
    it = 0
    while below < settle and it < max_iters:
        _sweep(op, vec, f, lo_vec, hi_vec, relax)
        it += 1
        res = float(np.max(np.abs(residual_field(op, vec, f))))
        below = below + 1 if res < tol else 0
    return it, res


def perron_refine(prob, u_start: GridFunction, u_under: GridFunction, u_over: GridFunction,
                  opts: SolveOptions, op: DiscreteOperator | None = None) -> tuple[GridFunction, list]:
    """Alternate subsolution replacement and lifts at supersolution violations.

    A lift at a node raises it to the center value solving its discrete
    equation (never lowering it), which is the largest local raise that keeps
    the discrete subsolution inequality. Returns the iterate and the worst
    supersolution violation recorded before every pass.
    """
    g = prob.grid
    op = DiscreteOperator(g) if op is None else op
    tol = default_tol(g.h) if opts.check_tol is None else opts.check_tol
    lo_vec = u_under.values[g.interior]
    hi_vec = u_over.values[g.interior]
    u = GridFunction(g, np.where(g.boundary, prob.g.values, u_start.values))
    mod = ModulusSpec.build(prob, u_under, u_over, u_under=u_under) if opts.improve else None
    history = []
    for _ in range(opts.max_passes):
        if mod is not None:
            u = improve_subsolution(u, prob, mod, u_under)
        rep = check_supersolution(u, prob, tol=tol, check_psh=False)
        history.append(rep.worst_violation)
        if rep.passed:
            return u, history
        bad = np.zeros(op.n_int, dtype=bool)
        viol = rep.violations > tol
        bad_nodes = rep.nodes[viol]
        sel = np.zeros(g.dims, dtype=bool)
        sel[tuple(bad_nodes.T)] = True
        bad = sel[g.interior]
        vec = op.to_vector(u)
        lo_full = lo_vec.copy()
        for _ in range(opts.sweeps_per_pass):
            _sweep(op, vec, prob.f, lo_full, hi_vec, 1.0, rows_mask=bad, lift_only=True)
        u = op.to_grid(vec)
    raise NoConvergence(f"Perron refinement did not clear supersolution violations in {opts.max_passes} passes")


def solve(prob, opts: SolveOptions | None = None) -> SolveReport:
    """Solve the Dirichlet problem on the grid of ``prob``."""
    opts = SolveOptions() if opts is None else opts
    if not prob.monotone_in_t:
        raise NonMonotoneRhs("the right-hand side must be non-decreasing in u")
    g = prob.grid
    u_over = harmonic_majorant(prob.g)
    sub = default_subsolution(prob, a_start=opts.a_start, u_over=u_over)
    u_under = sub.u
    tol = tol_solve(prob, u_over) if opts.tol is None else opts.tol
    op = DiscreteOperator(g)
    lo_vec = u_under.values[g.interior]
    hi_vec = u_over.values[g.interior]
    history = []
    A = sub.A
    if opts.perron_refine:
        start = default_subsolution(prob, a_start=opts.refine_a_start, u_over=u_over)
        A = start.A
        u0, history = perron_refine(prob, start.u, u_under, u_over, opts, op)
        lo_vec = np.minimum(lo_vec, start.u.values[g.interior])
    else:
        u0 = u_over if opts.init == "over" else u_under
    relax = sor_factor(g) if opts.relax is None else opts.relax
    # the layer carries the Dirichlet data whatever the starting iterate
    vec = op.to_vector(GridFunction(g, np.where(g.boundary, prob.g.values, u0.values)))
    sweeps, res = iterate(op, vec, prob.f, lo_vec, hi_vec, tol, opts.max_iters, relax)
    log.info("solve: %d sweeps, residual %.3e (tol %.3e)", sweeps, res, tol)
    if res >= tol:
        raise NoConvergence(f"residual {res:.3e} >= {tol:.3e} after {sweeps} sweeps")
    u = op.to_grid(vec)
    sub_rep = sup_rep = None
    modulus = None
    if opts.verify:
        which = interior_core(g, opts.verify_margin * g.h) if opts.verify_margin > 0 else None
        sub_rep, sup_rep = check_both(u, prob, tol=opts.check_tol, which=which)
        modulus = measure_modulus(u) if g.n == 1 else None
    return SolveReport(u, sweeps, res, sub_rep, sup_rep, modulus, tol, u_under, u_over, A, history)
