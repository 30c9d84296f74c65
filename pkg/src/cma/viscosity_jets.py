"""Grid verification of viscosity sub- and supersolutions through fitted touching jets.

At each interior node a quadratic is least-squares fitted to ``u`` on the
``(2r+1)^{2n}`` window around the node, moved vertically to pass through
``u(node)`` and accepted as a touching jet from above (below) only when ``u``
exceeds it (falls below it) on the window by at most ``slack_tol * h^2``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundaryOrderViolated, NotPsh, StencilIncomplete
from .grid_domain import GridFunction, psh_defect, tol_psh
from .hermitian_core import QuadraticJet, decompose_quadratic, ddc_from_real, root_det_batch

DEFAULT_RADIUS = 3
DEFAULT_SLACK_TOL = 5.0
PSD_TOL = 1e-8


def default_tol(h: float) -> float:
    """Verification tolerance in the ``det^{1/n}`` scale."""
    return 10.0 * h


# -- jet fitting -------------------------------------------------------------------

def _window(m: int, radius: int) -> np.ndarray:
    rng = range(-radius, radius + 1)
    return np.array(list(itertools.product(rng, repeat=m)), dtype=int)


def _design(offsets: np.ndarray, degree: int = 2) -> tuple[np.ndarray, list]:
    """Columns ``1, x_a, x_a x_b (a <= b)`` in node units, then higher monomials up to ``degree``."""
    m = offsets.shape[1]
    x = offsets.astype(float)
    pairs = [(a, b) for a in range(m) for b in range(a, m)]
    cols = [np.ones(len(x))] + [x[:, a] for a in range(m)] + [x[:, a] * x[:, b] for a, b in pairs]
    for d in range(3, degree + 1):
        for combo in itertools.combinations_with_replacement(range(m), d):
            cols.append(np.prod(x[:, combo], axis=1))
    return np.stack(cols, axis=1), pairs


@dataclass
class JetField:
    """Least-squares jets at a set of nodes.

    ``hessian`` and ``gradient`` are in physical units; ``slack_above`` is
    ``max(u - phi)`` and ``slack_below`` is ``max(phi - u)`` over the window,
    where ``phi`` is the fit shifted through ``u(node)``.
    """

    nodes: np.ndarray
    hessian: np.ndarray
    gradient: np.ndarray
    slack_above: np.ndarray
    slack_below: np.ndarray


def _coeffs_to_jet(coef, pairs, m, h):
    hess = np.zeros(coef.shape[:-1] + (m, m))
    for k, (a, b) in enumerate(pairs):
        c = coef[..., 1 + m + k]
        if a == b:
            hess[..., a, a] = 2.0 * c / h ** 2
        else:
            hess[..., a, b] = hess[..., b, a] = c / h ** 2
    grad = coef[..., 1:1 + m] / h
    return hess, grad


def fit_jets(u: GridFunction, nodes: np.ndarray | None = None, radius: int = DEFAULT_RADIUS,
             chunk: int = 2048, degree: int = 2) -> JetField:
    """Fit quadratic jets at the given interior node indices (default: all interior nodes).

    With ``degree > 2`` a higher-order polynomial is fitted and its
    second-order Taylor part is kept; this removes the bias that quartic
    terms put on the Hessian of functions with strongly varying curvature.
    """
    g = u.grid
    m = g.m
    if radius < 2:
        raise ValueError("jet radius must be at least 2")
    nodes = np.argwhere(g.interior) if nodes is None else np.atleast_2d(np.asarray(nodes, dtype=int))
    offs = _window(m, radius)
    V, pairs = _design(offs, degree)
    q = V.shape[1]
    q2 = 1 + m + len(pairs)
    pinv = np.linalg.pinv(V)
    pad = radius
    vals = np.pad(g.mask & np.isfinite(u.values), pad, constant_values=False)
    data = np.pad(np.where(g.mask, u.values, np.nan), pad, constant_values=np.nan)

    hess = np.empty((len(nodes), m, m))
    grad = np.empty((len(nodes), m))
    above = np.empty(len(nodes))
    below = np.empty(len(nodes))
    for start in range(0, len(nodes), chunk):
        blk = nodes[start:start + chunk] + pad
        idx = blk[:, None, :] + offs[None, :, :]
        win = data[tuple(np.moveaxis(idx, -1, 0))]
        ok = vals[tuple(np.moveaxis(idx, -1, 0))]
        full = ok.all(axis=1)
        coef = np.empty((len(blk), q))
        coef[full] = win[full] @ pinv.T
        part = np.flatnonzero(~full)
        if part.size:
            w = ok[part].astype(float)
            count = w.sum(axis=1)
            short = count < 2 * q2
            if np.any(short):
                bad = tuple(blk[part[np.argmax(short)]] - pad)
                raise StencilIncomplete(f"node {bad} has too few window nodes for a quadratic fit")
            # rows too sparse for the higher-order fit fall back to the quadratic columns
            low = count < 2 * q
            for rows, cols in ((part[~low], q), (part[low], q2)):
                if rows.size:
                    wr = ok[rows].astype(float)
                    Vc = V[:, :cols]
                    outer = (Vc[:, :, None] * Vc[:, None, :]).reshape(len(Vc), -1)
                    gram = (wr @ outer).reshape(-1, cols, cols)
                    rhs = (np.nan_to_num(win[rows]) * wr) @ Vc
                    coef[rows] = 0.0
                    coef[rows, :cols] = np.linalg.solve(gram, rhs[..., None])[..., 0]
        centre = win[:, len(offs) // 2]
        fit = coef[:, :q2] @ V[:, :q2].T
        phi = fit + (centre - coef[:, 0])[:, None]
        diff = np.where(ok, win - phi, np.nan)
        above[start:start + chunk] = np.nanmax(diff, axis=1)
        below[start:start + chunk] = np.nanmax(-diff, axis=1)
        hess[start:start + chunk], grad[start:start + chunk] = _coeffs_to_jet(coef, pairs, m, g.h)
    return JetField(nodes, hess, grad, above, below)


def window_slack(u: GridFunction, nodes: np.ndarray, hessian: np.ndarray, gradient: np.ndarray,
                 radius: int = DEFAULT_RADIUS) -> tuple[np.ndarray, np.ndarray]:
    """``max(u - phi)`` and ``max(phi - u)`` over each window for given quadratics through ``u(node)``."""
    g = u.grid
    offs = _window(g.m, radius)
    d = offs * g.h
    pad = radius
    data = np.pad(np.where(g.mask, u.values, np.nan), pad, constant_values=np.nan)
    idx = np.asarray(nodes)[:, None, :] + pad + offs[None, :, :]
    win = data[tuple(np.moveaxis(idx, -1, 0))]
    centre = u.values[tuple(np.asarray(nodes).T)]
    phi = centre[:, None] + gradient @ d.T + 0.5 * np.einsum("ka,nab,kb->nk", d, hessian, d)
    diff = win - phi
    return np.nanmax(diff, axis=1), np.nanmax(-diff, axis=1)


def fit_touching_jet(u: GridFunction, node, side: str, radius: int = DEFAULT_RADIUS,
                     slack_tol: float = DEFAULT_SLACK_TOL) -> QuadraticJet | None:
    """Quadratic touching ``u`` at ``node`` from ``side`` ('above' or 'below'), or None."""
    if side not in ("above", "below"):
        raise ValueError(f"side must be 'above' or 'below', got {side!r}")
    node = tuple(int(i) for i in node)
    if not u.grid.interior[node]:
        raise StencilIncomplete(f"node {node} is not interior")
    jf = fit_jets(u, np.array([node]), radius)
    slack = jf.slack_above[0] if side == "above" else jf.slack_below[0]
    if slack > slack_tol * u.grid.h ** 2:
        return None
    return decompose_quadratic(jf.hessian[0], jf.gradient[0], u.values[node], u.grid.coords[node])


# -- reports -------------------------------------------------------------------

@dataclass
class ViscosityReport:
    side: str
    worst_violation: float
    witness_node: tuple | None
    witness_point: tuple | None
    tested_count: int
    tolerance: float
    violations: np.ndarray = field(default=None, repr=False)
    nodes: np.ndarray = field(default=None, repr=False)

    @property
    def passed(self) -> bool:
        return self.worst_violation <= self.tolerance

    def record(self) -> dict:
        return {
            "side": self.side,
            "verdict": "pass" if self.passed else "fail",
            "worst_violation": float(self.worst_violation),
            "tolerance": float(self.tolerance),
            "tested_count": int(self.tested_count),
            "witness_node": list(self.witness_node) if self.witness_node else None,
            "witness_point": list(self.witness_point) if self.witness_point else None,
        }

    def to_text(self) -> str:
        return "\n".join(f"{k}: {v}" for k, v in self.record().items()) + "\n"


def _report(side, u, nodes, tested, viol, tol) -> ViscosityReport:
    g = u.grid
    if not np.any(tested):
        return ViscosityReport(side, float("-inf"), None, None, 0, tol, viol, nodes)
    masked = np.where(tested, viol, -np.inf)
    k = int(np.argmax(masked))
    node = tuple(int(i) for i in nodes[k])
    return ViscosityReport(side, float(masked[k]), node, tuple(float(x) for x in g.coords[node]),
                           int(tested.sum()), tol, viol, nodes)


def _prepare(u, prob, tol, which, check_psh):
    g = u.grid
    if tol is None:
        tol = default_tol(g.h)
    if check_psh:
        defect = psh_defect(u)
        if defect < -tol_psh(g):
            raise NotPsh(f"psh defect {defect:.3e} below -{tol_psh(g):.3e}")
    nodes = np.argwhere(g.interior if which is None else (which & g.interior))
    return g, tol, nodes


def _rhs_root(prob, u, nodes):
    g = u.grid
    pts = g.coords[tuple(nodes.T)]
    t = u.values[tuple(nodes.T)]
    return prob.f.root(pts, t, g.n)


def check_subsolution(u: GridFunction, prob, tol: float | None = None, radius: int = DEFAULT_RADIUS,
                      slack_tol: float = DEFAULT_SLACK_TOL, which=None, check_psh: bool = True,
                      jets: JetField | None = None) -> ViscosityReport:
    """Test ``det^{1/n}(dd^c p) >= f^{1/n}(z, u) - tol`` for every jet touching from above.

    A touching jet with non-PSD Hermitian part counts as ``M_C = 0``.
    """
    g, tol, nodes = _prepare(u, prob, tol, which, check_psh)
    jf = jets if jets is not None else fit_jets(u, nodes, radius)
    tested = jf.slack_above <= slack_tol * g.h ** 2
    root = np.maximum(root_det_batch(ddc_from_real(jf.hessian)), 0.0)
    viol = _rhs_root(prob, u, jf.nodes) - root
    return _report("sub", u, jf.nodes, tested, viol, tol)


def check_supersolution(u: GridFunction, prob, tol: float | None = None, radius: int = DEFAULT_RADIUS,
                        slack_tol: float = DEFAULT_SLACK_TOL, which=None, check_psh: bool = True,
                        jets: JetField | None = None) -> ViscosityReport:
    """Test ``det^{1/n}(dd^c p) <= f^{1/n}(z, u) + tol`` for PSD jets touching from below."""
    g, tol, nodes = _prepare(u, prob, tol, which, check_psh)
    jf = jets if jets is not None else fit_jets(u, nodes, radius)
    hc = ddc_from_real(jf.hessian)
    lam_min = np.linalg.eigvalsh(hc)[:, 0]
    scale = 1.0 + np.abs(jf.hessian).max(axis=(1, 2))
    psd = lam_min >= -PSD_TOL * scale
    tested = (jf.slack_below <= slack_tol * g.h ** 2) & psd
    root = np.maximum(root_det_batch(hc), 0.0)
    viol = root - _rhs_root(prob, u, jf.nodes)
    return _report("super", u, jf.nodes, tested, viol, tol)


def check_both(u: GridFunction, prob, tol=None, radius=DEFAULT_RADIUS, slack_tol=DEFAULT_SLACK_TOL,
               check_psh=True, which=None):
    """Sub and super reports sharing one jet fit."""
    nodes = None if which is None else np.argwhere(which & u.grid.interior)
    jf = fit_jets(u, nodes, radius)
    sub = check_subsolution(u, prob, tol, radius, slack_tol, which=which, check_psh=check_psh, jets=jf)
    sup = check_supersolution(u, prob, tol, radius, slack_tol, which=which, check_psh=False, jets=jf)
    return sub, sup


# -- comparison and limits ---------------------------------------------------------

@dataclass
class ComparisonResult:
    passed: bool
    worst: float
    witness_node: tuple | None
    tolerance: float

    def __bool__(self):
        return self.passed


def default_tol_cmp(h: float) -> float:
    return h ** 2


def check_comparison(u: GridFunction, v: GridFunction, tol_cmp: float | None = None,
                     prob=None, **check_kw) -> ComparisonResult:
    """``u <= v`` on the boundary layer implies ``u <= v`` at every interior node.

    With ``prob`` given, ``u`` and ``v`` are first verified as sub- and
    supersolution; a failed verification raises ``ValueError``.
    """
    g = u.grid
    tol_cmp = default_tol_cmp(g.h) if tol_cmp is None else tol_cmp
    gap_b = u.values[g.boundary] - v.values[g.boundary]
    if np.max(gap_b) > tol_cmp:
        raise BoundaryOrderViolated(f"u exceeds v by {np.max(gap_b):.3e} on the boundary")
    if prob is not None:
        sub = check_subsolution(u, prob, **check_kw)
        sup = check_supersolution(v, prob, **check_kw)
        if not (sub.passed and sup.passed):
            raise ValueError(f"pair not verified: sub {sub.worst_violation:.3e}, super {sup.worst_violation:.3e}")
    gap = np.where(g.interior, u.values - v.values, -np.inf)
    k = np.unravel_index(int(np.argmax(gap)), gap.shape)
    worst = float(gap[k])
    if worst <= tol_cmp:
        return ComparisonResult(True, worst, None, tol_cmp)
    return ComparisonResult(False, worst, tuple(int(i) for i in k), tol_cmp)


@dataclass
class LimitReport:
    members_passed: list
    distance: float
    limit_report: ViscosityReport

    @property
    def passed(self) -> bool:
        return all(self.members_passed) and self.limit_report.passed


def uniform_limit_stress(seq, limit: GridFunction, prob, tol: float | None = None, **check_kw) -> LimitReport:
    """Check the limit of a sequence of subsolutions with tolerance inflated by ``max_k |u_k - u|``."""
    g = limit.grid
    tol = default_tol(g.h) if tol is None else tol
    members = [check_subsolution(uk, prob, tol=tol, **check_kw).passed for uk in seq]
    dist = max((float(np.max(np.abs(uk.values[g.mask] - limit.values[g.mask]))) for uk in seq), default=0.0)
    rep = check_subsolution(limit, prob, tol=tol + dist, **check_kw)
    return LimitReport(members, dist, rep)
