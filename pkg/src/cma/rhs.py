"""Right-hand sides ``f(z, t)`` of ``M_C(u) = f(z, u)`` from a closed catalog.

Every right-hand side is ``phi(z) * psi(t)`` with ``phi >= 0`` and ``psi``
non-decreasing and non-negative, so positivity and monotonicity in ``t`` can
be checked from the factors alone.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import NegativeRhs, NonMonotoneRhs
from .grid_domain import Ball, DomainGrid, GridFunction

NEG_TOL = 1e-12


def _sq_radius(points, center) -> np.ndarray:
    x = np.asarray(points, dtype=float)
    if center is not None:
        x = x - np.asarray(center, dtype=float)
    return np.sum(x * x, axis=-1)


def _fmt(x: float) -> str:
    return repr(float(x))


# -- spatial factors --------------------------------------------------------

@dataclass(frozen=True)
class RadialPoly:
    """``(sum_k c_k s^k) * exp(rate * s)`` with ``s = |z - center|^2``.

    Used both as a spatial factor and as a ``t``-independent right-hand side.
    """

    coeffs: tuple
    exp_rate: float = 0.0
    center: tuple | None = None

    def spatial(self, points) -> np.ndarray:
        s = _sq_radius(points, self.center)
        return np.polynomial.polynomial.polyval(s, self.coeffs) * np.exp(self.exp_rate * s)

    def __call__(self, points, t=None) -> np.ndarray:
        return self.spatial(points)

    def range_on_shell(self, s_lo: float, s_hi: float) -> tuple[float, float]:
        """Exact min and max over ``s in [s_lo, s_hi]``."""
        P = np.polynomial.Polynomial(self.coeffs)
        crit = (P.deriv() + self.exp_rate * P).roots() if len(self.coeffs) > 1 else np.array([])
        cand = [s_lo, s_hi] + [r.real for r in np.atleast_1d(crit)
                               if abs(r.imag) < 1e-12 and s_lo < r.real < s_hi]
        vals = P(np.array(cand)) * np.exp(self.exp_rate * np.array(cand))
        return float(vals.min()), float(vals.max())

    def describe(self) -> str:
        args = ", ".join(_fmt(c) for c in self.coeffs)
        if self.exp_rate:
            return f"radial({args}; rate={_fmt(self.exp_rate)})"
        return f"radial({args})"


@dataclass(frozen=True)
class RadialPower:
    """``c0 + c1 |z - center|^alpha``; alpha-Holder for ``0 < alpha <= 1``."""

    c0: float
    c1: float
    alpha: float
    center: tuple | None = None

    def spatial(self, points) -> np.ndarray:
        r = np.sqrt(_sq_radius(points, self.center))
        return self.c0 + self.c1 * r ** self.alpha

    def range_on_shell(self, s_lo, s_hi):
        a = self.c0 + self.c1 * s_lo ** (self.alpha / 2)
        b = self.c0 + self.c1 * s_hi ** (self.alpha / 2)
        return min(a, b), max(a, b)

    def describe(self) -> str:
        return f"power({_fmt(self.c0)}, {_fmt(self.c1)}, {_fmt(self.alpha)})"


def _spatial(phi, points) -> np.ndarray:
    if isinstance(phi, GridFunction):
        return phi(points)
    return phi.spatial(points)


# -- right-hand sides ---------------------------------------------------------

class RhsSpec:
    """Base class: ``f(points, t) = phi(points) * psi(t)``."""

    t_dependent = False

    def spatial_factor(self, points) -> np.ndarray:
        raise NotImplementedError

    def psi(self, t) -> np.ndarray:
        return np.ones_like(np.asarray(t, dtype=float))

    def __call__(self, points, t) -> np.ndarray:
        return self.spatial_factor(points) * self.psi(t)

    def root(self, points, t, n: int) -> np.ndarray:
        """``f^{1/n}`` with tiny negative round-off clipped to zero."""
        return np.maximum(self(points, t), 0.0) ** (1.0 / n)


@dataclass(frozen=True)
class Constant(RhsSpec):
    c: float

    def __post_init__(self):
        if self.c < 0:
            raise NegativeRhs(f"constant right-hand side {self.c} < 0")

    def spatial_factor(self, points):
        return np.full(np.shape(points)[:-1], float(self.c))

    def describe(self) -> str:
        return f"constant({_fmt(self.c)})"


@dataclass(frozen=True)
class Radial(RhsSpec):
    """``t``-independent radial right-hand side ``f(z) = poly(|z|^2) e^{rate |z|^2}``."""

    phi: RadialPoly

    def spatial_factor(self, points):
        return self.phi.spatial(points)

    def describe(self) -> str:
        return self.phi.describe()


@dataclass(frozen=True)
class ExpU(RhsSpec):
    """``f(z, t) = phi(z) e^t``."""

    phi: object
    t_dependent = True

    def spatial_factor(self, points):
        return _spatial(self.phi, points)

    def psi(self, t):
        return np.exp(np.asarray(t, dtype=float))

    def describe(self) -> str:
        return f"expu({_describe_phi(self.phi)})"


@dataclass(frozen=True)
class Product(RhsSpec):
    """``f(z, t) = phi(z) psi(t)`` with ``psi`` a non-decreasing table, linearly interpolated."""

    phi: object
    t_nodes: tuple
    psi_values: tuple
    t_dependent = True

    def __post_init__(self):
        t = np.asarray(self.t_nodes, dtype=float)
        v = np.asarray(self.psi_values, dtype=float)
        if t.shape != v.shape or t.size < 1:
            raise ValueError("psi table needs matching, non-empty t and value lists")
        if np.any(np.diff(t) <= 0):
            raise ValueError("psi table nodes must be strictly increasing")
        if np.any(np.diff(v) < 0):
            raise NonMonotoneRhs("psi table must be non-decreasing")
        if np.any(v < 0):
            raise NegativeRhs("psi table must be non-negative")

    def spatial_factor(self, points):
        return _spatial(self.phi, points)

    def psi(self, t):
        return np.interp(np.asarray(t, dtype=float), self.t_nodes, self.psi_values)

    def describe(self) -> str:
        table = ", ".join(f"{_fmt(a)}:{_fmt(b)}" for a, b in zip(self.t_nodes, self.psi_values))
        return f"product({_describe_phi(self.phi)}; {table})"


def _describe_phi(phi) -> str:
    if isinstance(phi, GridFunction):
        return "grid"
    return phi.describe()


def spatial_of(f: RhsSpec):
    """The spatial factor object of a right-hand side (None for constants)."""
    if isinstance(f, Radial):
        return f.phi
    if isinstance(f, (ExpU, Product)):
        return f.phi
    return None


# -- evaluation helpers --------------------------------------------------------

def eval_rhs(f: RhsSpec, grid: DomainGrid, node, t: float) -> float:
    node = tuple(int(i) for i in node)
    if not grid.mask[node]:
        raise ValueError(f"node {node} is outside the closed domain")
    val = float(f(grid.coords[node][None, :], np.array([t]))[0])
    if val < -NEG_TOL:
        raise NegativeRhs(f"f = {val:.3e} < 0 at node {node}")
    return max(val, 0.0)


def rhs_field(f: RhsSpec, grid: DomainGrid, u: np.ndarray, which: np.ndarray) -> np.ndarray:
    """``f(z, u(z))`` at the selected nodes."""
    return f(grid.coords[which], u[which])


def validate_rhs(f: RhsSpec, grid: DomainGrid, t_grid=None) -> None:
    """Spot-check non-negativity and monotonicity in ``t`` over the closed domain."""
    t_grid = np.linspace(-4.0, 4.0, 17) if t_grid is None else np.asarray(t_grid, dtype=float)
    pts = grid.points()
    prev = None
    for t in t_grid:
        vals = f(pts, np.full(len(pts), t))
        if np.min(vals) < -NEG_TOL:
            raise NegativeRhs(f"f takes value {np.min(vals):.3e} at t = {t}")
        if prev is not None and np.any(vals < prev - 1e-12 * (1 + np.abs(prev))):
            raise NonMonotoneRhs(f"f decreases in t near t = {t}")
        prev = vals


# -- Jensen shifts of the right-hand side ------------------------------------------

@dataclass(frozen=True)
class ShiftedRhs(RhsSpec):
    """``inf`` (side='sub') or ``sup`` (side='super') of ``f(., t)`` over ``B_tau(z0)`` in the closed domain."""

    base: RhsSpec
    tau: float
    side: str
    grid: DomainGrid = field(compare=False)

    def __post_init__(self):
        if self.side not in ("sub", "super"):
            raise ValueError(f"side must be 'sub' or 'super', got {self.side!r}")

    @property
    def t_dependent(self):
        return self.base.t_dependent

    def psi(self, t):
        return self.base.psi(t)

    def spatial_factor(self, points):
        pts = np.asarray(points, dtype=float)
        if isinstance(self.base, Constant) or self.tau == 0:
            return self.base.spatial_factor(pts)
        phi = spatial_of(self.base)
        shape = self.grid.shape
        analytic = (
            isinstance(phi, (RadialPoly, RadialPower))
            and isinstance(shape, Ball)
            and np.allclose(np.zeros(self.grid.m) if phi.center is None else phi.center, shape.center)
        )
        if analytic:
            r = np.sqrt(_sq_radius(pts, shape.center)).ravel()
            lo = np.maximum(r - self.tau, 0.0) ** 2
            hi = np.minimum(r + self.tau, shape.radius) ** 2
            hi = np.maximum(hi, lo)
            out = np.empty(r.shape)
            pick = 0 if self.side == "sub" else 1
            for i, (a, b) in enumerate(zip(lo, hi)):
                out[i] = phi.range_on_shell(a, b)[pick]
            return out.reshape(pts.shape[:-1])
        return self._node_extreme(pts)

    def _node_extreme(self, pts):
        nodes = self.grid.points()
        vals = self.base.spatial_factor(nodes)
        tree = cKDTree(nodes)
        flat = pts.reshape(-1, pts.shape[-1])
        out = np.empty(len(flat))
        red = np.min if self.side == "sub" else np.max
        for i, nbrs in enumerate(tree.query_ball_point(flat, self.tau + 1e-12)):
            out[i] = red(vals[nbrs]) if nbrs else self.base.spatial_factor(flat[i:i + 1])[0]
        return out.reshape(pts.shape[:-1])

    def describe(self) -> str:
        return f"shifted({self.base.describe()}; tau={_fmt(self.tau)}; {self.side})"


@dataclass
class ProblemSpec:
    """Dirichlet data for ``M_C(u) = f(z, u)`` in the domain, ``u = g`` on the boundary layer.

    ``g`` is a grid function whose boundary-layer values are the Dirichlet
    data; its interior values are ignored.
    """

    grid: DomainGrid
    g: GridFunction
    f: RhsSpec
    monotone_in_t: bool = True

    def __post_init__(self):
        if self.g.grid is not self.grid:
            raise ValueError("boundary data must live on the problem grid")
        validate_rhs(self.f, self.grid)

    @classmethod
    def from_callable(cls, grid: DomainGrid, g_fn, f: RhsSpec) -> "ProblemSpec":
        return cls(grid, GridFunction.from_callable(grid, g_fn), f)
