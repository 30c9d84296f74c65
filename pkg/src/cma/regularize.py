"""Sup- and inf-convolutions of grid functions and the matching shifts of the right-hand side."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .grid_domain import GridFunction, shifted, stencil_offsets
from .rhs import RhsSpec, ShiftedRhs


def _min_plus_axis(F: np.ndarray, axis: int, h: float, eps: float) -> np.ndarray:
    """``out[j] = min_k F[k] + ((j - k) h)^2 / eps`` along one axis (exact, O(m^2) per line)."""
    F = np.ascontiguousarray(np.moveaxis(F, axis, -1))
    m = F.shape[-1]
    k = np.arange(m)
    kernel = ((k[:, None] - k[None, :]) * h) ** 2 / eps
    out = np.empty(F.shape)
    flat = F.reshape(-1, m)
    res = out.reshape(-1, m)
    step = max(1, 2_000_000 // (m * m))
    for s in range(0, len(flat), step):
        res[s:s + step] = np.min(flat[s:s + step, None, :] + kernel[None, :, :], axis=-1)
    return np.moveaxis(out, -1, axis)


def sup_convolution(u: GridFunction, eps: float) -> GridFunction:
    """``u^eps(z0) = max_z u(z) - |z - z0|^2 / eps`` over all masked nodes ``z``.

    The quadratic kernel is separable, so the maximum is taken exactly by one
    min-plus pass per axis on ``-u`` (``+inf`` off the mask).
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    g = u.grid
    F = np.where(g.mask, -u.values, np.inf)
    for a in range(g.m):
        F = _min_plus_axis(F, a, g.h, eps)
    return GridFunction(g, np.where(g.mask, -F, np.nan))


def inf_convolution(v: GridFunction, eps: float) -> GridFunction:
    """``v_eps(z0) = min_z v(z) + |z - z0|^2 / eps``."""
    return -sup_convolution(-v, eps)


def sup_convolution_scan(u: GridFunction, eps: float) -> GridFunction:
    """Direct pairwise scan of the sup-convolution (reference path for small grids)."""
    g = u.grid
    pts = g.points()
    vals = u.values[g.mask]
    out = np.empty(len(pts))
    for s in range(0, len(pts), 512):
        d2 = np.sum((pts[s:s + 512, None, :] - pts[None, :, :]) ** 2, axis=-1)
        out[s:s + 512] = np.max(vals[None, :] - d2 / eps, axis=1)
    res = np.full(g.dims, np.nan)
    res[g.mask] = out
    return GridFunction(g, res)


def jensen_tau(eps: float, osc: float) -> float:
    return float(np.sqrt(eps * osc))


def shift_rhs(f: RhsSpec, eps: float, osc: float, side: str, grid) -> ShiftedRhs:
    """``f_eps`` (inf over ``B_tau``, side='sub') or ``f^eps`` (sup, side='super')."""
    return ShiftedRhs(f, jensen_tau(eps, osc), side, grid)


@dataclass
class RegularizedPair:
    eps: float
    u_eps: GridFunction
    tau: float
    f_shift: ShiftedRhs


def regularize_subsolution(u: GridFunction, f: RhsSpec, eps: float) -> RegularizedPair:
    osc = u.osc()
    return RegularizedPair(eps, sup_convolution(u, eps), jensen_tau(eps, osc),
                           shift_rhs(f, eps, osc, "sub", u.grid))


def regularize_supersolution(v: GridFunction, f: RhsSpec, eps: float) -> RegularizedPair:
    osc = v.osc()
    return RegularizedPair(eps, inf_convolution(v, eps), jensen_tau(eps, osc),
                           shift_rhs(f, eps, osc, "super", v.grid))


def directional_second_differences(w: GridFunction) -> np.ndarray:
    """``(w(x+v) - 2w(x) + w(x-v)) / |v|^2`` for axis and diagonal ``v``, shape (N_interior, K)."""
    g = w.grid
    dirs = [off for off in stencil_offsets(g.m) if off > tuple([0] * g.m)]
    out = np.empty((int(g.interior.sum()), len(dirs)))
    for k, off in enumerate(dirs):
        neg = tuple(-o for o in off)
        d2 = (shifted(w.values, off) - 2 * w.values + shifted(w.values, neg)) / (g.h ** 2 * sum(o * o for o in off))
        out[:, k] = d2[g.interior]
    return out


def semiconvexity_constant(u_eps: GridFunction, eps: float | None = None) -> float:
    """Most negative directional second difference over interior nodes.

    A sup-convolution is a maximum of paraboloids of opening ``-2/eps``, so
    this is ``>= -2/eps`` up to round-off.
    """
    return float(np.min(directional_second_differences(u_eps)))


def semiconcavity_constant(w: GridFunction) -> float:
    """Largest directional second difference over interior nodes."""
    return float(np.max(directional_second_differences(w)))


def lipschitz_constant(u: GridFunction) -> float:
    """Largest slope ``|u(x) - u(y)| / |x - y|`` over stencil-neighbour pairs of masked nodes."""
    g = u.grid
    best = 0.0
    for off in stencil_offsets(g.m):
        other = shifted(u.values, off)
        both = g.mask & shifted(g.mask, off)
        if np.any(both):
            dist = g.h * np.sqrt(sum(o * o for o in off))
            best = max(best, float(np.max(np.abs(other[both] - u.values[both]))) / dist)
    return best


def interior_core(grid, margin: float) -> np.ndarray:
    """Interior nodes farther than ``margin`` from every boundary-layer node."""
    pts = grid.coords[grid.interior]
    d, _ = cKDTree(grid.points(grid.boundary)).query(pts)
    out = np.zeros(grid.dims, dtype=bool)
    out[grid.interior] = d > margin
    return out
