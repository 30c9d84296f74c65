"""Uniform lattices over balls and boxes in C^n = R^{2n}, grid functions and discrete Hessians."""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import GridTooCoarse, StencilIncomplete
from .hermitian_core import HermitianForm, SymForm, ddc_from_real

MIN_NODES_PER_AXIS = 5


def stencil_offsets(m: int) -> list[tuple[int, ...]]:
    """Offsets touched by the Hessian stencil: ``±e_a`` and ``±e_a ± e_b``."""
    offs = set()
    for a in range(m):
        for s in (1, -1):
            e = [0] * m
            e[a] = s
            offs.add(tuple(e))
    for a, b in itertools.combinations(range(m), 2):
        for sa, sb in itertools.product((1, -1), repeat=2):
            e = [0] * m
            e[a], e[b] = sa, sb
            offs.add(tuple(e))
    return sorted(offs)


def shifted(arr: np.ndarray, offset) -> np.ndarray:
    """``out[i] = arr[i + offset]`` with ``fill`` outside (False/NaN)."""
    fill = False if arr.dtype == bool else np.nan
    out = np.full_like(arr, fill)
    if any(abs(o) >= size for o, size in zip(offset, arr.shape)):
        return out
    src = []
    dst = []
    for o, size in zip(offset, arr.shape):
        if o >= 0:
            src.append(slice(o, size))
            dst.append(slice(0, size - o))
        else:
            src.append(slice(0, size + o))
            dst.append(slice(-o, size))
    out[tuple(dst)] = arr[tuple(src)]
    return out


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    @property
    def diam(self) -> float:
        return 2.0 * self.radius


@dataclass(frozen=True)
class Box:
    lower: tuple
    upper: tuple

    @property
    def center(self) -> tuple:
        return tuple(0.5 * (a + b) for a, b in zip(self.lower, self.upper))

    @property
    def diam(self) -> float:
        return math.dist(self.lower, self.upper)


class DomainGrid:
    """Lattice ``origin + h * index`` with interior and boundary masks.

    The arrays carry at least one unmasked layer around the mask so that
    every stencil shift of an interior node stays in range.
    """

    def __init__(self, n, h, shape, origin, dims, interior, boundary):
        self.n = n
        self.h = float(h)
        self.shape = shape
        self.origin = np.asarray(origin, dtype=float)
        self.dims = tuple(dims)
        self.interior = interior
        self.boundary = boundary
        for arr in (interior, boundary):
            arr.setflags(write=False)

    @property
    def m(self) -> int:
        return 2 * self.n

    @property
    def diam(self) -> float:
        return self.shape.diam

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.shape.center, dtype=float)

    @cached_property
    def mask(self) -> np.ndarray:
        out = self.interior | self.boundary
        out.setflags(write=False)
        return out

    @cached_property
    def coords(self) -> np.ndarray:
        """Coordinates of every lattice node, shape ``dims + (2n,)``."""
        axes = [self.origin[a] + self.h * np.arange(d) for a, d in enumerate(self.dims)]
        out = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        out.setflags(write=False)
        return out

    def points(self, which: np.ndarray | None = None) -> np.ndarray:
        which = self.mask if which is None else which
        return self.coords[which]

    def indices(self, which: np.ndarray | None = None) -> np.ndarray:
        which = self.mask if which is None else which
        return np.argwhere(which)

    def node_of(self, point) -> tuple:
        """Nearest lattice index to a point."""
        idx = np.rint((np.asarray(point, dtype=float) - self.origin) / self.h).astype(int)
        return tuple(int(i) for i in idx)

    def node_count(self) -> dict:
        return {"interior": int(self.interior.sum()), "boundary": int(self.boundary.sum())}

    def has_stencil(self, node) -> bool:
        node = tuple(node)
        if not self.interior[node]:
            return False
        for off in stencil_offsets(self.m):
            idx = tuple(i + o for i, o in zip(node, off))
            if not all(0 <= i < d for i, d in zip(idx, self.dims)) or not self.mask[idx]:
                return False
        return True

    def stencil_closed(self) -> bool:
        """Every interior node sees its whole Hessian stencil inside the mask."""
        for off in stencil_offsets(self.m):
            if np.any(self.interior & ~shifted(self.mask, off)):
                return False
        return True

    def cell_volume(self) -> float:
        return self.h ** self.m

    def __repr__(self):
        c = self.node_count()
        return f"DomainGrid(n={self.n}, h={self.h:g}, {self.shape}, interior={c['interior']}, boundary={c['boundary']})"


def build_domain(shape, h: float, n: int) -> DomainGrid:
    """Lattice over a ball (interior ``|x - c| < R``) or a box (interior strictly inside).

    Boundary nodes are the non-interior nodes reached from an interior node by
    one Hessian-stencil offset, so the stencil of each interior node is closed.
    """
    if h <= 0:
        raise ValueError(f"spacing must be positive, got {h}")
    if n not in (1, 2):
        raise ValueError(f"complex dimension must be 1 or 2, got {n}")
    m = 2 * n
    if isinstance(shape, Ball):
        c = np.broadcast_to(np.asarray(shape.center, dtype=float), (m,)).copy()
        shape = Ball(tuple(c), float(shape.radius))
        if shape.radius <= 3 * h:
            raise GridTooCoarse(f"ball radius {shape.radius} must exceed 3h = {3 * h}")
        k = math.ceil(shape.radius / h) + 2
        origin = c - k * h
        dims = (2 * k + 1,) * m
        offsets = np.arange(2 * k + 1) - k
        grids = np.meshgrid(*([offsets * h] * m), indexing="ij")
        r2 = sum(g * g for g in grids)
        interior = r2 < shape.radius ** 2
    elif isinstance(shape, Box):
        lo = np.asarray(shape.lower, dtype=float)
        hi = np.asarray(shape.upper, dtype=float)
        if lo.shape != (m,):
            raise ValueError(f"box needs {m} bounds per side")
        cells = np.rint((hi - lo) / h).astype(int)
        if np.any(np.abs(cells * h - (hi - lo)) > 1e-9 * np.maximum(1, hi - lo)):
            raise ValueError("box extents must be integer multiples of h")
        origin = lo - h
        dims = tuple(int(c) + 3 for c in cells)
        idx = np.meshgrid(*[np.arange(d) for d in dims], indexing="ij")
        interior = np.ones(dims, dtype=bool)
        for a in range(m):
            interior &= (idx[a] >= 2) & (idx[a] <= cells[a])
    else:
        raise TypeError(f"unsupported shape {shape!r}")

    reach = np.zeros_like(interior)
    for off in stencil_offsets(m):
        reach |= shifted(interior, tuple(-o for o in off))
    boundary = reach & ~interior

    for a in range(m):
        spread = np.any(interior, axis=tuple(b for b in range(m) if b != a)).sum()
        if spread < MIN_NODES_PER_AXIS:
            raise GridTooCoarse(f"only {spread} interior nodes along axis {a}")
    return DomainGrid(n, h, shape, origin, dims, interior.copy(), boundary)


def unit_ball(n: int, h: float, radius: float = 1.0) -> DomainGrid:
    return build_domain(Ball((0.0,) * (2 * n), radius), h, n)


class GridFunction:
    """Real values on a :class:`DomainGrid`; NaN off the mask.

    With ``strict=False`` NaN is also allowed on masked nodes (functions
    defined on part of the closed domain, such as convex envelopes).
    """

    def __init__(self, grid: DomainGrid, values: np.ndarray, strict: bool = True):
        values = np.array(values, dtype=float)
        if values.shape != grid.dims:
            raise ValueError(f"values shape {values.shape} != grid dims {grid.dims}")
        values[~grid.mask] = np.nan
        if strict and not np.all(np.isfinite(values[grid.mask])):
            raise ValueError("grid function must be finite on interior and boundary nodes")
        self.grid = grid
        self.values = values

    @classmethod
    def from_callable(cls, grid: DomainGrid, fn) -> "GridFunction":
        vals = np.full(grid.dims, np.nan)
        vals[grid.mask] = fn(grid.points())
        return cls(grid, vals)

    @classmethod
    def constant(cls, grid: DomainGrid, c: float) -> "GridFunction":
        return cls(grid, np.full(grid.dims, float(c)))

    def copy(self) -> "GridFunction":
        return GridFunction(self.grid, self.values.copy())

    def __add__(self, other):
        if isinstance(other, GridFunction):
            return GridFunction(self.grid, self.values + other.values)
        return GridFunction(self.grid, self.values + other)

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            return GridFunction(self.grid, self.values - other.values)
        return GridFunction(self.grid, self.values - other)

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def __mul__(self, c: float):
        return GridFunction(self.grid, self.values * c)

    __rmul__ = __mul__

    def on(self, which: np.ndarray) -> np.ndarray:
        return self.values[which]

    def max(self, which=None) -> float:
        which = self.grid.mask if which is None else which
        return float(np.nanmax(self.values[which]))

    def min(self, which=None) -> float:
        which = self.grid.mask if which is None else which
        return float(np.nanmin(self.values[which]))

    def osc(self) -> float:
        return self.max() - self.min()

    def sup_norm(self, which=None) -> float:
        which = self.grid.mask if which is None else which
        return float(np.nanmax(np.abs(self.values[which])))

    def zero_extended(self) -> np.ndarray:
        return np.where(np.isfinite(self.values), self.values, 0.0)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        """Nearest-node lookup; points must lie on masked nodes."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        idx = np.rint((pts - self.grid.origin) / self.grid.h).astype(int)
        return self.values[tuple(idx.T)].reshape(np.shape(points)[:-1])


# -- discrete Hessians -------------------------------------------------------

def _second_differences(values: np.ndarray, h: float) -> dict:
    """All second differences at every node (NaN where the stencil leaves the mask)."""
    m = values.ndim
    out = {}
    for a in range(m):
        e = [0] * m
        e[a] = 1
        plus = shifted(values, e)
        minus = shifted(values, [-x for x in e])
        out[a, a] = (plus - 2.0 * values + minus) / h ** 2
    for a, b in itertools.combinations(range(m), 2):
        def off(sa, sb):
            e = [0] * m
            e[a], e[b] = sa, sb
            return shifted(values, e)
        out[a, b] = (off(1, 1) - off(1, -1) - off(-1, 1) + off(-1, -1)) / (4.0 * h ** 2)
    return out


def hessian_field(u: GridFunction, which: np.ndarray | None = None) -> np.ndarray:
    """Real Hessians at the selected nodes, shape (N, 2n, 2n)."""
    which = u.grid.interior if which is None else which
    m = u.grid.m
    diffs = _second_differences(u.values, u.grid.h)
    out = np.empty((int(which.sum()), m, m))
    for (a, b), d in diffs.items():
        out[:, a, b] = d[which]
        out[:, b, a] = d[which]
    return out


def complex_hessian_field(u: GridFunction, which: np.ndarray | None = None) -> np.ndarray:
    """Discrete dd^c u at the selected nodes, shape (N, n, n) complex."""
    return ddc_from_real(hessian_field(u, which))


def _check_node(u: GridFunction, node) -> tuple:
    node = tuple(int(i) for i in node)
    if not u.grid.has_stencil(node):
        raise StencilIncomplete(f"node {node} lacks a full Hessian stencil")
    return node


def discrete_hessian(u: GridFunction, node) -> SymForm:
    """Central second differences on-axis, four-point cross differences off-axis."""
    node = _check_node(u, node)
    g = u.grid
    m = g.m
    v = u.values
    h = g.h
    s = np.empty((m, m))

    def at(off):
        return v[tuple(i + o for i, o in zip(node, off))]

    for a in range(m):
        e = [0] * m
        e[a] = 1
        s[a, a] = (at(e) - 2 * v[node] + at([-x for x in e])) / h ** 2
    for a, b in itertools.combinations(range(m), 2):
        def off(sa, sb):
            e = [0] * m
            e[a], e[b] = sa, sb
            return at(e)
        s[a, b] = s[b, a] = (off(1, 1) - off(1, -1) - off(-1, 1) + off(-1, -1)) / (4 * h ** 2)
    return SymForm(s)


def discrete_complex_hessian(u: GridFunction, node) -> HermitianForm:
    return HermitianForm(ddc_from_real(discrete_hessian(u, node).entries))


def psh_defect(u: GridFunction) -> float:
    """Least eigenvalue of the discrete dd^c u over all interior nodes."""
    hc = complex_hessian_field(u)
    return float(np.min(np.linalg.eigvalsh(hc)[:, 0]))


def tol_psh(grid: DomainGrid) -> float:
    return 10.0 * grid.h


# -- CSV ---------------------------------------------------------------------

def write_csv(u: GridFunction, path) -> None:
    """One row per masked node: lattice indices, coordinates, value."""
    g = u.grid
    header = [f"index_{a}" for a in range(g.m)] + [f"x_{a}" for a in range(g.m)] + ["value"]
    idx = g.indices()
    pts = g.coords[g.mask]
    vals = u.values[g.mask]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, x, val in zip(idx, pts, vals):
            w.writerow([*map(int, i), *(repr(float(c)) for c in x), repr(float(val))])


def read_csv(path, grid: DomainGrid) -> GridFunction:
    vals = np.full(grid.dims, np.nan)
    with open(path, encoding="utf-8", newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows)
        m = (len(header) - 1) // 2
        if m != grid.m:
            raise ValueError(f"CSV has {m} coordinates, grid has {grid.m}")
        for row in rows:
            idx = tuple(int(c) for c in row[:m])
            vals[idx] = float(row[-1])
    return GridFunction(grid, vals)
