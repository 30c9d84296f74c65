"""Closed-form solutions of ``M_C(u) = f(z, u)`` on balls, used as oracles."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid_domain import Ball, GridFunction, build_domain
from .hermitian_core import ddc_from_real
from .rhs import Constant, ExpU, ProblemSpec, RadialPoly, RhsSpec


def _paraboloid(points) -> np.ndarray:
    return np.sum(np.asarray(points, dtype=float) ** 2, axis=-1) - 1.0


@dataclass(frozen=True)
class CatalogEntry:
    """Exact solution ``u`` of ``det(dd^c u) = f(z, u)`` on ``B_R``, with ``g = u`` on the boundary layer."""

    id: str
    n: int
    f: RhsSpec
    u_form: str
    f_form: str
    radius: float = 1.0

    def u(self, points) -> np.ndarray:
        return _paraboloid(points)

    def g(self, points) -> np.ndarray:
        return self.u(points)

    def shape(self) -> Ball:
        return Ball((0.0,) * (2 * self.n), self.radius)

    def problem(self, h: float, f: RhsSpec | None = None) -> ProblemSpec:
        grid = build_domain(self.shape(), h, self.n)
        return ProblemSpec.from_callable(grid, self.g, self.f if f is None else f)

    def exact(self, grid) -> GridFunction:
        return GridFunction.from_callable(grid, self.u)


def _entries() -> dict:
    out = {}
    for n in (1, 2):
        c = 2.0 ** n
        out[f"radial-n{n}"] = CatalogEntry(f"radial-n{n}", n, Constant(c), "|z|^2 - 1", f"{c:g}")
        out[f"expu-n{n}"] = CatalogEntry(f"expu-n{n}", n, ExpU(RadialPoly((c * np.e,), -1.0)), "|z|^2 - 1",
                                         f"{c:g} e^(1 - |z|^2) e^u")
    return out


CATALOG = _entries()


def get_entry(name: str) -> CatalogEntry:
    try:
        return CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown catalog entry {name!r}; known: {sorted(CATALOG)}") from None


def numeric_residual(entry: CatalogEntry, count: int = 100, seed: int = 0, step: float = 1e-3) -> float:
    """Largest ``|det_c(dd^c u) - f(z, u)|`` at random interior points, Hessian by central differences."""
    rng = np.random.default_rng(seed)
    m = 2 * entry.n
    x = rng.normal(size=(count, m))
    x *= (entry.radius * rng.uniform(0, 1, size=(count, 1)) ** (1.0 / m)) / np.linalg.norm(x, axis=1, keepdims=True)
    eye = np.eye(m) * step
    hess = np.empty((count, m, m))
    for a in range(m):
        for b in range(m):
            hess[:, a, b] = (entry.u(x + eye[a] + eye[b]) - entry.u(x + eye[a] - eye[b])
                             - entry.u(x - eye[a] + eye[b]) + entry.u(x - eye[a] - eye[b])) / (4 * step ** 2)
    det = np.linalg.det(ddc_from_real(hess)).real
    return float(np.max(np.abs(det - entry.f(x, entry.u(x)))))
