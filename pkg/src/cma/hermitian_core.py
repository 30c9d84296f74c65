"""Small dense algebra for the complex Monge-Ampere operator.

Coordinates on R^{2n} are ordered ``x_1..x_n, y_1..y_n`` with ``z_k = x_k + i y_k``.
A real symmetric matrix commuting with ``J`` has the block form
``[[A, -B], [B, A]]`` and is identified with the Hermitian matrix ``A + iB``.
With this identification ``jj_average(D^2 phi) = dd^c phi`` and a Hermitian
form ``p(z) = conj(z)^T A z`` has ``dd^c p = 2A``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonPSD

HERM_TOL = 1e-12
PSD_TOL = 1e-10


def complex_structure(n: int) -> np.ndarray:
    """The canonical complex structure ``J = [[0, -I], [I, 0]]`` on R^{2n}."""
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, -eye], [eye, zero]])


class HermitianForm:
    """Immutable n x n Hermitian matrix, symmetrized on construction."""

    __slots__ = ("n", "entries")

    def __init__(self, entries):
        a = np.array(entries, dtype=complex)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        a = 0.5 * (a + a.conj().T)
        a.setflags(write=False)
        object.__setattr__(self, "n", a.shape[0])
        object.__setattr__(self, "entries", a)

    def __setattr__(self, key, value):
        raise AttributeError("HermitianForm is immutable")

    def __repr__(self):
        return f"HermitianForm({self.entries.tolist()!r})"

    def __add__(self, other: "HermitianForm") -> "HermitianForm":
        return HermitianForm(self.entries + other.entries)

    def __mul__(self, scale: float) -> "HermitianForm":
        return HermitianForm(self.entries * scale)

    __rmul__ = __mul__

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.entries)

    def min_eigenvalue(self) -> float:
        return float(self.eigenvalues()[0])

    def is_psd(self, tol: float = PSD_TOL) -> bool:
        return self.min_eigenvalue() >= -tol

    def as_real(self) -> "SymForm":
        """Real 2n x 2n representation ``[[Re, -Im], [Im, Re]]``."""
        re, im = self.entries.real, self.entries.imag
        return SymForm(np.block([[re, -im], [im, re]]))

    def quadratic(self, z: np.ndarray) -> np.ndarray:
        """Evaluate ``conj(z)^T A z`` for complex points of shape (..., n)."""
        z = np.asarray(z, dtype=complex)
        return np.einsum("...j,ji,...i->...", z.conj(), self.entries, z).real


class SymForm:
    """Immutable real symmetric m x m matrix."""

    __slots__ = ("m", "entries")

    def __init__(self, entries):
        a = np.array(entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        object.__setattr__(self, "m", a.shape[0])
        object.__setattr__(self, "entries", a)

    def __setattr__(self, key, value):
        raise AttributeError("SymForm is immutable")

    def __repr__(self):
        return f"SymForm({self.entries.tolist()!r})"

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.entries)


def det_c(a: HermitianForm) -> float:
    """Product of the eigenvalues of a Hermitian matrix."""
    return float(np.prod(a.eigenvalues()))


def det_r(s: SymForm) -> float:
    return float(np.linalg.det(s.entries))


def jj_real(s: SymForm) -> SymForm:
    """``(S + J^T S J) / 2`` as a real matrix (the J-commuting part of S)."""
    if s.m % 2:
        raise ValueError(f"jj_average needs an even dimension, got {s.m}")
    j = complex_structure(s.m // 2)
    return SymForm(0.5 * (s.entries + j.T @ s.entries @ j))


def jj_average(s: SymForm) -> HermitianForm:
    """Hermitian identification of ``(S + J^T S J) / 2``; equals dd^c of a quadratic with Hessian S."""
    if s.m % 2:
        raise ValueError(f"jj_average needs an even dimension, got {s.m}")
    return HermitianForm(ddc_from_real(s.entries))


def nth_root_det(a: HermitianForm) -> float:
    """``det_c(A)^{1/n}`` for a PSD Hermitian matrix.

    Eigenvalues in ``[-1e-10, 0)`` are clamped to zero; anything more negative
    raises :class:`NonPSD`.
    """
    lam = a.eigenvalues()
    if lam[0] < -PSD_TOL:
        raise NonPSD(f"min eigenvalue {lam[0]:.3e} < -{PSD_TOL:g}")
    lam = np.clip(lam, 0.0, None)
    return float(np.prod(lam) ** (1.0 / a.n))


# -- batched kernels used on whole grids ------------------------------------

def ddc_from_real(s: np.ndarray) -> np.ndarray:
    """Batched Hermitian identification of the J-average of real Hessians.

    ``s`` has shape (..., 2n, 2n); returns complex (..., n, n).
    """
    m = s.shape[-1]
    n = m // 2
    p = s[..., :n, :n]
    q = s[..., :n, n:]
    r = s[..., n:, n:]
    qt = np.swapaxes(q, -1, -2)
    herm = 0.5 * (p + r) + 0.5j * (qt - q)
    return 0.5 * (herm + np.conj(np.swapaxes(herm, -1, -2)))


def root_det_batch(h: np.ndarray) -> np.ndarray:
    """Monotone extension of ``det^{1/n}`` over batched Hermitian matrices.

    Returns ``det^{1/n}`` where the matrix is PSD and its (negative) least
    eigenvalue otherwise. The result is continuous and non-decreasing in the
    Loewner order, which is what the pointwise solver relies on.
    """
    n = h.shape[-1]
    if n == 1:
        return h[..., 0, 0].real.copy()
    if n == 2:
        a = h[..., 0, 0].real
        d = h[..., 1, 1].real
        b2 = np.abs(h[..., 0, 1]) ** 2
        tr = a + d
        det = a * d - b2
        lam_min = 0.5 * (tr - np.sqrt(np.maximum((a - d) ** 2 + 4 * b2, 0.0)))
        return np.where(lam_min >= 0, np.sqrt(np.maximum(det, 0.0)), lam_min)
    lam = np.linalg.eigvalsh(h)
    psd = lam[..., 0] >= 0
    root = np.prod(np.clip(lam, 0, None), axis=-1) ** (1.0 / n)
    return np.where(psd, root, lam[..., 0])


# -- quadratic decomposition -----------------------------------------------

@dataclass(frozen=True)
class QuadraticJet:
    """``phi(z) = p(z - z0) + Re h(z - z0) + c`` with ``p`` Hermitian, ``h`` holomorphic.

    ``h(w) = w^T h2 w + h1 . w``.
    """

    n: int
    p: HermitianForm
    h2: np.ndarray
    h1: np.ndarray
    c: float
    center: np.ndarray

    def ddc(self) -> HermitianForm:
        """dd^c of the jet, i.e. ``2 p``."""
        return self.p * 2.0

    def monge_ampere(self) -> float:
        """``M_C(p) = det_c(2A)``."""
        return det_c(self.ddc())

    def hessian(self) -> np.ndarray:
        """Real Hessian of the jet in the ordered coordinates."""
        a = self.p.entries
        hr, hi = self.h2.real, self.h2.imag
        herm = 2.0 * np.block([[a.real, -a.imag], [a.imag, a.real]])
        holo = 2.0 * np.block([[hr, -hi], [-hi, -hr]])
        return herm + holo

    def gradient(self) -> np.ndarray:
        return np.concatenate([self.h1.real, -self.h1.imag])

    def __call__(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at real points of shape (..., 2n)."""
        x = np.asarray(points, dtype=float) - self.center
        w = x[..., : self.n] + 1j * x[..., self.n:]
        herm = self.p.quadratic(w)
        holo = np.einsum("...i,ij,...j->...", w, self.h2, w) + w @ self.h1
        return herm + holo.real + self.c


def decompose_quadratic(hessian, gradient, value, center=None) -> QuadraticJet:
    """Split a real quadratic into its Hermitian and pluriharmonic parts.

    The quadratic is ``value + gradient.x + x^T hessian x / 2`` in the
    displacement ``x`` from ``center``.
    """
    s = np.asarray(hessian, dtype=float)
    s = 0.5 * (s + s.T)
    g = np.asarray(gradient, dtype=float)
    m = s.shape[0]
    if m % 2:
        raise ValueError("quadratic must live on an even-dimensional space")
    n = m // 2
    center = np.zeros(m) if center is None else np.asarray(center, dtype=float)
    p = HermitianForm(0.5 * ddc_from_real(s))
    rest = s - jj_real(SymForm(s)).entries
    h2 = 0.5 * rest[:n, :n] - 0.5j * rest[:n, n:]
    h2 = 0.5 * (h2 + h2.T)
    h1 = g[:n] - 1j * g[n:]
    return QuadraticJet(n=n, p=p, h2=h2, h1=h1, c=float(value), center=center)


def assemble_quadratic(jet: QuadraticJet):
    """Inverse of :func:`decompose_quadratic`: ``(hessian, gradient, value, center)``."""
    return jet.hessian(), jet.gradient(), jet.c, jet.center
