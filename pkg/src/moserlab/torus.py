"""Flat square torus with a real tensor-product Fourier basis.

Per axis the basis is ``[1, cos 1, sin 1, cos 2, sin 2, ..., cos(n/2)]``
(frequencies in units of ``2*pi/L``). All functions are orthonormal for the
trapezoidal rule on the ``n`` grid points, so in mode space the mass matrix is
the identity and the stiffness is the diagonal symbol ``(2*pi/L)**2 (m**2 + k**2)``.
The non-Nyquist functions are also orthonormal in continuous L2; the single
Nyquist cosine is scaled for discrete orthonormality.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class TorusError(ValueError):
    pass


@dataclass(frozen=True)
class TorusGrid:
    L: float = 1.0
    n: int = 64

    def __post_init__(self):
        if self.n < 4 or self.n % 2:
            raise TorusError("n must be an even integer >= 4")
        if not self.L > 0:
            raise TorusError("side length must be positive")

    @property
    def area(self) -> float:
        return self.L * self.L

    @property
    def domain_area(self) -> float:
        return self.area

    @property
    def h(self) -> float:
        return self.L / self.n

    @property
    def n_modes(self) -> int:
        return self.n * self.n

    @property
    def h_max(self) -> float:
        return self.h

    def freqs(self) -> np.ndarray:
        """Integer frequency of each 1D basis function."""
        f = np.zeros(self.n, dtype=np.int64)
        f[1:-1] = (np.arange(1, self.n - 1) + 1) // 2
        f[-1] = self.n // 2
        return f

    def kinds(self) -> np.ndarray:
        """0 constant, 1 cosine, 2 sine, 3 Nyquist cosine."""
        k = np.empty(self.n, dtype=np.int64)
        k[0] = 0
        k[1:-1:2] = 1
        k[2:-1:2] = 2
        k[-1] = 3
        return k

    def nyquist_mask(self) -> np.ndarray:
        """(n, n) mask of modes that involve a Nyquist factor."""
        ny = self.kinds() == 3
        return ny[:, None] | ny[None, :]

    def symbol(self) -> np.ndarray:
        """Stiffness multiplier per mode, shape (n, n)."""
        f = self.freqs().astype(float)
        return (2 * math.pi / self.L) ** 2 * (f[:, None] ** 2 + f[None, :] ** 2)

    def basis_1d(self, x, cols=None) -> np.ndarray:
        """Values of the 1D basis at coordinates ``x``; shape (len(x), n) or (len(x), len(cols))."""
        x = np.asarray(x, dtype=float).ravel()
        cols = np.arange(self.n) if cols is None else np.asarray(cols)
        f = self.freqs()[cols]
        kind = self.kinds()[cols]
        th = 2 * math.pi * x[:, None] * f[None, :] / self.L
        s = np.where(kind == 1, math.sqrt(2.0 / self.L), 1.0 / math.sqrt(self.L))
        s = np.where(kind == 2, math.sqrt(2.0 / self.L), s)
        return np.where(kind[None, :] == 2, np.sin(th), np.cos(th)) * s[None, :]

    def dbasis_1d(self, x, cols=None) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        cols = np.arange(self.n) if cols is None else np.asarray(cols)
        f = self.freqs()[cols]
        kind = self.kinds()[cols]
        w = 2 * math.pi * f / self.L
        th = x[:, None] * w[None, :]
        s = np.where(kind == 1, math.sqrt(2.0 / self.L), 1.0 / math.sqrt(self.L))
        s = np.where(kind == 2, math.sqrt(2.0 / self.L), s)
        return np.where(kind[None, :] == 2, np.cos(th), -np.sin(th)) * (s * w)[None, :]

    def grid_1d(self) -> np.ndarray:
        return np.arange(self.n) * self.h

    def grid_points(self) -> np.ndarray:
        g = self.grid_1d()
        X, Y = np.meshgrid(g, g, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    def _B(self):
        return self.basis_1d(self.grid_1d())

    def to_grid(self, coeffs) -> np.ndarray:
        """Grid values ``U[i, j] = u(x_i, y_j)`` from mode coefficients."""
        C = np.asarray(coeffs, dtype=float).reshape(self.n, self.n)
        B = self._B()
        return B @ C @ B.T

    def from_grid(self, values) -> np.ndarray:
        """Mode coefficients (flattened) from grid values."""
        U = np.asarray(values, dtype=float).reshape(self.n, self.n)
        B = self._B()
        return (self.h**2 * (B.T @ U @ B)).ravel()

    def _modes(self, C):
        """Row/column indices of the nonzero modes, or None when dense evaluation is cheaper."""
        nz = np.flatnonzero(C)
        if nz.size >= self.n:
            return None
        return np.divmod(nz, self.n)

    def evaluate(self, coeffs, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        C = np.asarray(coeffs, dtype=float).reshape(self.n, self.n)
        ab = self._modes(C)
        if ab is None:
            bx, by = self.basis_1d(pts[:, 0]), self.basis_1d(pts[:, 1])
            return np.sum((bx @ C) * by, axis=1)
        a, b = ab
        return (self.basis_1d(pts[:, 0], a) * self.basis_1d(pts[:, 1], b)) @ C[a, b]

    def gradient(self, coeffs, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        C = np.asarray(coeffs, dtype=float).reshape(self.n, self.n)
        ab = self._modes(C)
        if ab is None:
            bx, by = self.basis_1d(pts[:, 0]), self.basis_1d(pts[:, 1])
            dx, dy = self.dbasis_1d(pts[:, 0]), self.dbasis_1d(pts[:, 1])
            return np.column_stack([np.sum((dx @ C) * by, axis=1), np.sum((bx @ C) * dy, axis=1)])
        a, b = ab
        c = C[a, b]
        bx, by = self.basis_1d(pts[:, 0], a), self.basis_1d(pts[:, 1], b)
        dx, dy = self.dbasis_1d(pts[:, 0], a), self.dbasis_1d(pts[:, 1], b)
        return np.column_stack([(dx * by) @ c, (bx * dy) @ c])

    def periodic_offset(self, points, p) -> np.ndarray:
        """Displacement from ``p`` to each point in the fundamental cell centred at ``p``."""
        d = np.atleast_2d(np.asarray(points, dtype=float)) - np.asarray(p, dtype=float)
        return d - self.L * np.round(d / self.L)
