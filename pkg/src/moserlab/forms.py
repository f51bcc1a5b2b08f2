"""Fields, quadratic forms and the exponential functionals.

On a :class:`~moserlab.mesh.TriMesh` fields are nodal P1 vectors over all
vertices (Dirichlet fields vanish on the boundary). On a
:class:`~moserlab.torus.TorusGrid` they are real Fourier coefficient vectors.
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import kernels
from .mesh import TriMesh
from .torus import TorusGrid

OVERFLOW_EXPONENT = 700.0


class AssemblyError(ValueError):
    pass


class NormError(ValueError):
    pass


@dataclass
class Field:
    geometry: object
    coeffs: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        want = dof_count(self.geometry)
        if self.coeffs.shape != (want,):
            raise ValueError(f"field has {self.coeffs.shape} coefficients, geometry needs ({want},)")

    def __add__(self, other):
        _same_geometry(self, other)
        return Field(self.geometry, self.coeffs + other.coeffs)

    def __sub__(self, other):
        _same_geometry(self, other)
        return Field(self.geometry, self.coeffs - other.coeffs)

    def __mul__(self, t):
        return Field(self.geometry, float(t) * self.coeffs)

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.geometry, -self.coeffs)

    def values(self) -> np.ndarray:
        """Nodal values (mesh) or collocation-grid values flattened (torus)."""
        if isinstance(self.geometry, TorusGrid):
            return self.geometry.to_grid(self.coeffs).ravel()
        return self.coeffs

    def evaluate(self, points) -> np.ndarray:
        if isinstance(self.geometry, TorusGrid):
            return self.geometry.evaluate(self.coeffs, points)
        return self.geometry.interpolate(self.coeffs, points)


def _same_geometry(a, b):
    if a.geometry is not b.geometry:
        raise ValueError("fields live on different geometries")


def dof_count(geometry) -> int:
    if isinstance(geometry, TorusGrid):
        return geometry.n_modes
    return geometry.n_vertices


def geometry_volume(geometry) -> float:
    """Area covered by the discretisation (mesh union or torus cell)."""
    if isinstance(geometry, TorusGrid):
        return geometry.area
    return geometry.area


@dataclass
class QuadForm:
    """Stiffness and mass on the free dofs plus the unreduced matrices."""

    K: sp.csr_matrix
    M: sp.csr_matrix
    K_full: sp.csr_matrix
    M_full: sp.csr_matrix
    free: np.ndarray
    geometry: object = None

    @property
    def n_free(self) -> int:
        return self.free.size

    def restrict(self, u) -> np.ndarray:
        return np.asarray(u)[self.free]

    def extend(self, v) -> np.ndarray:
        out = np.zeros(self.K_full.shape[0])
        out[self.free] = v
        return out

    def energy(self, u) -> float:
        u = np.asarray(u)
        return float(u @ (self.K_full @ u))

    def mass(self, u) -> float:
        u = np.asarray(u)
        return float(u @ (self.M_full @ u))

    def inner_m(self, u, v) -> float:
        return float(np.asarray(u) @ (self.M_full @ np.asarray(v)))


def assemble(geometry) -> QuadForm:
    """P1 stiffness/mass on a mesh, or Fourier multipliers on a torus grid."""
    if isinstance(geometry, TorusGrid):
        n2 = geometry.n_modes
        K = sp.diags(geometry.symbol().ravel()).tocsr()
        M = sp.identity(n2, format="csr")
        return QuadForm(K, M, K, M, np.arange(n2), geometry)
    if not isinstance(geometry, TriMesh):
        raise TypeError("assemble expects a TriMesh or TorusGrid")
    ke, me, area = kernels.element_matrices(geometry.vertices, geometry.triangles)
    tol = 1e-14 * geometry.h_max**2
    bad = np.flatnonzero(area < tol)
    if bad.size:
        t = int(bad[0])
        raise AssemblyError(
            f"degenerate triangle {t} (vertices {geometry.triangles[t].tolist()}, area {area[t]:.3e})"
        )
    tri = geometry.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = geometry.n_vertices
    K_full = sp.csr_matrix((ke.ravel(), (rows, cols)), shape=(n, n))
    M_full = sp.csr_matrix((me.ravel(), (rows, cols)), shape=(n, n))
    K_full.sum_duplicates()
    M_full.sum_duplicates()
    # symmetrise exactly so downstream symmetric solvers see bitwise symmetry
    K_full = ((K_full + K_full.T) * 0.5).tocsr()
    M_full = ((M_full + M_full.T) * 0.5).tocsr()
    free = geometry.interior
    K = K_full[free][:, free].tocsr()
    M = M_full[free][:, free].tocsr()
    return QuadForm(K, M, K_full, M_full, free, geometry)


def norm_1alpha(u, alpha: float, forms: QuadForm) -> float:
    """sqrt(uᵀKu - alpha uᵀMu), tolerating round-off negativity."""
    c = u.coeffs if isinstance(u, Field) else np.asarray(u, dtype=float)
    k = forms.energy(c)
    q = k - alpha * forms.mass(c)
    if q < -1e-12 * abs(k):
        raise NormError("alpha above admissible threshold for this subspace")
    return math.sqrt(max(q, 0.0))


# ---------------------------------------------------------------------------
# exponential functionals


class ExpValue(float):
    """Float carrying the log of the integral and an overflow-regime flag.

    When the integral itself is not representable the float value is the
    largest finite double; ``log_value`` is always exact.
    """

    log_value: float
    overflow_regime: bool

    def __new__(cls, log_value: float, overflow_regime: bool):
        v = math.exp(log_value) if log_value < 709.0 else sys.float_info.max
        obj = super().__new__(cls, v)
        obj.log_value = float(log_value)
        obj.overflow_regime = bool(overflow_regime)
        return obj


def _coeffs(u):
    if isinstance(u, Field):
        return u.geometry, u.coeffs
    raise TypeError("expected a Field")


def quadrature_points(mesh: TriMesh):
    """Degree-5 quadrature points and weights for the whole mesh, shape (7T, 2) and (7T,)."""
    p = mesh.vertices[mesh.triangles]  # (T, 3, 2)
    pts = np.einsum("qk,tkd->tqd", kernels.QUAD_BARY, p).reshape(-1, 2)
    w = (mesh.signed_areas()[:, None] * kernels.QUAD_WEIGHTS[None, :]).ravel()
    return pts, w


def quadrature_values(u: Field) -> np.ndarray:
    """Values of u at the points used by :func:`exp_functional`."""
    geom, c = _coeffs(u)
    if isinstance(geom, TorusGrid):
        return geom.to_grid(c).ravel()
    return (c[geom.triangles] @ kernels.QUAD_BARY.T).ravel()


def exp_functional_log(u: Field, beta: float, mode: str = "quadrature"):
    """Return ``(log ∫exp(beta u²), overflow_regime)``."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    geom, c = _coeffs(u)
    peak = beta * float(np.max(c * c)) if c.size else 0.0
    if isinstance(geom, TorusGrid):
        U = geom.to_grid(c)
        e = beta * U * U
        shift = float(e.max())
        over = shift > OVERFLOW_EXPONENT
        if not over:
            shift = 0.0
        total = geom.h**2 * float(np.exp(e - shift).sum())
        return math.log(total) + shift, over
    if mode == "lumped":
        lump = np.asarray(geom_lumped_mass(geom)).ravel()
        e = beta * c * c
        shift = float(e.max())
        over = shift > OVERFLOW_EXPONENT
        if not over:
            shift = 0.0
        return math.log(float(lump @ np.exp(e - shift))) + shift, over
    if mode != "quadrature":
        raise ValueError(f"unknown quadrature mode {mode!r}")
    area = geom.signed_areas()
    over = peak > OVERFLOW_EXPONENT
    shift = peak if over else 0.0
    value, _, _ = kernels.exp_moments(geom.triangles, area, c, beta, shift, False)
    return math.log(value) + shift, over


def geom_lumped_mass(mesh: TriMesh) -> np.ndarray:
    area = mesh.signed_areas()
    return np.bincount(mesh.triangles.ravel(), weights=np.repeat(area / 3.0, 3), minlength=mesh.n_vertices)


def exp_functional(u: Field, beta: float, mode: str = "quadrature") -> ExpValue:
    """Quadrature of ∫ exp(beta u²) over the geometry."""
    lv, over = exp_functional_log(u, beta, mode)
    return ExpValue(lv, over)


def adimurthi_druet_functional(u: Field, alpha: float, forms: QuadForm) -> ExpValue:
    """∫ exp(4π u² (1 + alpha ‖u‖₂²))."""
    m = forms.mass(u.coeffs)
    return exp_functional(u, 4 * math.pi * (1.0 + alpha * m))


def integrate_function(geometry, fn: Callable[[np.ndarray], np.ndarray]) -> float:
    """Integrate an analytic function of position with the same rules."""
    if isinstance(geometry, TorusGrid):
        return geometry.h**2 * float(np.sum(fn(geometry.grid_points())))
    pts, w = quadrature_points(geometry)
    return float(w @ fn(pts))


def interpolate_function(geometry, fn: Callable[[np.ndarray], np.ndarray]) -> Field:
    """Nodal interpolant (mesh) or grid projection (torus) of an analytic function."""
    if isinstance(geometry, TorusGrid):
        vals = fn(geometry.grid_points()).reshape(geometry.n, geometry.n)
        return Field(geometry, geometry.from_grid(vals))
    return Field(geometry, fn(geometry.vertices))
