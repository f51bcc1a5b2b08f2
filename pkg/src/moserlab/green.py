"""Green functions with a point source and extraction of the regular part A.

Near the pole ``G(x) = -(1/2π) log|x - x0| + A + b·(x - x0) + ...``; ``A`` is
found by a least-squares fit over an annulus of nodes (mesh) or lattice points
(torus) between ``4 h_loc`` and ``12 h_loc``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .forms import Field, QuadForm, assemble
from .mesh import TriMesh
from .spectrum import EigenBasis, check_alpha, eigenpairs
from .torus import TorusGrid

ANNULUS = (4.0, 12.0)
FIT_RMS_THRESHOLD = 1e-3
MIN_SAMPLES = 12


class GreenError(ValueError):
    pass


@dataclass
class GreenResult:
    pole: tuple
    alpha: float
    G: Field
    A: float
    diagnostics: dict = field(default_factory=dict)
    projected: bool = False
    ell: int = 0

    @property
    def geometry(self):
        return self.G.geometry

    def l2_squared(self, forms: QuadForm | None = None) -> float:
        """‖G‖₂² in the discrete mass inner product."""
        if isinstance(self.geometry, TorusGrid):
            return float(self.G.coeffs @ self.G.coeffs)
        forms = forms or assemble(self.geometry)
        return forms.mass(self.G.coeffs)

    def psi(self, points) -> np.ndarray:
        """Regular remainder G + (1/2π) log r - A at arbitrary points (mesh: P1 interpolant)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        r = _pole_distance(self.geometry, pts, self.pole)
        with np.errstate(divide="ignore"):
            return self.G.evaluate(pts) + np.log(r) / (2 * math.pi) - self.A

    def summary(self) -> dict:
        return {
            "pole": [float(self.pole[0]), float(self.pole[1])],
            "alpha": float(self.alpha),
            "A": float(self.A),
            "ell": int(self.ell),
            "projected": bool(self.projected),
            "diagnostics": _jsonable(self.diagnostics),
        }


def _jsonable(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.floating, float)):
            out[k] = float(v)
        elif isinstance(v, (np.integer, int)) and not isinstance(v, bool):
            out[k] = int(v)
        elif isinstance(v, np.ndarray):
            out[k] = [float(x) for x in v]
        elif isinstance(v, (list, tuple)):
            out[k] = [float(x) for x in v]
        else:
            out[k] = v
    return out


def _pole_distance(geometry, pts, pole):
    if isinstance(geometry, TorusGrid):
        return np.linalg.norm(geometry.periodic_offset(pts, pole), axis=1)
    return np.linalg.norm(pts - np.asarray(pole, dtype=float), axis=1)


# ---------------------------------------------------------------------------
# regular part


def _fit(offsets, values):
    r = np.linalg.norm(offsets, axis=1)
    y = values + np.log(r) / (2 * math.pi)
    X = np.column_stack([np.ones_like(r), offsets[:, 0], offsets[:, 1]])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    return float(coef[0]), coef[1:], float(np.sqrt(np.mean(resid**2)))


def extract_regular_part(
    G: Field,
    x0,
    h_loc: float | None = None,
    annulus=ANNULUS,
    rms_threshold: float = FIT_RMS_THRESHOLD,
):
    """Fit G + (1/2π) log r ≈ A + b·(x - x0) on the annulus; return ``(A, diagnostics)``."""
    geom = G.geometry
    x0 = np.asarray(x0, dtype=float)
    if isinstance(geom, TorusGrid):
        h = geom.h if h_loc is None else h_loc
        m = int(math.ceil(annulus[1] * geom.h / geom.h)) + 1
        ij = np.array([(i, j) for i in range(-m, m + 1) for j in range(-m, m + 1)], dtype=float)
        off = ij * geom.h
        rr = np.linalg.norm(off, axis=1)
        off = off[(rr >= annulus[0] * h * (1 - 1e-12)) & (rr <= annulus[1] * h * (1 + 1e-12))]
        vals = geom.evaluate(G.coeffs, x0 + off)
        resolved = geom.n >= 64
    else:
        h = geom.local_h(x0) if h_loc is None else h_loc
        off_all = geom.vertices - x0
        rr = np.linalg.norm(off_all, axis=1)
        sel = (rr >= annulus[0] * h) & (rr <= annulus[1] * h)
        off = off_all[sel]
        vals = G.coeffs[sel]
        resolved = h <= geom.h_max / 8 * (1 + 1e-9)
    if off.shape[0] < MIN_SAMPLES:
        raise GreenError(
            f"only {off.shape[0]} samples in the fit annulus (need {MIN_SAMPLES}); refine near the pole"
        )
    A, grad, rms = _fit(off, vals)
    diag = {
        "h_loc": float(h),
        "r_inner": float(annulus[0] * h),
        "r_outer": float(annulus[1] * h),
        "n_samples": int(off.shape[0]),
        "fit_rms": rms,
        "fit_gradient": [float(grad[0]), float(grad[1])],
        "rms_threshold": float(rms_threshold),
        "rms_ok": bool(rms <= rms_threshold),
        "pole_resolved": bool(resolved),
    }
    return A, diag


# ---------------------------------------------------------------------------
# planar


def point_load(mesh: TriMesh, x0) -> np.ndarray:
    """P1 nodal evaluation functional at x0 (barycentric weights)."""
    idx, bary = mesh.locate(np.asarray(x0, dtype=float).reshape(1, 2))
    if idx[0] < 0:
        raise GreenError(f"pole {tuple(x0)} lies outside the mesh")
    b = np.zeros(mesh.n_vertices)
    np.add.at(b, mesh.triangles[idx[0]], bary[0])
    return b


def solve_green_planar(
    mesh: TriMesh,
    x0,
    alpha: float = 0.0,
    basis: EigenBasis | None = None,
    ell: int = 0,
    forms: QuadForm | None = None,
    annulus=ANNULUS,
    rms_threshold: float = FIT_RMS_THRESHOLD,
) -> GreenResult:
    """Dirichlet Green function of (-Δ - alpha) on E_ell^perp with pole x0."""
    forms = forms or assemble(mesh)
    x0 = np.asarray(x0, dtype=float)
    h_loc = mesh.local_h(x0)
    if mesh.distance_to_boundary(x0) <= 2 * h_loc:
        raise GreenError("pole is within two local mesh sizes of the boundary")
    if ell > 0 and basis is None:
        raise GreenError("ell > 0 needs an eigenbasis")
    if basis is not None:
        check_alpha(alpha, basis, ell)
        for i in range(ell, basis.n_groups):
            lam = basis.eigenvalues[i]
            if abs(lam - alpha) <= 1e-10 * lam:
                raise GreenError(f"alpha coincides with untreated eigenvalue {lam:.12g}")
    b = forms.restrict(point_load(mesh, x0))
    A_op = (forms.K - alpha * forms.M).tocsc()
    if ell > 0:
        E = forms.restrict(basis.span(ell))
        ME = forms.M @ E
        m = E.shape[1]
        kkt = sp.bmat([[A_op, sp.csc_matrix(ME)], [sp.csc_matrix(ME.T), None]], format="csc")
        rhs = np.concatenate([b, np.zeros(m)])
        sol = _factor(kkt, alpha).solve(rhs)
        g = sol[: b.size]
        g -= E @ (ME.T @ g)
    else:
        g = _factor(A_op, alpha).solve(b)
    G = Field(mesh, forms.extend(g))
    A, diag = extract_regular_part(G, x0, h_loc, annulus, rms_threshold)
    res = A_op @ g - b
    if ell > 0:
        res -= forms.M @ (E @ (E.T @ res))
    diag["solve_residual_max"] = float(np.max(np.abs(res)))
    return GreenResult((float(x0[0]), float(x0[1])), float(alpha), G, A, diag, ell > 0, ell)


def _factor(A, alpha):
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise GreenError(f"operator K - alpha M is singular at alpha={alpha:g}") from exc
    if not np.all(np.isfinite(lu.U.diagonal())) or np.min(np.abs(lu.U.diagonal())) == 0:
        raise GreenError(f"operator K - alpha M is singular at alpha={alpha:g}")
    return lu


# ---------------------------------------------------------------------------
# torus


def solve_green_torus(
    grid: TorusGrid,
    p,
    alpha: float = 0.0,
    basis: EigenBasis | None = None,
    ell: int = 0,
    annulus=ANNULUS,
    rms_threshold: float = FIT_RMS_THRESHOLD,
    guard: float = 1e-3,
) -> GreenResult:
    """Mean-zero Green function with source δ_p - 1/|Σ|, restricted to E_ell^perp."""
    p = np.asarray(p, dtype=float) % grid.L
    sym = grid.symbol()
    keep = ~grid.nyquist_mask()
    keep[0, 0] = False
    if ell > 0:
        basis = basis or eigenpairs(grid, 1 + 4 * ell * ell)
        check_alpha(alpha, basis, ell, guard)
        keep &= sym > basis.eigenvalues[ell - 1] * (1 + basis.group_tol)
    elif alpha != 0.0:
        lam1 = (2 * math.pi / grid.L) ** 2
        if alpha > (1 - guard) * lam1:
            raise GreenError(f"alpha={alpha:g} is not below (1-{guard:g}) * lambda_1 = {(1 - guard) * lam1:g}")
    src = np.outer(grid.basis_1d([p[0]])[0], grid.basis_1d([p[1]])[0])
    denom = sym - alpha
    close = keep & (np.abs(denom) <= guard * np.maximum(sym, 1.0))
    if np.any(close):
        lam = float(sym[close][0])
        raise GreenError(f"alpha is within the guard band of included eigenvalue {lam:.12g}")
    ghat = np.zeros_like(sym)
    ghat[keep] = src[keep] / denom[keep]
    G = Field(grid, ghat.ravel())
    A, diag = extract_regular_part(G, p, grid.h, annulus, rms_threshold)
    diag["mean"] = float(ghat[0, 0] * grid.L)
    return GreenResult((float(p[0]), float(p[1])), float(alpha), G, A, diag, ell > 0, ell)


def export_green(result: GreenResult, out_dir, stem: str = "green") -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jpath, fpath = out / f"{stem}.json", out / f"{stem}_field.csv"
    rec = result.summary()
    rec["field_file"] = fpath.name
    jpath.write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")
    np.savetxt(fpath, result.G.coeffs, fmt="%.17g")
    return jpath, fpath
