"""Laplacian eigenpairs, eigenvalue grouping and the projector onto E_l^perp.

Sign convention: all operators are the positive semidefinite ``K`` (that is
``-Δ`` in the plane and the positive Laplace-Beltrami operator on the torus).
For eigenfunctions, M-orthogonality and K-orthogonality coincide, so one
projector in the M inner product serves both.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as spla

from .forms import Field, QuadForm, assemble
from .torus import TorusGrid

GROUP_TOL = 1e-6
ALPHA_GUARD = 1e-3


class SpectrumError(RuntimeError):
    pass


@dataclass
class EigenBasis:
    geometry: object
    eigenvalues: np.ndarray  # distinct values, increasing
    multiplicities: np.ndarray
    vectors: np.ndarray  # (ndof, total) full coefficient vectors, M-orthonormal
    raw_eigenvalues: np.ndarray  # one entry per column of ``vectors``
    group_tol: float = GROUP_TOL

    @property
    def n_groups(self) -> int:
        return len(self.eigenvalues)

    def group_slice(self, i: int) -> slice:
        """Columns of ``vectors`` spanning the (1-based) i-th eigenspace."""
        start = int(np.sum(self.multiplicities[: i - 1]))
        return slice(start, start + int(self.multiplicities[i - 1]))

    def span(self, ell: int) -> np.ndarray:
        """Columns spanning the first ``ell`` eigenspaces."""
        n = int(np.sum(self.multiplicities[:ell]))
        return self.vectors[:, :n]

    def function(self, i: int, j: int = 1) -> Field:
        """Eigenfunction e_ij (both indices 1-based)."""
        s = self.group_slice(i)
        return Field(self.geometry, self.vectors[:, s.start + j - 1].copy())

    def summary(self) -> dict:
        return {
            "eigenvalues": [float(x) for x in self.eigenvalues],
            "multiplicities": [int(x) for x in self.multiplicities],
            "group_tol": self.group_tol,
        }


def group_eigenvalues(values, tol: float = GROUP_TOL):
    """Split sorted values into runs whose consecutive relative gaps are <= tol."""
    values = np.asarray(values, dtype=float)
    groups = [[0]]
    for i in range(1, len(values)):
        prev = values[groups[-1][0]]
        if abs(values[i] - prev) <= tol * max(abs(prev), abs(values[i])):
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def _m_gram_schmidt(V, M):
    V = V.copy()
    for j in range(V.shape[1]):
        for _ in range(2):
            for i in range(j):
                V[:, j] -= (V[:, i] @ (M @ V[:, j])) * V[:, i]
            V[:, j] /= np.sqrt(V[:, j] @ (M @ V[:, j]))
    return V


def _fix_sign(v):
    k = int(np.argmax(np.abs(v)))
    return v if v[k] >= 0 else -v


def eigenpairs(
    geometry,
    k: int,
    forms: QuadForm | None = None,
    group_tol: float = GROUP_TOL,
    seed: int = 0,
    maxiter: int | None = None,
) -> EigenBasis:
    """The k smallest eigenpairs, grouped into eigenspaces.

    The eigenspace containing the k-th value is always completed, so the
    basis may hold more than ``k`` functions.
    """
    if k < 1:
        raise SpectrumError("k must be at least 1")
    if isinstance(geometry, TorusGrid):
        return _torus_eigenpairs(geometry, k, group_tol)
    forms = forms or assemble(geometry)
    nfree = forms.n_free
    if k > nfree:
        raise SpectrumError(f"k={k} exceeds the {nfree} interior degrees of freedom")
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(nfree)
    want = min(nfree - 1, k + 6) if nfree > 1 else 1
    while True:
        try:
            if want >= nfree - 1:
                import scipy.linalg as sla

                w, V = sla.eigh(forms.K.toarray(), forms.M.toarray())
            else:
                w, V = spla.eigsh(
                    forms.K, k=want, M=forms.M, sigma=0.0, which="LM", v0=v0, maxiter=maxiter
                )
        except spla.ArpackNoConvergence as exc:
            got = exc.eigenvalues
            raise SpectrumError(
                f"eigensolver did not converge; {len(got)} of {want} pairs converged"
            ) from exc
        order = np.argsort(w, kind="stable")
        w, V = w[order], V[:, order]
        groups = group_eigenvalues(w, group_tol)
        # the group holding the k-th value must be followed by another group
        g_of_k = next(gi for gi, g in enumerate(groups) if k - 1 in g)
        if g_of_k < len(groups) - 1 or want >= nfree - 1:
            break
        want = min(nfree - 1, want + 8)
    groups = groups[: g_of_k + 1]
    cols, raw, lam, mult = [], [], [], []
    for g in groups:
        Vg = _m_gram_schmidt(V[:, g], forms.M)
        if len(g) == 1:
            Vg[:, 0] = _fix_sign(Vg[:, 0])
        cols.append(Vg)
        raw.extend(w[g])
        lam.append(float(np.mean(w[g])))
        mult.append(len(g))
    Vfree = np.hstack(cols)
    vectors = np.zeros((geometry.n_vertices, Vfree.shape[1]))
    vectors[forms.free] = Vfree
    for j in range(Vfree.shape[1]):
        r = forms.K @ Vfree[:, j] - raw[j] * (forms.M @ Vfree[:, j])
        if np.linalg.norm(r) > 1e-6 * raw[j] * np.linalg.norm(forms.M @ Vfree[:, j]):
            raise SpectrumError(f"eigenpair {j} residual {np.linalg.norm(r):.3e} too large")
    return EigenBasis(
        geometry, np.array(lam), np.array(mult), vectors, np.array(raw), group_tol
    )


def _torus_eigenpairs(grid: TorusGrid, k: int, group_tol: float) -> EigenBasis:
    if k > grid.n_modes - 1:
        raise SpectrumError("k exceeds the number of mean-zero modes")
    sym = grid.symbol().ravel()
    order = np.argsort(sym, kind="stable")[1:]  # drop the constant mode
    w = sym[order]
    groups = group_eigenvalues(w, group_tol)
    g_of_k = next(gi for gi, g in enumerate(groups) if k - 1 in g)
    groups = groups[: g_of_k + 1]
    idx = np.concatenate([order[g] for g in groups])
    vectors = np.zeros((grid.n_modes, idx.size))
    vectors[idx, np.arange(idx.size)] = 1.0
    lam = np.array([w[g[0]] for g in groups])
    mult = np.array([len(g) for g in groups])
    return EigenBasis(grid, lam, mult, vectors, sym[idx], group_tol)


def _check_geometry(u: Field, basis: EigenBasis):
    if u.geometry is not basis.geometry:
        raise SpectrumError("field and eigenbasis live on different geometries")


def projection_coefficients(u: Field, basis: EigenBasis, ell: int, forms: QuadForm) -> np.ndarray:
    _check_geometry(u, basis)
    E = basis.span(ell)
    return E.T @ (forms.M_full @ u.coeffs)


def project_perp(u: Field, basis: EigenBasis, ell: int, forms: QuadForm | None = None) -> Field:
    """Remove the components of u along the first ``ell`` eigenspaces."""
    _check_geometry(u, basis)
    if ell > basis.n_groups:
        raise SpectrumError(f"ell={ell} exceeds the {basis.n_groups} computed eigenspaces")
    if ell == 0:
        return Field(u.geometry, u.coeffs.copy())
    forms = forms or assemble(u.geometry)
    E = basis.span(ell)
    c = u.coeffs.copy()
    for _ in range(2):
        c -= E @ (E.T @ (forms.M_full @ c))
    return Field(u.geometry, c)


def admissible_alpha_max(basis: EigenBasis, ell: int) -> float:
    """λ_{ell+1}; callers keep alpha <= (1 - ALPHA_GUARD) times this."""
    if ell < 0:
        raise SpectrumError("ell must be non-negative")
    if basis.n_groups < ell + 1:
        raise SpectrumError(
            f"only {basis.n_groups} distinct eigenvalues computed; rerun eigenpairs with larger k"
        )
    return float(basis.eigenvalues[ell])


def check_alpha(alpha: float, basis: EigenBasis, ell: int, guard: float = ALPHA_GUARD) -> None:
    lim = admissible_alpha_max(basis, ell)
    if alpha > (1.0 - guard) * lim:
        raise SpectrumError(
            f"alpha={alpha:g} is not below (1-{guard:g}) * lambda_{ell + 1} = {(1 - guard) * lim:g}"
        )


def export_eigenbasis(basis: EigenBasis, out_dir, stem: str = "eigenbasis") -> tuple[Path, Path]:
    """JSON header plus a CSV coefficient block (one column per eigenfunction)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jpath, cpath = out / f"{stem}.json", out / f"{stem}.csv"
    header = basis.summary()
    header["raw_eigenvalues"] = [float(x) for x in basis.raw_eigenvalues]
    header["coefficients_file"] = cpath.name
    header["n_dof"] = int(basis.vectors.shape[0])
    jpath.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    with cpath.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([f"e{i}" for i in range(basis.vectors.shape[1])])
        for row in basis.vectors:
            wr.writerow([repr(float(x)) for x in row])
    return jpath, cpath
