"""Moser-type test functions that beat the concentration threshold.

Around the pole, with ``r = |x - x0|``, ``R = -log ε``:

* cap ``r <= Rε``: ``c + (-(1/4π) log(1 + π r²/ε²) + B) / c``
* blend ``Rε < r < 2Rε``: ``(G - η ψ) / c`` with ``ψ = G + (1/2π) log r - A``
* tail ``r >= 2Rε``: ``G / c``

``η`` is a quintic ramp from 1 at ``Rε`` to 0 at ``2Rε``. The constant ``B`` is
chosen so the cap and the blend agree at ``r = Rε``.

On a mesh the function is a nodal field. On the torus the cap cannot be
resolved by the Fourier grid, so the function is kept as an analytic
evaluator and integrated with a polar rule near the pole blended into the
grid trapezoid rule away from it.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .forms import Field, QuadForm, norm_1alpha, quadrature_points
from .green import GreenResult
from .mesh import TriMesh
from .spectrum import EigenBasis, projection_coefficients
from .torus import TorusGrid

FOUR_PI = 4 * math.pi
TWO_PI = 2 * math.pi


class TestFnError(ValueError):
    pass


@dataclass
class TestFnParams:
    epsilon: float
    R: float
    c2: float
    B: float  # leading-order value 1/(4π)
    B_matched: float  # value that makes the cap continuous at r = Rε
    continuity_defect: float  # B - B_matched
    A: float = 0.0
    alpha: float = 0.0
    pole: tuple = (0.0, 0.0)

    @property
    def c(self) -> float:
        return math.sqrt(self.c2)

    @property
    def r_cap(self) -> float:
        return self.R * self.epsilon


def compute_constants(epsilon: float, A: float, alpha: float = 0.0) -> TestFnParams:
    """Leading-order c² and B plus the continuity defect of the leading B."""
    if not 0 < epsilon < math.exp(-3.0):
        raise TestFnError("asymptotic regime not reached: need 0 < epsilon < e^-3")
    R = -math.log(epsilon)
    c2 = -math.log(epsilon) / TWO_PI + math.log(math.pi) / FOUR_PI - 1.0 / FOUR_PI + A
    B = 1.0 / FOUR_PI
    b_matched = A - math.log(R * epsilon) / TWO_PI - c2 + math.log1p(math.pi * R * R) / FOUR_PI
    return TestFnParams(epsilon, R, c2, B, b_matched, B - b_matched, A, alpha)


def quintic_ramp(s):
    """1 - (10s³ - 15s⁴ + 6s⁵) on [0, 1], clamped outside."""
    s = np.clip(s, 0.0, 1.0)
    return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s * s)


def quintic_ramp_derivative(s):
    inside = (s > 0) & (s < 1)
    sc = np.clip(s, 0.0, 1.0)
    return np.where(inside, -30.0 * sc * sc * (1.0 - sc) ** 2, 0.0)


def cap_profile(r, params: TestFnParams):
    c = params.c
    return c + (-np.log1p(math.pi * (r / params.epsilon) ** 2) / FOUR_PI + params.B_matched) / c


@dataclass
class TestFunction:
    params: TestFnParams
    green: GreenResult
    field: Field | None = None  # mesh: nodal values
    branch: np.ndarray | None = None  # mesh: 0 cap, 1 blend, 2 tail
    evaluator: "TorusTestEvaluator | None" = None

    @property
    def geometry(self):
        return self.green.geometry

    def pole_value(self) -> float:
        if self.field is not None:
            i = int(np.argmin(np.linalg.norm(self.geometry.vertices - np.asarray(self.params.pole), axis=1)))
            return float(self.field.coeffs[i])
        return float(self.evaluator.values(np.asarray([self.params.pole]))[0])


def build_test_function(geometry, green: GreenResult, epsilon: float) -> TestFunction:
    """Evaluate the three-branch test function (unnormalised)."""
    params = compute_constants(epsilon, green.A, green.alpha)
    params.pole = green.pole
    x0 = np.asarray(green.pole)
    rc = params.r_cap
    if isinstance(geometry, TorusGrid):
        if rc >= geometry.L / 8:
            raise TestFnError("R·epsilon must be below L/8 on the torus")
        return TestFunction(params, green, evaluator=TorusTestEvaluator(geometry, green, params))
    if not isinstance(geometry, TriMesh):
        raise TypeError("geometry must be a TriMesh or TorusGrid")
    dist = geometry.distance_to_boundary(x0)
    if rc >= dist / 4:
        raise TestFnError(f"R·epsilon = {rc:.3e} is not below dist(x0, boundary)/4 = {dist / 4:.3e}")
    h_loc = geometry.local_h(x0)
    if rc <= 4 * h_loc:
        raise TestFnError(f"R·epsilon = {rc:.3e} is not above 4·h_loc = {4 * h_loc:.3e}; refine near the pole")
    r = np.linalg.norm(geometry.vertices - x0, axis=1)
    G = green.G.coeffs
    c = params.c
    vals = np.empty_like(G)
    branch = np.full(G.shape, 2, dtype=np.int8)
    cap = r <= rc
    blend = (r > rc) & (r < 2 * rc)
    branch[cap] = 0
    branch[blend] = 1
    vals[cap] = cap_profile(r[cap], params)
    eta = quintic_ramp((r[blend] - rc) / rc)
    psi = G[blend] + np.log(r[blend]) / TWO_PI - params.A
    vals[blend] = (G[blend] - eta * psi) / c
    tail = branch == 2
    vals[tail] = G[tail] / c
    vals[geometry.boundary] = 0.0
    return TestFunction(params, green, Field(geometry, vals), branch)


# ---------------------------------------------------------------------------
# torus evaluator


class TorusTestEvaluator:
    """Analytic test function on the torus with a composite quadrature.

    Near the pole the spectral Green function is replaced by its fitted local
    model ``-(1/2π) log r + A + b·d``; the two are blended over the fit annulus.
    """

    def __init__(self, grid: TorusGrid, green: GreenResult, params: TestFnParams):
        self.grid, self.green, self.params = grid, green, params
        self.p = np.asarray(green.pole, dtype=float)
        diag = green.diagnostics
        self.b = np.asarray(diag.get("fit_gradient", [0.0, 0.0]), dtype=float)
        self.w_in, self.w_out = diag["r_inner"], diag["r_outer"]
        self.ghat = green.G.coeffs.reshape(grid.n, grid.n)
        # linear post-processing: phi_out = scale * (phi - shift - sum corr_k e_k)
        self.shift = 0.0
        self.scale = 1.0
        self.correction = np.zeros(grid.n_modes)
        self.rho1 = max(1.5 * self.w_out, grid.L / 16)
        self.rho2 = min(2 * self.rho1, 0.45 * grid.L)
        if self.rho1 > 0.3 * grid.L:
            raise TestFnError(
                f"grid n={grid.n} too coarse: blending radius {self.rho1:.3g} exceeds 0.3 L; use n >= 64"
            )
        self._near = None
        self._far = None

    # -- pointwise -------------------------------------------------------
    def _raw(self, pts, spectral=None):
        """Raw φ and ∇φ at points; ``spectral`` optionally supplies (G_n, ∇G_n)."""
        par = self.params
        c = par.c
        rc = par.r_cap
        d = self.grid.periodic_offset(pts, self.p)
        r = np.linalg.norm(d, axis=1)
        rs = np.maximum(r, 1e-300)
        unit = d / rs[:, None]
        if spectral is None:
            need = r > self.w_in
            Gn = np.zeros(r.shape)
            dGn = np.zeros(d.shape)
            if np.any(need):
                Gn[need] = self.grid.evaluate(self.ghat, pts[need])
                dGn[need] = self.grid.gradient(self.ghat, pts[need])
        else:
            Gn, dGn = spectral
        model = -np.log(rs) / TWO_PI + par.A + d @ self.b
        dmodel = -unit / (TWO_PI * rs[:, None]) + self.b
        s = (r - self.w_in) / (self.w_out - self.w_in)
        w = quintic_ramp(s)
        dw = quintic_ramp_derivative(s)[:, None] * unit / (self.w_out - self.w_in)
        G = w * model + (1 - w) * Gn
        dG = w[:, None] * dmodel + (1 - w)[:, None] * dGn + dw * (model - Gn)[:, None]
        psi = G + np.log(rs) / TWO_PI - par.A
        dpsi = dG + unit / (TWO_PI * rs[:, None])
        se = (r - rc) / rc
        eta = quintic_ramp(se)
        deta = quintic_ramp_derivative(se)[:, None] * unit / rc
        val = (G - eta * psi) / c
        grad = (dG - eta[:, None] * dpsi - deta * psi[:, None]) / c
        cap = r <= rc
        if np.any(cap):
            val[cap] = cap_profile(r[cap], par)
            q = math.pi * (r[cap] / par.epsilon) ** 2
            dr = -(2 * math.pi * r[cap] / par.epsilon**2) / (1 + q) / (FOUR_PI * c)
            grad[cap] = dr[:, None] * unit[cap]
        return val, grad

    def _post(self, pts, val, grad):
        if np.any(self.correction):
            val = val - self.shift - self.grid.evaluate(self.correction, pts)
            grad = grad - self.grid.gradient(self.correction, pts)
        else:
            val = val - self.shift
        return self.scale * val, self.scale * grad

    def values(self, pts):
        v, g = self._raw(np.atleast_2d(pts))
        return self._post(np.atleast_2d(pts), v, g)[0]

    # -- quadrature ------------------------------------------------------
    def _near_nodes(self):
        if self._near is not None:
            return self._near
        par = self.params
        rc = par.r_cap
        r_min = 1e-6 * par.epsilon
        breaks = sorted(
            {r_min, par.epsilon, rc, 2 * rc, self.w_in, self.w_out, self.rho1, self.rho2}
        )
        breaks = [b for b in breaks if r_min <= b <= self.rho2]
        xg, wg = np.polynomial.legendre.leggauss(24)
        rs, ws = [], []
        for a, b in zip(breaks[:-1], breaks[1:]):
            # Gauss-Legendre in log r, one panel per factor e
            la, lb = math.log(a), math.log(b)
            npan = max(1, int(math.ceil(lb - la)))
            edges = np.linspace(la, lb, npan + 1)
            for e0, e1 in zip(edges[:-1], edges[1:]):
                t = 0.5 * (e1 - e0) * xg + 0.5 * (e1 + e0)
                rr = np.exp(t)
                rs.append(rr)
                ws.append(0.5 * (e1 - e0) * wg * rr * rr)  # dr·r = r² d(log r)
        r = np.concatenate(rs)
        wr = np.concatenate(ws)
        n_th = 64
        th = 2 * math.pi * (np.arange(n_th) + 0.5) / n_th
        R_, T_ = np.meshgrid(r, th, indexing="ij")
        W = np.repeat(wr, n_th) * (2 * math.pi / n_th)
        chi = quintic_ramp((R_.ravel() - self.rho1) / (self.rho2 - self.rho1))
        pts = self.p + np.column_stack([R_.ravel() * np.cos(T_.ravel()), R_.ravel() * np.sin(T_.ravel())])
        val, grad = self._raw(pts)
        # centre disc of radius r_min: integrand constant to within (r_min/ε)²
        v0, g0 = self._raw(self.p[None, :])
        self._near = (pts, W * chi, val, grad, v0, g0, math.pi * r_min**2)
        return self._near

    def _far_nodes(self):
        if self._far is not None:
            return self._far
        g = self.grid
        pts = g.grid_points()
        B = g.basis_1d(g.grid_1d())
        dB = g.dbasis_1d(g.grid_1d())
        Gn = (B @ self.ghat @ B.T).ravel()
        gx = (dB @ self.ghat @ B.T).ravel()
        gy = (B @ self.ghat @ dB.T).ravel()
        r = np.linalg.norm(g.periodic_offset(pts, self.p), axis=1)
        W = g.h**2 * (1.0 - quintic_ramp((r - self.rho1) / (self.rho2 - self.rho1)))
        keep = W > 0
        val, grad = self._raw(pts[keep], spectral=(Gn[keep], np.column_stack([gx, gy])[keep]))
        self._far = (pts[keep], W[keep], val, grad)
        return self._far

    def integrate(self, fn) -> float:
        """∫ fn(φ, ∇φ, points) over the torus for the post-processed φ."""
        pts, W, val, grad, v0, g0, disc_area = self._near_nodes()
        v, gr = self._post(pts, val, grad)
        total = float(W @ fn(v, gr, pts))
        pv, pg = self._post(self.p[None, :], v0, g0)
        total += disc_area * float(fn(pv, pg, self.p[None, :])[0])
        fpts, fW, fval, fgrad = self._far_nodes()
        v, gr = self._post(fpts, fval, fgrad)
        total += float(fW @ fn(v, gr, fpts))
        return total

    def integrate_split(self, fn, radius):
        """(∫ over r <= radius, ∫ over the rest); ``radius`` must lie below rho1."""
        pts, W, val, grad, v0, g0, disc_area = self._near_nodes()
        v, gr = self._post(pts, val, grad)
        f = fn(v, gr, pts)
        r = np.linalg.norm(pts - self.p, axis=1)
        inner = float(W[r <= radius] @ f[r <= radius])
        pv, pg = self._post(self.p[None, :], v0, g0)
        inner += disc_area * float(fn(pv, pg, self.p[None, :])[0])
        return inner, self.integrate(fn) - inner

    def norm_sq(self, alpha: float) -> float:
        e = self.integrate(lambda v, g, p: np.einsum("ij,ij->i", g, g))
        m = self.integrate(lambda v, g, p: v * v)
        return e - alpha * m


# ---------------------------------------------------------------------------
# reports


def _mesh_split(field: Field, fn, x0, radius):
    mesh = field.geometry
    pts, w = quadrature_points(mesh)
    uq = (field.coeffs[mesh.triangles] @ kernels.QUAD_BARY.T).ravel()
    f = fn(uq)
    inside = np.linalg.norm(pts - np.asarray(x0), axis=1) <= radius
    return float(w[inside] @ f[inside]), float(w[~inside] @ f[~inside])


def normalized_copy(phi: TestFunction, forms: QuadForm | None, alpha: float):
    """Return (normalised TestFunction, norm before normalisation, mean removed)."""
    if phi.field is not None:
        n = norm_1alpha(phi.field, alpha, forms)
        return TestFunction(phi.params, phi.green, phi.field * (1.0 / n), phi.branch), n, 0.0
    ev = phi.evaluator
    new = TorusTestEvaluator(ev.grid, ev.green, ev.params)
    new._near, new._far = ev._near_nodes(), ev._far_nodes()
    new.correction = ev.correction.copy()
    area = ev.grid.area
    new.shift = ev.shift + ev.integrate(lambda v, g, p: v) / area / ev.scale
    new.scale = 1.0
    n = math.sqrt(max(new.norm_sq(alpha), 0.0))
    new.scale = 1.0 / n
    return TestFunction(phi.params, phi.green, evaluator=new), n, new.shift


def lower_bound_report(
    phi: TestFunction,
    green: GreenResult,
    forms: QuadForm | None,
    alpha: float | None = None,
    volume: float | None = None,
) -> dict:
    """Renormalise φ exactly and compare ∫e^{4πφ²} with |Ω| + π e^{1 + 4πA}."""
    alpha = green.alpha if alpha is None else alpha
    par = phi.params
    geom = phi.geometry
    volume = geom.domain_area if volume is None else volume
    nphi, norm, mean = normalized_copy(phi, forms, alpha)
    rc = par.r_cap
    if nphi.field is not None:
        cap, tail = _mesh_split(nphi.field, lambda v: np.exp(FOUR_PI * v * v), par.pole, rc)
        _, tail_lin = _mesh_split(nphi.field, lambda v: 1.0 + FOUR_PI * v * v, par.pole, rc)
        l2g = green.l2_squared(forms)
    else:
        ev = nphi.evaluator
        cap, tail = ev.integrate_split(lambda v, g, p: np.exp(FOUR_PI * v * v), rc)
        _, tail_lin = ev.integrate_split(lambda v, g, p: 1.0 + FOUR_PI * v * v, rc)
        l2g = green.l2_squared()
    total = cap + tail
    threshold = volume + math.pi * math.exp(1.0 + FOUR_PI * green.A)
    margin = total - threshold
    predicted = FOUR_PI * l2g
    scaled = margin * par.c2
    cap_floor = math.pi * math.exp(1 + FOUR_PI * green.A) * (1 - 10.0 / par.R**2)
    return {
        "epsilon": par.epsilon,
        "R": par.R,
        "c2": par.c2,
        "B": par.B,
        "B_matched": par.B_matched,
        "continuity_defect": par.continuity_defect,
        "A": green.A,
        "alpha": alpha,
        "norm_before": norm,
        "norm_defect": norm * norm - 1.0,
        "mean_removed": mean,
        "cap_integral": cap,
        "tail_integral": tail,
        "total": total,
        "volume": volume,
        "threshold": threshold,
        "margin": margin,
        "verdict": bool(margin > 0),
        "margin_c2": scaled,
        "predicted_margin_c2": predicted,
        "margin_c2_ratio": scaled / predicted if predicted else math.inf,
        "margin_c2_within_20pct": bool(abs(scaled / predicted - 1) <= 0.2) if predicted else False,
        "tail_linear_floor": tail_lin,
        "tail_above_linear_floor": bool(tail >= tail_lin),
        "cap_excess": cap - math.pi * math.exp(1 + FOUR_PI * green.A),
        "cap_floor": cap_floor,
        "cap_above_floor": bool(cap >= cap_floor),
        "green_l2_squared": l2g,
    }


def export_report(report: dict, path) -> None:
    keys = ["epsilon", "R", "c2", "B", "A", "cap_integral", "tail_integral", "total", "threshold", "margin", "verdict"]
    out = {k: report[k] for k in keys}
    out["diagnostics"] = {k: v for k, v in report.items() if k not in keys}
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")


def project_and_renormalize(
    phi: TestFunction,
    basis: EigenBasis | None,
    ell: int,
    forms: QuadForm | None,
    alpha: float,
):
    """Remove E_ell components (and the mean on the torus), then normalise.

    Returns ``(normalised TestFunction, coefficients)`` where the
    coefficients are the removed M-inner products (φ, e_ij).
    """
    if phi.field is not None:
        if ell < 1:
            raise TestFnError("planar projection needs ell >= 1")
        coef = projection_coefficients(phi.field, basis, ell, forms)
        E = basis.span(ell)
        c = phi.field.coeffs - E @ coef
        c = c - E @ (E.T @ (forms.M_full @ c))
        f = Field(phi.field.geometry, c)
        n = norm_1alpha(f, alpha, forms)
        return TestFunction(phi.params, phi.green, f * (1.0 / n), phi.branch), coef
    ev = phi.evaluator
    g = ev.grid
    new = TorusTestEvaluator(g, ev.green, ev.params)
    new._near, new._far = ev._near_nodes(), ev._far_nodes()
    mean = ev.integrate(lambda v, gr, p: v) / g.area
    new.shift = mean
    coef = np.zeros(0)
    if ell > 0:
        E = basis.span(ell)
        modes = np.flatnonzero(np.any(E != 0, axis=1))
        coef = np.empty(modes.size)
        for k, m in enumerate(modes):
            unit = np.zeros(g.n_modes)
            unit[m] = 1.0
            coef[k] = new.integrate(lambda v, gr, p, u=unit: v * g.evaluate(u, p))
        new.correction = np.zeros(g.n_modes)
        new.correction[modes] = coef
    n = math.sqrt(max(new.norm_sq(alpha), 0.0))
    new.scale = 1.0 / n
    return TestFunction(phi.params, phi.green, evaluator=new), coef


def params_dict(params: TestFnParams) -> dict:
    d = asdict(params)
    d["pole"] = list(d["pole"])
    return d
