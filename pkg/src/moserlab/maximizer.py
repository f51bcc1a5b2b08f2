"""Subcritical maximizers of ∫exp((4π - ε)u²) under ‖u‖_{1,α} = 1.

The iteration is the damped normalized Euler-Lagrange map

    v = A⁻¹ g(u),   u ← normalize(θ v̂ + (1 - θ) u)

with ``A = K - αM`` on the admissible subspace and ``g_i = ∫ u e^{βu²} φ_i``
assembled with the same quadrature as the functional. Since the functional is
convex and ``v̂`` maximizes its linearisation over the unit ball of ``A``,
every step is an ascent step.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .forms import ExpValue, Field, QuadForm, exp_functional_log, geometry_volume
from .mesh import TriMesh
from .spectrum import EigenBasis, check_alpha
from .torus import TorusGrid

TIE_RTOL = 1e-12


class MaximizerError(RuntimeError):
    pass


@dataclass
class MaximizerConfig:
    epsilon: float
    alpha: float = 0.0
    ell: int = 0
    damping: float = 0.5
    max_iter: int = 5000
    tol: float = 1e-11
    multistarts: int = 3
    seed: int = 0
    guard: float = 1e-3

    def validate(self):
        if not 0.0 < self.epsilon < 4 * math.pi:
            raise MaximizerError("epsilon must lie in (0, 4π)")
        if not 0.0 < self.damping <= 1.0:
            raise MaximizerError("damping must lie in (0, 1]")
        if self.ell < 0:
            raise MaximizerError("ell must be non-negative")
        if self.multistarts < 1 or self.max_iter < 1 or self.tol <= 0:
            raise MaximizerError("multistarts, max_iter and tol must be positive")

    @property
    def beta(self) -> float:
        return 4 * math.pi - self.epsilon


@dataclass
class MaximizerResult:
    u: Field
    value: ExpValue
    lambda_eps: float
    mu_eps: float | None
    c_eps: float
    x_eps: tuple
    peak_index: int
    iterations: int
    residual: float
    converged: bool
    config: MaximizerConfig
    start_index: int = 0
    start_label: str = ""
    initial_value: float = 0.0
    positive: bool | None = None
    start_values: list = field(default_factory=list)
    basis: EigenBasis | None = field(default=None, repr=False)

    @property
    def geometry(self):
        return self.u.geometry

    def summary(self) -> dict:
        return {
            "config": asdict(self.config),
            "value": float(self.value),
            "log_value": float(self.value.log_value),
            "overflow_regime": bool(self.value.overflow_regime),
            "lambda_eps": float(self.lambda_eps),
            "mu_eps": None if self.mu_eps is None else float(self.mu_eps),
            "c_eps": float(self.c_eps),
            "x_eps": [float(self.x_eps[0]), float(self.x_eps[1])],
            "iterations": int(self.iterations),
            "residual": float(self.residual),
            "converged": bool(self.converged),
            "start_index": int(self.start_index),
            "start_label": self.start_label,
            "initial_value": float(self.initial_value),
            "positive": self.positive,
            "start_values": [float(v) for v in self.start_values],
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# admissible subspace


class _PlanarSpace:
    """Free nodal dofs, optionally constrained to E_ell^perp."""

    def __init__(self, mesh: TriMesh, forms: QuadForm, alpha, basis, ell):
        self.mesh, self.forms, self.alpha, self.ell = mesh, forms, alpha, ell
        self.A = (forms.K - alpha * forms.M).tocsc()
        self.area = mesh.signed_areas()
        if ell > 0:
            self.E = forms.restrict(basis.span(ell))
            self.ME = forms.M @ self.E
            m = self.E.shape[1]
            kkt = sp.bmat(
                [[self.A, sp.csc_matrix(self.ME)], [sp.csc_matrix(self.ME.T), None]], format="csc"
            )
            self._lu = spla.splu(kkt)
            self._m = m
        else:
            self.E = None
            self._lu = spla.splu(self.A)

    def project(self, x):
        if self.E is None:
            return x
        for _ in range(2):
            x = x - self.E @ (self.ME.T @ x)
        return x

    def project_load(self, g):
        if self.E is None:
            return g
        return g - self.ME @ (self.E.T @ g)

    def solve(self, g):
        if self.E is None:
            return self._lu.solve(g)
        sol = self._lu.solve(np.concatenate([g, np.zeros(self._m)]))
        return self.project(sol[: g.size])

    def energy(self, x):
        return float(x @ (self.A @ x))

    def full(self, x):
        return self.forms.extend(x)

    def moments(self, x, beta):
        """(log value, log-shifted λ, shifted load, shift, μ)."""
        u = self.full(x)
        peak = beta * float(np.max(u * u))
        shift = peak if peak > 700.0 else 0.0
        value, second, load = kernels.exp_moments(
            self.mesh.triangles, self.area, u, beta, shift, True
        )
        return math.log(value) + shift, second, self.forms.restrict(load), shift, None

    def start_vectors(self, basis, cfg, rng_seed):
        yield "eigenfunction", self._eigen_start(basis, cfg)
        yield "moser_bump", self._bump_start()
        k = 0
        while True:
            yield f"random_{k}", self._random_start(rng_seed + k)
            k += 1

    def _eigen_start(self, basis, cfg):
        if basis is None:
            lu = self._lu if self.E is None else spla.splu(self.A)
            x = np.ones(self.forms.n_free)
            for _ in range(50):
                x = lu.solve(self.forms.M @ x)
                x /= np.linalg.norm(x)
            return x
        if basis.n_groups < cfg.ell + 1:
            raise MaximizerError("eigenbasis does not reach the first admissible eigenspace")
        return self.forms.restrict(basis.function(cfg.ell + 1, 1).coeffs)

    def _bump_start(self):
        v = self.mesh.vertices
        cand = v[self.forms.free]
        dist = np.array([self.mesh.distance_to_boundary(p) for p in cand[:: max(1, len(cand) // 400)]])
        centre = cand[:: max(1, len(cand) // 400)][int(np.argmax(dist))]
        rho = 0.5 * float(dist.max())
        r = np.linalg.norm(cand - centre, axis=1)
        delta = 0.05 * rho
        return np.clip(np.log(rho / np.maximum(r, delta)), 0.0, None)

    def _random_start(self, seed):
        rng = np.random.default_rng(seed)
        return self._lu_plain_solve(self.forms.M @ rng.standard_normal(self.forms.n_free))

    def _lu_plain_solve(self, b):
        return self.solve(self.project_load(b))

    def peak(self, u_full):
        i = int(np.argmax(u_full))
        return i, tuple(float(t) for t in self.mesh.vertices[i])

    def constraint_defect(self, x):
        if self.E is None:
            return 0.0
        return float(np.max(np.abs(self.ME.T @ x)))


class _TorusSpace:
    """Fourier modes with the constant (and first ell eigenspaces) removed."""

    def __init__(self, grid: TorusGrid, alpha, basis, ell):
        self.grid, self.alpha, self.ell = grid, alpha, ell
        sym = grid.symbol().ravel()
        keep = np.ones(grid.n_modes, dtype=bool)
        keep[0] = False
        if ell > 0:
            keep &= sym > basis.eigenvalues[ell - 1] * (1 + basis.group_tol)
        self.keep = keep
        self.diag = np.where(keep, sym - alpha, 1.0)
        self.B = grid.basis_1d(grid.grid_1d())

    def project(self, x):
        return np.where(self.keep, x, 0.0)

    def project_load(self, g):
        return self.project(g)

    def solve(self, g):
        return self.project(g / self.diag)

    def energy(self, x):
        return float(np.sum(self.diag[self.keep] * x[self.keep] ** 2))

    def full(self, x):
        return x

    def moments(self, x, beta):
        g = self.grid
        U = self.B @ x.reshape(g.n, g.n) @ self.B.T
        e = beta * U * U
        peak = float(e.max())
        shift = peak if peak > 700.0 else 0.0
        ex = np.exp(e - shift)
        h2 = g.h**2
        value = h2 * float(ex.sum())
        second = h2 * float((ex * U * U).sum())
        load = h2 * (self.B.T @ (U * ex) @ self.B).ravel()
        mu = h2 * float((U * ex).sum()) / g.area
        return math.log(value) + shift, second, load, shift, mu

    def start_vectors(self, basis, cfg, rng_seed):
        g = self.grid
        sym = g.symbol().ravel()
        first = np.flatnonzero(self.keep & (sym == sym[self.keep].min()))[0]
        x = np.zeros(g.n_modes)
        x[first] = 1.0
        yield "eigenfunction", x
        c = np.array([g.L / 2, g.L / 2])
        pts = g.grid_points()
        r = np.linalg.norm(g.periodic_offset(pts, c), axis=1)
        rho = g.L / 4
        bump = np.clip(np.log(rho / np.maximum(r, 0.05 * rho)), 0.0, None)
        yield "moser_bump", self.project(g.from_grid(bump.reshape(g.n, g.n)))
        k = 0
        while True:
            rng = np.random.default_rng(rng_seed + k)
            yield f"random_{k}", self.solve(self.project(rng.standard_normal(g.n_modes)))
            k += 1

    def peak(self, u_full):
        U = self.grid.to_grid(u_full).ravel()
        i = int(np.argmax(U))
        return i, tuple(float(t) for t in self.grid.grid_points()[i])

    def grid_values(self, u_full):
        return self.grid.to_grid(u_full).ravel()

    def constraint_defect(self, x):
        return float(np.max(np.abs(x[~self.keep]))) if np.any(~self.keep) else 0.0


def _make_space(geometry, forms, alpha, basis, ell):
    if isinstance(geometry, TorusGrid):
        return _TorusSpace(geometry, alpha, basis, ell)
    if forms is None:
        raise MaximizerError("planar problems need assembled forms")
    return _PlanarSpace(geometry, forms, alpha, basis, ell)


def _normalize(space, x):
    q = space.energy(x)
    if not q > 0:
        raise MaximizerError("iterate has non-positive ‖·‖_{1,α}; alpha is not admissible")
    return x / math.sqrt(q)


# ---------------------------------------------------------------------------


def _run_start(space, x, cfg):
    beta, theta = cfg.beta, cfg.damping
    x = _normalize(space, space.project(x))
    logv0 = space.moments(x, beta)[0]
    it = 0
    converged = False
    for it in range(1, cfg.max_iter + 1):
        _, _, load, _, _ = space.moments(x, beta)
        v = space.solve(space.project_load(load))
        v = _normalize(space, v)
        x_new = _normalize(space, theta * v + (1.0 - theta) * x)
        d = x_new - x
        step = math.sqrt(max(space.energy(d), 0.0))
        x = x_new
        if abs(space.energy(x) - 1.0) > 1e-8 or space.constraint_defect(x) > 1e-8:
            raise MaximizerError("constraint violation grew during the iteration")
        if step < cfg.tol:
            converged = True
            break
    return x, it, converged, logv0


def _residual(space, x, beta):
    """Dual-norm EL residual ‖A u - g/λ‖_{A⁻¹} on the admissible subspace."""
    _, second, load, _, _ = space.moments(x, beta)
    lam = float(x @ load)  # equals ∫u²e^{βu²} up to the common shift
    w = space.solve(space.project_load(load)) / lam
    d = x - w
    return math.sqrt(max(space.energy(d), 0.0)), second, lam


def maximize_subcritical(
    geometry,
    forms: QuadForm | None,
    basis: EigenBasis | None,
    config: MaximizerConfig,
) -> MaximizerResult:
    """Best of ``config.multistarts`` damped Euler-Lagrange iterations."""
    config.validate()
    if config.ell > 0 and basis is None:
        raise MaximizerError("ell > 0 needs an eigenbasis")
    if basis is not None:
        check_alpha(config.alpha, basis, config.ell, config.guard)
    space = _make_space(geometry, forms, config.alpha, basis, config.ell)
    beta = config.beta
    runs = []
    starts = space.start_vectors(basis, config, config.seed * 1000 + 17)
    for k in range(config.multistarts):
        label, x0 = next(starts)
        x, it, conv, logv0 = _run_start(space, np.asarray(x0, dtype=float), config)
        logv = space.moments(x, beta)[0]
        runs.append((logv, k, label, x, it, conv, logv0))
    best = runs[0]
    for r in runs[1:]:
        if r[0] > best[0] + TIE_RTOL * abs(best[0]):
            best = r
    logv, k, label, x, it, conv, logv0 = best
    u_full = space.full(x)
    vals = space.grid_values(u_full) if isinstance(space, _TorusSpace) else u_full
    if np.max(vals) < -np.min(vals):
        x = -x
        u_full = -u_full
        vals = -vals
    return _finish(space, geometry, x, u_full, vals, config, basis, it, conv, k, label, logv0, runs)


def _finish(space, geometry, x, u_full, vals, config, basis, it, conv, k, label, logv0, runs):
    beta = config.beta
    logv, second, load, shift, mu = space.moments(x, beta)
    res, _, _ = _residual(space, x, beta)
    lam_eps = second * math.exp(shift) if shift < 700 else math.inf
    idx, xe = space.peak(u_full)
    positive = None
    if isinstance(geometry, TriMesh) and config.ell == 0:
        interior = np.asarray(u_full)[~geometry.boundary]
        positive = bool(np.all(interior > 0))
    return MaximizerResult(
        u=Field(geometry, u_full),
        value=ExpValue(logv, shift > 0),
        lambda_eps=lam_eps,
        mu_eps=mu,
        c_eps=float(np.max(vals)),
        x_eps=xe,
        peak_index=idx,
        iterations=it,
        residual=res,
        converged=conv,
        config=config,
        start_index=k,
        start_label=label,
        initial_value=math.exp(logv0) if logv0 < 709 else math.inf,
        positive=positive,
        start_values=[math.exp(r[0]) if r[0] < 709 else math.inf for r in runs],
        basis=basis,
    )


def el_residual(
    result: MaximizerResult,
    forms: QuadForm | None,
    alpha: float | None = None,
    epsilon: float | None = None,
    u: Field | None = None,
) -> float:
    """Dual-norm Euler-Lagrange residual of ``result.u`` (or of ``u`` if given)."""
    cfg = result.config
    alpha = cfg.alpha if alpha is None else alpha
    epsilon = cfg.epsilon if epsilon is None else epsilon
    geometry = result.geometry
    space = _make_space(geometry, forms, alpha, result.basis, cfg.ell)
    field_ = result.u if u is None else u
    x = field_.coeffs if isinstance(space, _TorusSpace) else forms.restrict(field_.coeffs)
    x = space.project(x)
    res, _, _ = _residual(space, x, 4 * math.pi - epsilon)
    return res


def torus_mu(u: Field, epsilon: float) -> float:
    """(1/|Σ|)∫u e^{(4π-ε)u²} by the trapezoidal rule."""
    g = u.geometry
    U = g.to_grid(u.coeffs)
    return g.h**2 * float(np.sum(U * np.exp((4 * math.pi - epsilon) * U * U))) / g.area


# ---------------------------------------------------------------------------


def demonstrate_unboundedness(
    geometry,
    forms: QuadForm,
    basis: EigenBasis,
    alpha: float,
    t_values,
    ell: int = 0,
    beta: float = 4 * math.pi,
) -> list[dict]:
    """Evaluate t·e along the first eigenfunction above E_ell for each t.

    Each row reports the squared norm t²(uᵀKu - α uᵀMu), the peak exponent
    β t² max e² and the log of ∫exp(β t² e²).
    """
    e = basis.function(ell + 1, 1)
    lam = float(basis.eigenvalues[ell])
    k = forms.energy(e.coeffs)
    m = forms.mass(e.coeffs)
    if isinstance(geometry, TorusGrid):
        peak = float(np.max(geometry.to_grid(e.coeffs) ** 2))
    else:
        peak = float(np.max(e.coeffs**2))
    t_max = 1.0 / math.sqrt((k - alpha * m) / m) / math.sqrt(m) if k - alpha * m > 0 else math.inf
    rows = []
    for t in t_values:
        u = Field(geometry, t * e.coeffs)
        lv, over = exp_functional_log(u, beta)
        rows.append(
            {
                "t": float(t),
                "norm_sq": float(t * t * (k - alpha * m)),
                "rayleigh_defect": float(t * t * abs(k - lam * m)),
                "peak_exponent": float(beta * t * t * peak),
                "log_value": float(lv),
                "overflow_regime": bool(over),
                "t_max": float(t_max),
                "volume": float(geometry_volume(geometry)),
            }
        )
    return rows
