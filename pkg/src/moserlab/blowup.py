"""Concentration diagnostics and the upper-bound certificate.

The blow-up scale is handled in the log domain:

    log r_ε = ½ log λ_ε - log c_ε - (2π - ε/2) c_ε²

because ``exp(-2π c²)`` underflows long before ``c`` is large.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from . import kernels
from .forms import QuadForm, integrate_function
from .green import GreenResult
from .maximizer import MaximizerResult
from .mesh import build_disc_mesh
from .torus import TorusGrid

FOUR_PI = 4 * math.pi
RAY_COUNT = 16
SAMPLE_SCALES = (0.5, 1.0, 2.0, 4.0, 8.0)


class BlowupError(ValueError):
    pass


def bubble(x) -> np.ndarray | float:
    """-(1/4π) log(1 + π|x|²) for a point or an array of points (..., 2)."""
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1)
    out = -np.log1p(math.pi * r2) / FOUR_PI
    return float(out) if np.ndim(out) == 0 else out


def bubble_radial(r) -> np.ndarray:
    return -np.log1p(math.pi * np.asarray(r, dtype=float) ** 2) / FOUR_PI


def bubble_mass_exact(R: float) -> float:
    """Closed form of ∫_{|x|<R} e^{8πφ} dx."""
    return 1.0 - 1.0 / (1.0 + math.pi * R * R)


def bubble_mass(R: float, method: str = "radial", level: int = 6) -> float:
    """∫_{|x|<R} e^{8πφ} by a radial rule or by the mesh quadrature."""
    if method == "radial":
        f = lambda r: 2 * math.pi * r * math.exp(8 * math.pi * float(bubble_radial(r)))
        val, _ = integrate.quad(f, 0.0, R, epsabs=1e-14, epsrel=1e-13, limit=200)
        return float(val)
    if method == "mesh":
        mesh = build_disc_mesh(R, level)
        return integrate_function(mesh, lambda p: np.exp(8 * math.pi * bubble(p)))
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------


@dataclass
class ProfileSource:
    """What the rescaling needs: a pointwise evaluator and the peak data."""

    evaluate: Callable[[np.ndarray], np.ndarray]
    c_eps: float
    x_eps: tuple
    lambda_eps: float
    h_loc: float = 0.0

    @classmethod
    def from_result(cls, result: MaximizerResult) -> "ProfileSource":
        geom = result.geometry
        if isinstance(geom, TorusGrid):
            h = geom.h
        else:
            h = geom.local_h(result.x_eps)
        return cls(result.u.evaluate, result.c_eps, result.x_eps, result.lambda_eps, h)


@dataclass
class BlowupDiagnostics:
    c_eps: float
    x_eps: tuple
    lambda_eps: float
    epsilon: float
    log_r_eps: float
    radii: np.ndarray  # sample radii in the rescaled variable
    profile_u: np.ndarray  # angular mean of u along the rays
    phi_eps: np.ndarray  # c(u - c), angular mean
    psi_eps: np.ndarray  # u / c, angular mean
    angular_std: np.ndarray
    resolved: np.ndarray
    bubble_rms: float
    psi_max_dev: float
    unresolved_core: bool
    energy_fractions: dict = field(default_factory=dict)

    @property
    def r_eps(self) -> float:
        return math.exp(self.log_r_eps)

    def summary(self) -> dict:
        return {
            "c_eps": float(self.c_eps),
            "x_eps": [float(self.x_eps[0]), float(self.x_eps[1])],
            "lambda_eps": float(self.lambda_eps),
            "epsilon": float(self.epsilon),
            "log_r_eps": float(self.log_r_eps),
            "r_eps": float(self.r_eps),
            "bubble_rms": None if math.isnan(self.bubble_rms) else float(self.bubble_rms),
            "psi_max_dev": None if math.isnan(self.psi_max_dev) else float(self.psi_max_dev),
            "unresolved_core": bool(self.unresolved_core),
            "n_resolved": int(np.sum(self.resolved)),
            "energy_fractions": {str(k): float(v) for k, v in self.energy_fractions.items()},
        }

    def profile_rows(self):
        for s, u, ph, b, ok in zip(self.radii, self.profile_u, self.phi_eps, bubble_radial(self.radii), self.resolved):
            yield {
                "radius": float(s),
                "u": float(u),
                "phi_eps": float(ph),
                "bubble": float(b),
                "deviation": float(ph - b),
                "resolved": bool(ok),
            }


def log_blowup_scale(lambda_eps: float, c_eps: float, epsilon: float) -> float:
    if lambda_eps <= 0 or c_eps <= 0:
        raise BlowupError("lambda_eps and c_eps must be positive")
    return 0.5 * math.log(lambda_eps) - math.log(c_eps) - (2 * math.pi - 0.5 * epsilon) * c_eps**2


def rescale_and_compare(
    result,
    epsilon: float,
    scales=SAMPLE_SCALES,
    n_rays: int = RAY_COUNT,
    min_resolution: float = 2.0,
) -> BlowupDiagnostics:
    """Sample u along rays at radii r_ε·s and compare c(u - c) with the bubble.

    Samples closer to the peak than ``min_resolution`` local mesh sizes are
    treated as unresolved and left out of the RMS.
    """
    src = result if isinstance(result, ProfileSource) else ProfileSource.from_result(result)
    c = src.c_eps
    log_r = log_blowup_scale(src.lambda_eps, c, epsilon)
    r_eps = math.exp(log_r)
    scales = np.asarray(scales, dtype=float)
    th = 2 * math.pi * np.arange(n_rays) / n_rays
    dirs = np.column_stack([np.cos(th), np.sin(th)])
    x0 = np.asarray(src.x_eps, dtype=float)
    pts = x0 + (r_eps * scales)[:, None, None] * dirs[None, :, :]
    u = np.asarray(src.evaluate(pts.reshape(-1, 2)), dtype=float).reshape(len(scales), n_rays)
    phi = c * (u - c)
    psi = u / c
    resolved = r_eps * scales >= min_resolution * src.h_loc
    resolved &= np.all(np.isfinite(u), axis=1)
    b = bubble_radial(scales)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # rays leaving the domain give NaN rows
        u_mean = np.nanmean(u, axis=1)
        phi_mean = np.nanmean(phi, axis=1)
        psi_mean = np.nanmean(psi, axis=1)
        phi_std = np.nanstd(phi, axis=1)
    if np.any(resolved):
        dev = phi[resolved] - b[resolved, None]
        rms = float(np.sqrt(np.mean(dev**2)))
        psi_dev = float(np.max(np.abs(psi[resolved] - 1.0)))
    else:
        rms = math.nan
        psi_dev = math.nan
    return BlowupDiagnostics(
        c_eps=c,
        x_eps=tuple(x0),
        lambda_eps=src.lambda_eps,
        epsilon=epsilon,
        log_r_eps=log_r,
        radii=scales,
        profile_u=u_mean,
        phi_eps=phi_mean,
        psi_eps=psi_mean,
        angular_std=phi_std,
        resolved=resolved,
        bubble_rms=rms,
        psi_max_dev=psi_dev,
        unresolved_core=not bool(np.any(resolved)),
    )


# ---------------------------------------------------------------------------


def _exterior_energy(u, geometry, forms, x0, delta):
    if isinstance(geometry, TorusGrid):
        g = geometry
        B = g.basis_1d(g.grid_1d())
        dB = g.dbasis_1d(g.grid_1d())
        C = u.reshape(g.n, g.n)
        gx = dB @ C @ B.T
        gy = B @ C @ dB.T
        dens = (gx * gx + gy * gy).ravel()
        r = np.linalg.norm(g.periodic_offset(g.grid_points(), x0), axis=1)
        return g.h**2 * float(dens[r > delta].sum()), g.h**2 * float(dens.sum())
    p = geometry.vertices[geometry.triangles]
    cen = p.mean(axis=1)
    ke, _, _ = kernels.element_matrices(geometry.vertices, geometry.triangles)
    ul = u[geometry.triangles]
    e = np.einsum("ti,tij,tj->t", ul, ke, ul)
    outside = np.linalg.norm(cen - np.asarray(x0), axis=1) > delta
    return float(e[outside].sum()), float(e.sum())


def energy_split_check(
    result: MaximizerResult,
    green: GreenResult,
    delta: float,
    forms: QuadForm | None,
) -> dict:
    """Compare ∫_{outside B_δ}|∇u|² with c⁻²((1/2π)log(1/δ) + A + α‖G‖₂²)."""
    geom = result.geometry
    x0 = np.asarray(result.x_eps, dtype=float)
    if isinstance(geom, TorusGrid):
        h = geom.h
        far = geom.L / 2
        m = float(result.u.coeffs @ result.u.coeffs)
        l2g = green.l2_squared()
    else:
        h = geom.local_h(x0)
        far = geom.distance_to_boundary(x0)
        m = forms.mass(result.u.coeffs)
        l2g = green.l2_squared(forms)
    if not (4 * h < delta < far / 2):
        raise BlowupError(f"delta={delta:g} outside ({4 * h:g}, {far / 2:g})")
    lhs, total = _exterior_energy(result.u.coeffs, geom, forms, x0, delta)
    alpha = result.config.alpha
    c2 = result.c_eps**2
    pred = (math.log(1.0 / delta) / (2 * math.pi) + green.A + alpha * l2g) / c2
    return {
        "delta": float(delta),
        "lhs": lhs,
        "rhs": pred,
        "relative_gap": abs(lhs - pred) / abs(pred) if pred else math.inf,
        "lhs_c2": lhs * c2,
        "rhs_c2": pred * c2,
        "total_energy": total,
        "energy_identity_gap": abs(total - (1.0 + alpha * m)),
        "energy_fraction_inside": 1.0 - lhs / total if total > 0 else math.nan,
    }


def upper_bound_certificate(geometry, green: GreenResult | float) -> float:
    """|Ω| + π e^{1 + 4πA}, with |Ω| the analytic domain area.

    ``green`` is a Green function result or the regular part A itself.
    """
    A = float(green) if isinstance(green, (int, float)) else green.A
    return float(geometry.domain_area + math.pi * math.exp(1.0 + FOUR_PI * A))


def export_diagnostics(diag: BlowupDiagnostics, out_dir, stem: str = "blowup"):
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jpath, cpath = out / f"{stem}.json", out / f"{stem}_profile.csv"
    jpath.write_text(json.dumps(diag.summary(), indent=2, sort_keys=True) + "\n")
    with cpath.open("w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=["radius", "u", "phi_eps", "bubble", "deviation", "resolved"])
        wr.writeheader()
        for row in diag.profile_rows():
            wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return jpath, cpath
