"""Experiment configuration and the (alpha, epsilon) sweep driver.

Configuration is TOML with these tables::

    [geometry]   kind = "disc" | "polygon" | "torus" | "file", radius, level, vertices, L, n, mesh
    [sweep]      alphas = [...], epsilons = [...], ell = 0
    [solver]     damping, tol, max_iter, multistarts, seed
    [spectrum]   k, group_tol
    [testfn]     epsilon, core_h
    [blowup]     delta
    [output]     dir, threads

Every key can be overridden by an environment variable
``MOSERLAB_<TABLE>__<KEY>`` (for example ``MOSERLAB_SOLVER__DAMPING=0.3``);
values are parsed as JSON when possible and kept as strings otherwise.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .blowup import energy_split_check, rescale_and_compare, upper_bound_certificate
from .forms import assemble
from .green import solve_green_planar, solve_green_torus
from .maximizer import MaximizerConfig, maximize_subcritical, torus_mu
from .mesh import build_disc_mesh, build_polygon_mesh, read_mesh, refine_toward, write_mesh
from .spectrum import eigenpairs
from .testfn import build_test_function, lower_bound_report, project_and_renormalize
from .torus import TorusGrid

ENV_PREFIX = "MOSERLAB_"

DEFAULTS = {
    "geometry": {
        "kind": "disc",
        "radius": 1.0,
        "center": [0.0, 0.0],
        "level": 3,
        "vertices": [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        "L": 1.0,
        "n": 64,
        "pole": None,
        "mesh": None,
    },
    "sweep": {"alphas": [0.0], "epsilons": [2.0, 1.0, 0.5], "ell": 0},
    "solver": {"damping": 0.5, "tol": 1e-11, "max_iter": 5000, "multistarts": 3, "seed": 0},
    "spectrum": {"k": 6, "group_tol": 1e-6},
    "testfn": {"epsilon": 1e-4, "core_h": None},
    "blowup": {"delta": 0.25},
    "output": {"dir": "moserlab-out", "threads": 1},
}


class ConfigError(ValueError):
    pass


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _parse_env_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out: dict = {}
    for key, raw in sorted(environ.items()):
        if not key.startswith(ENV_PREFIX) or "__" not in key:
            continue
        table, _, name = key[len(ENV_PREFIX) :].partition("__")
        table, name = table.lower(), name.lower()
        if name == "l":
            name = "L"
        if table not in DEFAULTS:
            continue
        out.setdefault(table, {})[name] = _parse_env_value(raw)
    return out


@dataclass
class ExperimentConfig:
    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def load(cls, path=None, environ=None, overrides: dict | None = None) -> "ExperimentConfig":
        data = copy.deepcopy(DEFAULTS)
        if path is not None:
            with open(path, "rb") as fh:
                data = _merge(data, tomllib.load(fh))
        data = _merge(data, env_overrides(environ))
        if overrides:
            data = _merge(data, overrides)
        cfg = cls(data)
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.data[key]

    def validate(self):
        g = self.data["geometry"]
        if g["kind"] not in ("disc", "polygon", "torus", "file"):
            raise ConfigError(f"unknown geometry kind {g['kind']!r}")
        if g["kind"] == "file" and not g.get("mesh"):
            raise ConfigError("geometry.kind = 'file' needs geometry.mesh (path to a mesh text file)")
        eps = [float(e) for e in self.data["sweep"]["epsilons"]]
        if not eps:
            raise ConfigError("epsilon ladder is empty")
        if any(not 0 < e < 4 * math.pi for e in eps):
            raise ConfigError("epsilons must lie in (0, 4π)")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("epsilon ladder must be strictly decreasing")
        s = self.data["solver"]
        if not 0 < float(s["damping"]) <= 1:
            raise ConfigError("solver.damping must lie in (0, 1]")
        if int(s["multistarts"]) < 1 or int(s["max_iter"]) < 1 or float(s["tol"]) <= 0:
            raise ConfigError("solver.multistarts, max_iter and tol must be positive")
        if int(self.data["sweep"]["ell"]) < 0:
            raise ConfigError("sweep.ell must be non-negative")
        if int(self.data["spectrum"]["k"]) < 1:
            raise ConfigError("spectrum.k must be at least 1")
        if int(self.data["output"]["threads"]) < 1:
            raise ConfigError("output.threads must be at least 1")
        te = float(self.data["testfn"]["epsilon"])
        if not 0 < te < math.exp(-3):
            raise ConfigError("testfn.epsilon must lie in (0, e^-3)")

    def canonical_bytes(self) -> bytes:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":")).encode()

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# geometry helpers


def build_geometry(cfg: ExperimentConfig):
    g = cfg["geometry"]
    if g["kind"] == "disc":
        return build_disc_mesh(float(g["radius"]), int(g["level"]), tuple(g["center"]))
    if g["kind"] == "polygon":
        return build_polygon_mesh(g["vertices"], int(g["level"]))
    if g["kind"] == "file":
        return read_mesh(g["mesh"])
    return TorusGrid(float(g["L"]), int(g["n"]))


def default_pole(cfg: ExperimentConfig, geometry):
    g = cfg["geometry"]
    if g.get("pole") is not None:
        return tuple(float(x) for x in g["pole"])
    if g["kind"] == "disc":
        return tuple(float(x) for x in g["center"])
    if g["kind"] == "torus":
        return (0.5 * float(g["L"]), 0.5 * float(g["L"]))
    if geometry.domain.get("kind") == "disc":
        return tuple(float(x) for x in geometry.domain["center"])
    verts = geometry.vertices[geometry.interior]
    d = np.array([geometry.distance_to_boundary(p) for p in verts])
    return tuple(float(x) for x in verts[int(np.argmax(d))])


def pole_geometry(cfg: ExperimentConfig, geometry, pole, eps_test: float):
    """Geometry fine enough near the pole to carry the test-function cap."""
    if isinstance(geometry, TorusGrid):
        return geometry
    g = cfg["geometry"]
    core = cfg["testfn"]["core_h"]
    core = eps_test / 10.0 if core is None else float(core)
    if g["kind"] == "disc" and np.allclose(pole, g["center"]):
        return build_disc_mesh(float(g["radius"]), int(g["level"]), tuple(g["center"]), core_h=core)
    return refine_toward(geometry, pole, core)


# ---------------------------------------------------------------------------
# run records


@dataclass
class RunRecord:
    config_hash: str
    alpha: float
    epsilon: float
    status: str
    outputs: dict
    started: str
    finished: str
    code_version: str = __version__
    error: str | None = None
    # maximizer coefficients, written next to the record rather than inside it
    u_coeffs: np.ndarray | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "alpha": self.alpha,
            "epsilon": self.epsilon,
            "status": self.status,
            "error": self.error,
            "outputs": self.outputs,
            "timestamps": {"started": self.started, "finished": self.finished},
            "code_version": self.code_version,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(
            d["config_hash"],
            d["alpha"],
            d["epsilon"],
            d["status"],
            d["outputs"],
            d["timestamps"]["started"],
            d["timestamps"]["finished"],
            d.get("code_version", __version__),
            d.get("error"),
        )


def _now():
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())


def _finite(obj):
    """Replace non-finite floats by log-domain strings so JSON stays valid."""
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@dataclass
class AlphaContext:
    alpha: float
    geometry: object
    forms: object
    basis: object
    green: object
    certificate: float
    testfn: dict | None
    eigen: dict
    error: str | None = None


def prepare_alpha(cfg: ExperimentConfig, geometry, forms, alpha: float) -> AlphaContext:
    """Eigenpairs, Green function, certificate and test-function report for one alpha."""
    ell = int(cfg["sweep"]["ell"])
    k = max(int(cfg["spectrum"]["k"]), 1)
    tol = float(cfg["spectrum"]["group_tol"])
    seed = int(cfg["solver"]["seed"])
    basis = eigenpairs(geometry, k, forms, group_tol=tol, seed=seed)
    while basis.n_groups < ell + 1:
        k *= 2
        basis = eigenpairs(geometry, k, forms, group_tol=tol, seed=seed)
    pole = default_pole(cfg, geometry)
    eps_test = float(cfg["testfn"]["epsilon"])
    if isinstance(geometry, TorusGrid):
        green = solve_green_torus(geometry, pole, alpha, basis if ell else None, ell)
        pgeom, pforms, pbasis = geometry, None, basis
    else:
        pgeom = pole_geometry(cfg, geometry, pole, eps_test)
        pforms = assemble(pgeom)
        pbasis = None
        if ell > 0 or alpha > 0:
            pbasis = eigenpairs(pgeom, basis.vectors.shape[1], pforms, group_tol=tol, seed=seed)
        green = solve_green_planar(pgeom, pole, alpha, pbasis, ell, forms=pforms)
    cert = upper_bound_certificate(pgeom, green)
    try:
        phi = build_test_function(pgeom, green, eps_test)
        if ell > 0:
            phi, _ = project_and_renormalize(phi, pbasis, ell, pforms, alpha)
        report = lower_bound_report(phi, green, pforms, alpha)
    except ValueError as exc:
        report = {"error": f"{type(exc).__name__}: {exc}"}
    return AlphaContext(alpha, geometry, forms, basis, green, cert, report, basis.summary())


def run_point(cfg: ExperimentConfig, ctx: AlphaContext, epsilon: float) -> RunRecord:
    started = _now()
    ell = int(cfg["sweep"]["ell"])
    s = cfg["solver"]
    outputs: dict = {
        "config": cfg.data,
        "eigen": ctx.eigen,
        "green": ctx.green.summary(),
        "certificate": ctx.certificate,
        "testfn": ctx.testfn,
    }
    try:
        mcfg = MaximizerConfig(
            epsilon=float(epsilon),
            alpha=ctx.alpha,
            ell=ell,
            damping=float(s["damping"]),
            max_iter=int(s["max_iter"]),
            tol=float(s["tol"]),
            multistarts=int(s["multistarts"]),
            seed=int(s["seed"]),
        )
        res = maximize_subcritical(ctx.geometry, ctx.forms, ctx.basis, mcfg)
        msum = res.summary()
        geom = ctx.geometry
        if isinstance(geom, TorusGrid):
            msum["mean"] = float(res.u.coeffs[0] * geom.L)
            msum["mean_zero_ok"] = bool(abs(msum["mean"]) <= 1e-10)
            msum["mu_recomputed"] = torus_mu(res.u, float(epsilon))
        if ell > 0:
            E = ctx.basis.span(ell)
            M = ctx.forms.M_full if ctx.forms is not None else None
            proj = E.T @ (M @ res.u.coeffs) if M is not None else E.T @ res.u.coeffs
            msum["max_projection"] = float(np.max(np.abs(proj)))
        outputs["maximizer"] = msum
        u_coeffs = res.u.coeffs
        diag = rescale_and_compare(res, float(epsilon))
        outputs["blowup"] = diag.summary()
        outputs["blowup_profile"] = list(diag.profile_rows())
        try:
            outputs["energy_split"] = energy_split_check(
                res, ctx.green, float(cfg["blowup"]["delta"]), ctx.forms
            )
        except ValueError as exc:
            outputs["energy_split"] = {"error": str(exc)}
        status, err = "ok", None
    except Exception as exc:  # noqa: BLE001 - recorded per grid point
        status, err = "error", f"{type(exc).__name__}: {exc}"
        u_coeffs = None
    return RunRecord(cfg.hash(), float(ctx.alpha), float(epsilon), status, _finite(outputs), started, _now(),
                     error=err, u_coeffs=u_coeffs)


def run_experiment(cfg: ExperimentConfig, out_dir=None, threads: int | None = None) -> list[RunRecord]:
    """Sweep alpha (outer) and epsilon (inner); write records and the summary CSV."""
    out = Path(out_dir or cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    threads = int(threads or cfg["output"]["threads"])
    geometry = build_geometry(cfg)
    forms = None if isinstance(geometry, TorusGrid) else assemble(geometry)
    alphas = [float(a) for a in cfg["sweep"]["alphas"]]
    epsilons = [float(e) for e in cfg["sweep"]["epsilons"]]

    contexts = {}
    for a in alphas:
        try:
            contexts[a] = prepare_alpha(cfg, geometry, forms, a)
        except Exception as exc:  # noqa: BLE001
            contexts[a] = f"{type(exc).__name__}: {exc}"

    grid = [(a, e) for a in alphas for e in epsilons]

    def work(point):
        a, e = point
        ctx = contexts[a]
        if isinstance(ctx, str):
            now = _now()
            return RunRecord(cfg.hash(), a, e, "error", {}, now, now, error=ctx)
        return run_point(cfg, ctx, e)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            records = list(ex.map(work, grid))
    else:
        records = [work(p) for p in grid]

    if not isinstance(geometry, TorusGrid):
        write_mesh(geometry, out / "mesh.txt")
    for i, rec in enumerate(records):
        write_field_file(rec, out, i)
        path = out / f"record_{i:03d}.json"
        path.write_text(json.dumps(rec.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / "summary.csv").write_text(summary_csv(records))
    return records


def write_field_file(rec: RunRecord, out: Path, index: int) -> Path | None:
    """Store the maximizer coefficients as one value per line and reference them from the record."""
    if rec.u_coeffs is None:
        return None
    path = out / f"field_{index:03d}.csv"
    np.savetxt(path, rec.u_coeffs, fmt="%.17g")
    rec.outputs["maximizer"]["field_file"] = path.name
    return path


SUMMARY_COLUMNS = [
    "alpha",
    "epsilon",
    "status",
    "value",
    "log_value",
    "lambda_eps",
    "mu_eps",
    "c_eps",
    "iterations",
    "residual",
    "converged",
    "certificate",
    "A",
    "testfn_epsilon",
    "testfn_total",
    "testfn_margin",
    "log_r_eps",
    "bubble_rms",
    "unresolved_core",
]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def summary_row(rec: RunRecord) -> dict:
    o = rec.outputs or {}
    m = o.get("maximizer") or {}
    t = o.get("testfn") or {}
    b = o.get("blowup") or {}
    g = o.get("green") or {}
    return {
        "alpha": rec.alpha,
        "epsilon": rec.epsilon,
        "status": rec.status,
        "value": m.get("value"),
        "log_value": m.get("log_value"),
        "lambda_eps": m.get("lambda_eps"),
        "mu_eps": m.get("mu_eps"),
        "c_eps": m.get("c_eps"),
        "iterations": m.get("iterations"),
        "residual": m.get("residual"),
        "converged": m.get("converged"),
        "certificate": o.get("certificate"),
        "A": g.get("A"),
        "testfn_epsilon": t.get("epsilon"),
        "testfn_total": t.get("total"),
        "testfn_margin": t.get("margin"),
        "log_r_eps": b.get("log_r_eps"),
        "bubble_rms": b.get("bubble_rms"),
        "unresolved_core": b.get("unresolved_core"),
    }


def summary_csv(records) -> str:
    buf = io.StringIO()
    wr = csv.DictWriter(buf, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
    wr.writeheader()
    for rec in records:
        wr.writerow({k: _fmt(v) for k, v in summary_row(rec).items()})
    return buf.getvalue()


def load_records(out_dir) -> list[RunRecord]:
    paths = sorted(Path(out_dir).glob("record_*.json"))
    return [RunRecord.from_dict(json.loads(p.read_text())) for p in paths]
