"""Deterministic SVG figures built from run records."""
from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .blowup import bubble_radial  # noqa: E402

SVG_SALT = "moserlab"


def _save(fig, path: Path):
    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "path"}):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def _ok(records):
    return [r for r in records if r.status == "ok"]


def plot_value_vs_epsilon(records, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    alphas = sorted({r.alpha for r in records})
    certs = []
    for a in alphas:
        rows = [r for r in _ok(records) if r.alpha == a]
        if not rows:
            continue
        eps = [r.epsilon for r in rows]
        vals = [r.outputs["maximizer"]["value"] for r in rows]
        ax.plot(eps, vals, "o-", label=f"alpha = {a:g}")
        certs.append((a, rows[0].outputs["certificate"]))
    for a, cert in certs:
        ax.axhline(cert, ls="--", lw=1, color="k")
        ax.annotate(f"certificate {cert:.4f} (alpha = {a:g})", (0.02, cert), xycoords=("axes fraction", "data"),
                    va="bottom", fontsize=8)
    ax.set_xscale("log")
    ax.invert_xaxis()
    ax.set_xlabel("epsilon")
    ax.set_ylabel("max of exponential functional")
    if alphas:
        ax.legend(fontsize=8, loc="lower right")
    return _save(fig, Path(path))


def plot_profile(records, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    chosen = None
    for r in _ok(records):
        b = r.outputs.get("blowup") or {}
        if b and not b.get("unresolved_core") and (chosen is None or r.epsilon < chosen.epsilon):
            chosen = r
    if chosen is None:
        ax.text(0.5, 0.5, "unresolved_core: no resolved blow-up sample", ha="center", va="center",
                transform=ax.transAxes)
        ax.set_axis_off()
        return _save(fig, Path(path))
    prof = chosen.outputs["blowup_profile"]
    s = np.array([p["radius"] for p in prof])
    phi = np.array([p["phi_eps"] if isinstance(p["phi_eps"], float) else math.nan for p in prof])
    ok = np.array([p["resolved"] for p in prof])
    grid = np.geomspace(s.min(), s.max(), 200)
    ax.plot(grid, bubble_radial(grid), "k-", label="bubble")
    ax.plot(s[ok], phi[ok], "o", label="c(u - c), resolved")
    if np.any(~ok):
        ax.plot(s[~ok], phi[~ok], "x", label="unresolved")
    ax.set_xscale("log")
    ax.set_xlabel("|y| (rescaled)")
    ax.set_ylabel("profile")
    ax.set_title(f"epsilon = {chosen.epsilon:g}, alpha = {chosen.alpha:g}", fontsize=9)
    ax.legend(fontsize=8)
    return _save(fig, Path(path))


def plot_A_vs_alpha(records, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    seen = {}
    for r in records:
        g = (r.outputs or {}).get("green")
        if g and r.alpha not in seen:
            seen[r.alpha] = g["A"]
    if seen:
        a = sorted(seen)
        ax.plot(a, [seen[x] for x in a], "o-")
    ax.set_xlabel("alpha")
    ax.set_ylabel("regular part A")
    return _save(fig, Path(path))


def emit_plots(records, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return [
        plot_value_vs_epsilon(records, out / "value_vs_epsilon.svg"),
        plot_profile(records, out / "blowup_profile.svg"),
        plot_A_vs_alpha(records, out / "A_vs_alpha.svg"),
    ]
