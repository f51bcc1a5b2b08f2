import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from moserlab.blowup import (
    BlowupError,
    ProfileSource,
    bubble,
    bubble_mass,
    bubble_mass_exact,
    bubble_radial,
    energy_split_check,
    export_diagnostics,
    log_blowup_scale,
    rescale_and_compare,
    upper_bound_certificate,
)
from moserlab.forms import assemble
from moserlab.green import solve_green_planar
from moserlab.maximizer import MaximizerConfig, maximize_subcritical
from moserlab.mesh import build_disc_mesh
from moserlab.spectrum import eigenpairs
from moserlab.torus import TorusGrid


def test_bubble_values():
    assert bubble((0.0, 0.0)) == 0.0
    assert bubble((1.0, 0.0)) == pytest.approx(-math.log(1 + math.pi) / (4 * math.pi), rel=1e-15)
    pts = np.array([[0.3, 0.4], [0.0, 0.5]])
    np.testing.assert_allclose(bubble(pts), bubble_radial([0.5, 0.5]))


@given(st.floats(0.01, 50.0))
@settings(max_examples=40, deadline=None)
def test_bubble_mass_radial(R):
    assert bubble_mass(R) == pytest.approx(bubble_mass_exact(R), abs=1e-10)


def test_bubble_total_mass_is_one():
    f = lambda r: 2 * math.pi * r * math.exp(8 * math.pi * float(bubble_radial(r)))
    total, _ = integrate.quad(f, 0, math.inf, epsabs=1e-13)
    assert total == pytest.approx(1.0, abs=1e-10)


def test_bubble_mass_mesh():
    assert bubble_mass(2.0, "mesh", level=4) == pytest.approx(bubble_mass_exact(2.0), abs=1e-5)
    with pytest.raises(ValueError):
        bubble_mass(1.0, "simpson")


def test_log_blowup_scale_formula():
    lam, c, eps = 2.0, 3.0, 0.5
    assert log_blowup_scale(lam, c, eps) == pytest.approx(
        math.log(math.sqrt(lam) / c * math.exp(-(2 * math.pi - eps / 2) * c * c)), rel=1e-14
    )
    with pytest.raises(BlowupError):
        log_blowup_scale(-1.0, 1.0, 0.5)


def synthetic_source(c, log_r, lam=1.0, eps=0.5, h=0.0):
    """u whose rescaling is exactly the bubble: u(x) = c + bubble((x - x0)/r)/c."""
    # choose lambda so the scale formula returns log_r
    lam = math.exp(2 * (log_r + math.log(c) + (2 * math.pi - eps / 2) * c * c))
    r = math.exp(log_r)
    x0 = np.array([0.1, -0.2])
    ev = lambda p: c + bubble_radial(np.linalg.norm(p - x0, axis=1) / r) / c
    return ProfileSource(ev, c, tuple(x0), lam, h), eps


def test_rescale_recovers_exact_bubble():
    src, eps = synthetic_source(3.0, math.log(1e-3))
    d = rescale_and_compare(src, eps)
    assert d.log_r_eps == pytest.approx(math.log(1e-3), abs=1e-10)
    assert d.bubble_rms < 1e-12
    assert not d.unresolved_core
    assert d.psi_max_dev < 1 / 9


def test_unresolved_core_flag():
    src, eps = synthetic_source(3.0, math.log(1e-3), h=1.0)
    d = rescale_and_compare(src, eps)
    assert d.unresolved_core
    assert math.isnan(d.bubble_rms)
    assert d.summary()["bubble_rms"] is None


def test_partial_resolution_skips_fine_scales():
    src, eps = synthetic_source(3.0, math.log(1e-3), h=1e-3)
    d = rescale_and_compare(src, eps)
    # r_ε·s >= 2h needs s >= 2
    assert d.resolved.tolist() == [False, False, True, True, True]


@pytest.fixture(scope="module")
def disc_run():
    m = build_disc_mesh(1.0, 3)
    f = assemble(m)
    b = eigenpairs(m, 3, f)
    r = maximize_subcritical(m, f, b, MaximizerConfig(epsilon=1.0, multistarts=1))
    gr = solve_green_planar(m, (0.0, 0.0), forms=f)
    return m, f, r, gr


def test_energy_split_on_maximizer(disc_run):
    m, f, r, gr = disc_run
    d = energy_split_check(r, gr, 0.3, f)
    assert d["energy_identity_gap"] < 1e-10
    assert 0 < d["energy_fraction_inside"] < 1
    assert d["lhs"] < d["total_energy"]
    with pytest.raises(BlowupError):
        energy_split_check(r, gr, 1e-4, f)


def test_diagnostics_export(tmp_path, disc_run):
    m, f, r, gr = disc_run
    d = rescale_and_compare(r, 1.0)
    j, c = export_diagnostics(d, tmp_path)
    s = json.loads(j.read_text())
    assert s["c_eps"] == pytest.approx(r.c_eps)
    assert len(c.read_text().splitlines()) == 1 + len(d.radii)


def test_certificate_closed_form(disc3):
    assert upper_bound_certificate(disc3, 0.0) == pytest.approx(math.pi + math.pi * math.e, abs=1e-12)
    t = TorusGrid(2.0, 8)
    assert upper_bound_certificate(t, -0.1) == pytest.approx(4.0 + math.pi * math.exp(1 - 0.4 * math.pi))
