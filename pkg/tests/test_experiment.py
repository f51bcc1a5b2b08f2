import json

import numpy as np
import pytest

from moserlab.experiment import (
    DEFAULTS,
    ConfigError,
    ExperimentConfig,
    RunRecord,
    env_overrides,
    load_records,
    run_experiment,
    summary_csv,
)
from moserlab.plots import emit_plots

SMALL = {
    "geometry": {"kind": "disc", "level": 2},
    "sweep": {"alphas": [0.0], "epsilons": [2.0, 1.0]},
    "solver": {"multistarts": 1},
    "spectrum": {"k": 2},
    "testfn": {"epsilon": 1e-3},
}


def small(**extra):
    over = json.loads(json.dumps(SMALL))
    for table, vals in extra.items():
        over.setdefault(table, {}).update(vals)
    return ExperimentConfig.load(environ={}, overrides=over)


@pytest.fixture(scope="module")
def sweep_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    recs = run_experiment(small(), out)
    return out, recs


def test_toml_load(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('[geometry]\nkind = "torus"\nn = 32\n\n[sweep]\nepsilons = [3.0, 1.5]\n')
    cfg = ExperimentConfig.load(p, environ={})
    assert cfg["geometry"]["kind"] == "torus"
    assert cfg["geometry"]["n"] == 32
    assert cfg["sweep"]["epsilons"] == [3.0, 1.5]
    # untouched keys keep their defaults
    assert cfg["solver"] == DEFAULTS["solver"]


@pytest.mark.parametrize(
    "table,key", [(t, k) for t, keys in sorted(DEFAULTS.items()) for k in sorted(keys)]
)
def test_every_key_has_env_override(table, key):
    env = {f"MOSERLAB_{table.upper()}__{key.upper()}": json.dumps(DEFAULTS[table][key])}
    assert env_overrides(env) == {table: {key: DEFAULTS[table][key]}}


def test_env_beats_toml_and_parses_json(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[solver]\ndamping = 0.9\n")
    env = {"MOSERLAB_SOLVER__DAMPING": "0.3", "MOSERLAB_OUTPUT__DIR": "runs/a", "OTHER": "1",
           "MOSERLAB_NOPE__X": "1"}
    cfg = ExperimentConfig.load(p, environ=env)
    assert cfg["solver"]["damping"] == 0.3
    assert cfg["output"]["dir"] == "runs/a"
    assert "nope" not in cfg.data


@pytest.mark.parametrize(
    "over",
    [
        {"geometry": {"kind": "sphere"}},
        {"sweep": {"epsilons": []}},
        {"sweep": {"epsilons": [1.0, 2.0]}},
        {"sweep": {"epsilons": [13.0]}},
        {"solver": {"damping": 1.5}},
        {"solver": {"multistarts": 0}},
        {"sweep": {"ell": -1}},
        {"spectrum": {"k": 0}},
        {"output": {"threads": 0}},
        {"testfn": {"epsilon": 0.2}},
        {"geometry": {"kind": "file"}},
    ],
)
def test_validation_rejects(over):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(environ={}, overrides=over)


def test_hash_is_stable_and_sensitive():
    assert small().hash() == small().hash()
    assert small().hash() != small(solver={"seed": 1}).hash()


def test_records_round_trip(sweep_dir):
    out, recs = sweep_dir
    assert [r.status for r in recs] == ["ok", "ok"]
    loaded = load_records(out)
    assert [r.to_dict() for r in loaded] == [json.loads(json.dumps(r.to_dict())) for r in recs]
    d = json.loads((out / "record_000.json").read_text())
    assert set(d) >= {"config_hash", "alpha", "epsilon", "status", "outputs", "timestamps", "code_version"}
    assert RunRecord.from_dict(d).to_dict() == d


def test_summary_csv(sweep_dir):
    out, recs = sweep_dir
    text = (out / "summary.csv").read_text()
    assert text == summary_csv(recs)
    rows = text.splitlines()
    assert rows[0].split(",")[:3] == ["alpha", "epsilon", "status"]
    assert len(rows) == 3
    cert = float(rows[1].split(",")[11])
    assert cert == pytest.approx(recs[0].outputs["certificate"])


def test_threads_do_not_change_output(tmp_path):
    a = run_experiment(small(), tmp_path / "a", threads=1)
    b = run_experiment(small(), tmp_path / "b", threads=2)
    assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()
    assert [r.outputs for r in a] == [r.outputs for r in b]


def test_failing_alpha_is_isolated(tmp_path):
    # the first Dirichlet eigenvalue of the unit disc is about 5.78; alpha = 50 is inadmissible
    recs = run_experiment(small(sweep={"alphas": [0.0, 50.0]}), tmp_path)
    status = {(r.alpha, r.epsilon): r.status for r in recs}
    assert status[(0.0, 2.0)] == "ok" and status[(0.0, 1.0)] == "ok"
    bad = [r for r in recs if r.alpha == 50.0]
    assert all(r.status == "error" and r.error for r in bad)
    assert len(load_records(tmp_path)) == 4


def test_plots_deterministic(sweep_dir, tmp_path):
    out, recs = sweep_dir
    p1 = emit_plots(recs, tmp_path / "p1")
    p2 = emit_plots(recs, tmp_path / "p2")
    for a, b in zip(p1, p2):
        assert a.read_bytes() == b.read_bytes()
    svg = p1[0].read_text()
    assert svg.startswith("<?xml")
    cert = recs[0].outputs["certificate"]
    assert f"<!-- certificate {cert:.4f} (alpha = 0) -->" in svg
    assert "<!-- unresolved_core: no resolved blow-up sample -->" not in p1[1].read_text() or all(
        r.outputs["blowup"]["unresolved_core"] for r in recs
    )


def test_profile_stub_when_unresolved(sweep_dir, tmp_path):
    _, recs = sweep_dir
    recs = [RunRecord.from_dict(r.to_dict()) for r in recs]
    for r in recs:
        r.outputs["blowup"]["unresolved_core"] = True
    from moserlab.plots import plot_profile

    a = plot_profile(recs, tmp_path / "a.svg").read_bytes()
    b = plot_profile([], tmp_path / "b.svg").read_bytes()
    assert a == b
    assert "<!-- unresolved_core: no resolved blow-up sample -->" in (tmp_path / "a.svg").read_text()


def test_nonfinite_values_stay_valid_json(sweep_dir):
    out, _ = sweep_dir
    for p in out.glob("record_*.json"):
        text = p.read_text()
        assert "NaN" not in text and "Infinity" not in text
        json.loads(text)


def test_records_carry_config_and_field_file(sweep_dir):
    out, recs = sweep_dir
    d = json.loads((out / "record_001.json").read_text())
    assert d["outputs"]["config"] == small().data
    m = d["outputs"]["maximizer"]
    assert set(m) >= {"value", "lambda_eps", "c_eps", "x_eps", "iterations", "residual", "field_file"}
    coeffs = np.loadtxt(out / m["field_file"])
    assert coeffs.shape == (recs[1].u_coeffs.size,)
    np.testing.assert_array_equal(coeffs, recs[1].u_coeffs)
    assert (out / "mesh.txt").exists()
