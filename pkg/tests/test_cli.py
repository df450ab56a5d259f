from __future__ import annotations

import json

import numpy as np
import pytest

from markovproj import io as fmt
from markovproj.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, EXIT_TOLERANCE, main
from markovproj.config import derive_seed


def _write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def _run(tmp_path, command, doc, *extra, out="out"):
    cfg = _write(tmp_path, doc)
    outdir = tmp_path / out
    return main([command, "--config", str(cfg), "--out", str(outdir), *extra]), outdir


def _summary(outdir):
    return np.loadtxt(outdir / "summary.csv", delimiter=",", skiprows=1, ndmin=2)


@pytest.mark.slow
def test_simulate_brownian_variance(tmp_path):
    doc = {"version": 1, "seed": 11, "model": {"name": "brownian"}, "grid": {"t_end": 1.0, "n_steps": 4},
           "n_paths": 1_000_000, "checkpoints": [0.5, 1.0]}
    code, out = _run(tmp_path, "simulate", doc)
    assert code == EXIT_OK
    rows = _summary(out)
    assert rows[-1, 0] == 1.0
    assert 0.99 <= rows[-1, 2] <= 1.01
    assert 0.495 <= rows[0, 2] <= 0.505


def test_simulate_zero_dynamics_constant(tmp_path):
    doc = {"version": 1, "seed": 3, "model": {"name": "zero", "params": {"x0": 2.5}},
           "grid": {"t_end": 1.0, "n_steps": 10}, "n_paths": 1000, "checkpoints": [0.1, 0.5, 1.0],
           "output": {"dump_ensemble": True}}
    code, out = _run(tmp_path, "simulate", doc)
    assert code == EXIT_OK
    rows = _summary(out)
    np.testing.assert_array_equal(rows[:, 1:], np.tile([2.5, 0.0, 0.0, 0.0], (3, 1)))
    ens = fmt.load_ensemble(out / "ensemble.bin")
    assert ens.n_paths == 1000
    assert np.all(ens.values == 2.5)


def test_negative_intensity_is_config_error(tmp_path, capsys):
    doc = {"version": 1, "seed": 1, "model": {"name": "compound-poisson", "params": {"intensity": -1.0}},
           "grid": {"t_end": 1.0, "n_steps": 4}}
    code, out = _run(tmp_path, "simulate", doc)
    assert code == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "intensity" in err
    assert "model.params.intensity" in err
    assert not (out / "manifest.json").exists()


@pytest.mark.parametrize("doc, field", [
    ({"version": 2, "seed": 1, "model": {"name": "zero"}, "grid": {"t_end": 1, "n_steps": 2}}, "version"),
    ({"version": 1, "seed": 1, "model": {"name": "nope"}, "grid": {"t_end": 1, "n_steps": 2}}, "model.name"),
    ({"version": 1, "seed": 1, "model": {"name": "zero"}, "grid": {"t_end": 1, "n_steps": 0}}, "grid.n_steps"),
    ({"version": 1, "seed": 1, "model": {"name": "zero"}, "grid": {"t_end": 1, "n_steps": 2}, "extra": 1}, "extra"),
])
def test_schema_errors_name_the_field(tmp_path, capsys, doc, field):
    code, _ = _run(tmp_path, "simulate", doc)
    assert code == EXIT_CONFIG
    assert field in capsys.readouterr().err


def test_unreadable_and_malformed_config(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "JSON" in capsys.readouterr().err


def test_checkpoint_off_grid_is_config_error(tmp_path):
    doc = {"version": 1, "seed": 1, "model": {"name": "zero"}, "grid": {"t_end": 1.0, "n_steps": 4},
           "checkpoints": [0.3]}
    code, _ = _run(tmp_path, "simulate", doc)
    assert code == EXIT_CONFIG


def test_numeric_failure_exit_code(tmp_path, capsys):
    doc = {"version": 1, "seed": 1, "model": {"name": "brownian", "params": {"sigma": 1e308}},
           "grid": {"t_end": 1.0, "n_steps": 4}, "n_paths": 100}
    code, _ = _run(tmp_path, "simulate", doc)
    assert code == EXIT_NUMERIC
    err = capsys.readouterr().err
    assert "simulate" in err and "non-finite" in err


def _brownian_mimic(**over):
    doc = {"version": 1, "seed": 5, "model": {"name": "brownian"}, "grid": {"t_end": 1.0, "n_steps": 20},
           "n_paths": 20_000, "checkpoints": [0.5, 1.0], "projection": {"z_grid": {"lo": -5, "hi": 5, "n": 101}},
           "pide": {"x_grid": {"lo": -6, "hi": 6, "n": 601}, "dt": 0.005}, "verification": {"route": "both"},
           "tolerances": {"ks": 0.05, "route_agreement": 0.05}}
    doc.update(over)
    return doc


def test_mimic_outputs_and_tolerance_exit(tmp_path, capsys):
    code, out = _run(tmp_path, "mimic", _brownian_mimic())
    assert code == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["passed"] and set(report["routes"]) == {"pide", "resimulate", "exact"}
    for name in ("coefficients.csv", "coefficients.json", "report_pide.csv", "report_resimulate.csv",
                 "density.csv", "pide_diagnostics.json", "manifest.json"):
        assert (out / name).exists()
    rows = fmt.load_report_csv(out / "report_resimulate.csv")
    np.testing.assert_allclose(rows[:, 0], [0.5, 1.0])

    code, _ = _run(tmp_path, "mimic", _brownian_mimic(tolerances={"ks": 1e-9}), out="strict")
    assert code == EXIT_TOLERANCE
    assert "tolerance exceeded" in capsys.readouterr().err
    manifest = json.loads((tmp_path / "strict" / "manifest.json").read_text())
    assert manifest["exit_code"] == EXIT_TOLERANCE


def test_reports_are_byte_identical_and_manifest(tmp_path):
    doc = _brownian_mimic(n_paths=5000)
    code_a, a = _run(tmp_path, "mimic", doc, out="a")
    code_b, b = _run(tmp_path, "mimic", doc, "--threads", "3", out="b")
    assert code_a == code_b == EXIT_OK
    for name in ("report.json", "report_pide.csv", "report_resimulate.csv", "coefficients.json", "density.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["seed"] == 5
    assert manifest["stage_seeds"]["source"] == derive_seed(5, "source")
    assert len(manifest["config_sha256"]) == 64
    assert {"numpy", "scipy", "markovproj", "python"} <= set(manifest["versions"])
    assert manifest["wall_time_s"] >= 0
    assert json.loads((b / "manifest.json").read_text())["threads"] == 3


def test_seed_flag_overrides_config(tmp_path):
    doc = {"version": 1, "seed": 1, "model": {"name": "brownian"}, "grid": {"t_end": 1.0, "n_steps": 4},
           "n_paths": 2000}
    _, a = _run(tmp_path, "simulate", doc, out="a")
    _, b = _run(tmp_path, "simulate", doc, "--seed", "2", out="b")
    _, c = _run(tmp_path, "simulate", dict(doc, seed=2), out="c")
    assert (a / "summary.csv").read_bytes() != (b / "summary.csv").read_bytes()
    assert (b / "summary.csv").read_bytes() == (c / "summary.csv").read_bytes()
    assert json.loads((b / "manifest.json").read_text())["seed"] == 2


def test_bad_threads_flag(tmp_path):
    doc = {"version": 1, "seed": 1, "model": {"name": "zero"}, "grid": {"t_end": 1.0, "n_steps": 2}}
    code, _ = _run(tmp_path, "simulate", doc, "--threads", "0")
    assert code == EXIT_CONFIG


def test_project_and_pide_commands(tmp_path):
    doc = {"version": 1, "seed": 2, "model": {"name": "ou2-sum"}, "grid": {"t_end": 1.0, "n_steps": 20},
           "projection": {"route": "closed-form", "z_grid": {"lo": -4, "hi": 4, "n": 41}},
           "pide": {"x_grid": {"lo": -5, "hi": 5, "n": 401}, "dt": 0.005}}
    code, out = _run(tmp_path, "project", doc)
    assert code == EXIT_OK
    coeffs = fmt.load_coefficients_json(out / "coefficients.json")
    central = np.abs(coeffs.z) <= 2
    np.testing.assert_allclose(coeffs.b[1:, central], -coeffs.z[central] * np.ones((coeffs.b.shape[0] - 1, 1)),
                               atol=1e-6)
    code, out = _run(tmp_path, "pide", doc, out="pide")
    assert code == EXIT_OK
    diag = json.loads((out / "pide_diagnostics.json").read_text())
    assert diag["format"] == "pide-diagnostics" and diag["scheme"] == "imex"
    assert abs(diag["mass_trace"][-1] - 1.0) <= 1e-3
    field_ = fmt.load_density_csv(out / "density.csv")
    assert field_.times[-1] == pytest.approx(1.0)


def test_audit_brownian_passes(tmp_path, capsys):
    doc = {"version": 1, "seed": 1, "model": {"name": "brownian"}, "grid": {"t_end": 1.0, "n_steps": 10},
           "audit": {"n_paths": 500}}
    code, out = _run(tmp_path, "audit", doc)
    assert code == EXIT_OK
    report = json.loads((out / "audit.json").read_text())
    assert report["format"] == "assumption-audit" and report["passed"]
    assert "FAIL" not in capsys.readouterr().out


def test_audit_pure_jump_fails_assumption_3(tmp_path, capsys):
    doc = {"version": 1, "seed": 1, "model": {"name": "compound-poisson", "params": {"sigma": 0.0}},
           "grid": {"t_end": 1.0, "n_steps": 10}, "audit": {"n_paths": 500}}
    code, out = _run(tmp_path, "audit", doc)
    assert code == EXIT_OK
    checks = {c["name"]: c for c in json.loads((out / "audit.json").read_text())["checks"]}
    assert checks["non-degeneracy"]["passed"] is False
    assert "Assumption 3" in checks["non-degeneracy"]["assumption"] + checks["non-degeneracy"]["note"]
    assert "Assumption 3" in capsys.readouterr().out


def test_audit_laplace_tail_schedule(tmp_path):
    radii = [1.0, 2.0, 4.0, 8.0]
    doc = {"version": 1, "seed": 1,
           "model": {"name": "compound-poisson", "params": {"law": "laplace", "scale": 1.0, "sigma": 1.0}},
           "grid": {"t_end": 1.0, "n_steps": 10}, "audit": {"n_paths": 200, "tail_radii": radii}}
    code, out = _run(tmp_path, "audit", doc)
    assert code == EXIT_OK
    checks = {c["name"]: c for c in json.loads((out / "audit.json").read_text())["checks"]}
    np.testing.assert_allclose(checks["tail-decay"]["measured"]["tail_mass"], np.exp(-np.array(radii)),
                               rtol=0, atol=1e-8)


def test_audit_is_deterministic(tmp_path):
    doc = {"version": 1, "seed": 9, "model": {"name": "local-vol"}, "grid": {"t_end": 1.0, "n_steps": 10},
           "audit": {"n_paths": 300, "target": "projected"}, "projection": {"z_grid": {"lo": -1, "hi": 1, "n": 21}}}
    _, a = _run(tmp_path, "audit", doc, out="a")
    _, b = _run(tmp_path, "audit", doc, out="b")
    assert (a / "audit.json").read_bytes() == (b / "audit.json").read_bytes()
