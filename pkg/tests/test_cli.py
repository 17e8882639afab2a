"""Config parsing and the command-line front end."""

import json
import subprocess
import sys

import pytest

from klcert.cli import ConfigError, build_case, main, parse_config

LINEAR_PLATE = """\
model = plate
grid.nx = 17
grid.ny = 17
material.E = 1.0
material.nu = 0.3
material.h = 0.1
loads.P.kind = sin-product
loads.P.amplitude = 1e-4
"""


def _write(tmp_path, text, name="case.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# -- parsing ---------------------------------------------------------------


def test_parse_minimal_config_fills_defaults(tmp_path):
    cfg = parse_config(_write(tmp_path, "model = plate\n"))
    assert cfg["grid.nx"] == 33
    assert cfg["material.nu"] == 0.3
    assert cfg["loads.P.kind"] == "zero"
    assert cfg["solver.max_iter"] == 5000


def test_parse_comments_and_blank_lines(tmp_path):
    cfg = parse_config(_write(tmp_path, "# a comment\n\ngrid.nx = 9  # trailing\n"))
    assert cfg["grid.nx"] == 9


def test_nu_out_of_range_message(tmp_path):
    path = _write(tmp_path, "model = plate\nmaterial.nu = 0.7\n")
    with pytest.raises(ConfigError, match=r"out of range \(-1, 0.5\) at line 2"):
        parse_config(path)


def test_unknown_key_with_line_number(tmp_path):
    path = _write(tmp_path, "model = plate\ngrid.nz = 3\n")
    with pytest.raises(ConfigError, match="unknown key 'grid.nz' at line 2"):
        parse_config(path)


def test_duplicate_key(tmp_path):
    path = _write(tmp_path, "grid.nx = 9\ngrid.nx = 17\n")
    with pytest.raises(ConfigError, match="duplicate key 'grid.nx' at line 2"):
        parse_config(path)


def test_type_error_with_line_number(tmp_path):
    path = _write(tmp_path, "grid.nx = many\n")
    with pytest.raises(ConfigError, match="cannot parse 'many' as int at line 1"):
        parse_config(path)


def test_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        parse_config("/nonexistent/case.cfg")


def test_stencil_width_validation(tmp_path):
    path = _write(tmp_path, "grid.nx = 3\n")
    with pytest.raises(ConfigError, match="stencil width"):
        parse_config(path)


def test_shell_config(tmp_path):
    cfg = parse_config(_write(tmp_path, "model = shell\nshell.surface = cylinder\nshell.R = 2.0\n"))
    assert cfg["model"] == "shell"
    assert cfg["shell.R"] == 2.0
    grid, model, loads, geom = build_case(cfg)
    assert geom is not None and not geom.is_flat


def test_unknown_load_kind(tmp_path):
    path = _write(tmp_path, "loads.P.kind = ramp\n")
    with pytest.raises(ConfigError, match="loads.P.kind"):
        parse_config(path)


# -- subcommands -------------------------------------------------------------


def test_solve_command(tmp_path):
    cfg = _write(tmp_path, LINEAR_PLATE)
    out = tmp_path / "out"
    code = main(["solve", cfg, "--out", str(out)])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["schema_version"] == 1
    assert report["solver"]["converged"]
    assert report["energies"]["J"] < 0.0
    assert (out / "w.png").is_file()


def test_certify_command_linear_regime(tmp_path):
    cfg = _write(tmp_path, LINEAR_PLATE)
    out = tmp_path / "out"
    code = main(["certify", cfg, "--out", str(out), "--dump-fields"])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["verdict"] == "certified-global"
    c = report["certificate"]
    J = report["energies"]["J"]
    assert abs(c["gap"]) <= 1e-6 * (1.0 + abs(J))
    assert c["in_A3"] and c["lambda_min_A4"] > 0.0
    assert c["residual_A1"] <= 1e-6 * c["load_scale"]
    assert c["residual_A2"] <= 1e-6 * c["load_scale"]
    assert (out / "w.csv").is_file()
    assert (out / "N11.csv").is_file()


def test_certify_manufactured_compression_exit_2(tmp_path):
    cfg = _write(tmp_path, LINEAR_PLATE
                 + "certificate.manufactured_n = compress\n"
                 + "certificate.manufactured_n_amplitude = 1e-2\n")
    out = tmp_path / "out"
    code = main(["certify", cfg, "--out", str(out)])
    assert code == 2
    report = json.loads((out / "report.json").read_text())
    assert report["verdict"] == "not-certified: A4 failed"
    assert report["certificate"]["lambda_min_A4"] < 0.0


def test_build_t0_command(tmp_path):
    cfg = _write(tmp_path, "grid.nx = 17\ngrid.ny = 17\n"
                 "loads.P1.kind = sin-product\nloads.P1.amplitude = 1.0\n")
    out = tmp_path / "out"
    code = main(["build-t0", cfg, "--out", str(out)])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["t_tilde"]["lambda_min"] > 0.0
    assert report["t0"]["div_residual"] < 1e-9


def test_probe_coercivity_command(tmp_path):
    cfg = _write(tmp_path, LINEAR_PLATE + "probe.n_directions = 2\n")
    out = tmp_path / "out"
    code = main(["probe-coercivity", cfg, "--out", str(out)])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert len(report["direction_flags"]) == 2


def test_geometry_check_command(tmp_path):
    cfg = _write(tmp_path, "model = shell\nshell.surface = sphere-patch\nshell.R = 2.0\n"
                 "grid.nx = 17\ngrid.ny = 17\ngrid.x0 = -0.5\ngrid.x1 = 0.5\n")
    out = tmp_path / "out"
    code = main(["geometry-check", cfg, "--out", str(out)])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["metric_identity_error"] <= 1e-12
    assert report["gauss_curvature_max"] == pytest.approx(0.25, abs=1e-8)


def test_config_error_exit_1(tmp_path):
    cfg = _write(tmp_path, "material.nu = 0.9\n")
    assert main(["solve", cfg, "--out", str(tmp_path / "out")]) == 1


def test_batch_jobs(tmp_path):
    c1 = _write(tmp_path, LINEAR_PLATE, "a.cfg")
    c2 = _write(tmp_path, LINEAR_PLATE, "b.cfg")
    out = tmp_path / "out"
    code = main(["solve", c1, c2, "--out", str(out), "--jobs", "2"])
    assert code == 0
    assert (out / "a" / "report.json").is_file()
    assert (out / "b" / "report.json").is_file()


def test_console_entry_point(tmp_path):
    cfg = _write(tmp_path, "grid.nx = 9\ngrid.ny = 9\n")
    out = tmp_path / "out"
    proc = subprocess.run(
        [sys.executable, "-m", "klcert.cli", "build-t0", cfg, "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "report" in proc.stdout
