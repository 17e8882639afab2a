"""Command-line front end.

Subcommands: solve, certify, build-t0, probe-coercivity, geometry-check.
Each takes one or more line-oriented config files (``key = value`` with
dotted sections), writes a JSON report plus optional CSV field dumps and
PNG renderings under the output directory, and exits 0 on success, 2
when a solve succeeded but certification failed, 1 on any error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dual import duality_gap, extract_certificate, shift_membrane, DualOperator
from .grid import Grid, TensorField2x2, build_grid, div_tensor
from .loads import build_t0_plate, build_t0_shell, build_t_tilde
from .model import DiscreteModel, DisplacementField, Loads
from .plate import build_material, plate_model
from .shell import build_geometry, shell_material, shell_model, surface_catalogue
from .solver import coercivity_probe, solve

log = logging.getLogger("klcert")

SCHEMA_VERSION = 1

LOAD_KINDS = ("zero", "const", "sin-product", "gaussian")
SURFACES = ("plane", "cylinder", "sphere-patch", "paraboloid")
EDGE_KEYS = ("left", "right", "bottom", "top")


def _load_keys(name):
    return {
        f"loads.{name}.kind": (str, "zero"),
        f"loads.{name}.amplitude": (float, 0.0),
        f"loads.{name}.cx": (float, None),
        f"loads.{name}.cy": (float, None),
        f"loads.{name}.sigma": (float, None),
    }


SCHEMA = {
    "model": (str, "plate"),
    "grid.nx": (int, 33),
    "grid.ny": (int, 33),
    "grid.x0": (float, 0.0),
    "grid.x1": (float, 1.0),
    "grid.y0": (float, 0.0),
    "grid.y1": (float, 1.0),
    "grid.boundary": (str, "clamped"),
    **{f"grid.boundary.{e}": (str, None) for e in EDGE_KEYS},
    "material.E": (float, 1.0),
    "material.nu": (float, 0.3),
    "material.h": (float, 0.1),
    **_load_keys("P"),
    **_load_keys("P1"),
    **_load_keys("P2"),
    "shell.surface": (str, "plane"),
    "shell.R": (float, 1.0),
    "shell.a": (float, 0.5),
    "shell.b": (float, 0.5),
    "solver.gtol": (float, None),
    "solver.max_iter": (int, 5000),
    "solver.memory": (int, 10),
    "certificate.K": (float, None),
    "certificate.tol_gap": (float, 1e-6),
    "certificate.tol_res": (float, 1e-6),
    "certificate.manufactured_n": (str, "none"),
    "certificate.manufactured_n_amplitude": (float, 0.0),
    "probe.t_max": (float, 4.0),
    "probe.n_t": (int, 9),
    "probe.n_directions": (int, 3),
    "probe.seed": (int, 0),
}


class ConfigError(Exception):
    pass


@dataclass
class CaseConfig:
    values: dict
    path: str = ""

    def __getitem__(self, key):
        return self.values[key]


def parse_config(path) -> CaseConfig:
    """Line-oriented ``key = value`` parser with hard errors on unknown
    keys, carrying key names and line numbers in every message."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = {k: d for k, (_, d) in SCHEMA.items()}
    seen = {}
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r} at line {lineno}")
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} at line {lineno} (first at line {seen[key]})")
        seen[key] = lineno
        typ, _ = SCHEMA[key]
        try:
            values[key] = typ(val)
        except ValueError:
            raise ConfigError(f"key {key!r}: cannot parse {val!r} as {typ.__name__} at line {lineno}")
    _validate(values, seen)
    return CaseConfig(values, str(path))


def _validate(v, seen):
    def lineof(key):
        return seen.get(key, "default")

    if v["model"] not in ("plate", "shell"):
        raise ConfigError(f"model must be plate or shell at line {lineof('model')}")
    if v["grid.nx"] < 5 or v["grid.ny"] < 5:
        key = "grid.nx" if v["grid.nx"] < 5 else "grid.ny"
        raise ConfigError(f"{key} below stencil width (need >= 5) at line {lineof(key)}")
    if not (v["grid.x1"] > v["grid.x0"] and v["grid.y1"] > v["grid.y0"]):
        raise ConfigError("degenerate grid extents")
    if not (-1.0 < v["material.nu"] < 0.5):
        raise ConfigError(f"material.nu = {v['material.nu']} out of range (-1, 0.5) "
                          f"at line {lineof('material.nu')}")
    if v["material.E"] <= 0 or v["material.h"] <= 0:
        raise ConfigError("material.E and material.h must be positive")
    for name in ("P", "P1", "P2"):
        kind = v[f"loads.{name}.kind"]
        if kind not in LOAD_KINDS:
            raise ConfigError(f"loads.{name}.kind = {kind!r} not in {LOAD_KINDS} "
                              f"at line {lineof(f'loads.{name}.kind')}")
        if not np.isfinite(v[f"loads.{name}.amplitude"]):
            raise ConfigError(f"loads.{name}.amplitude must be finite")
    if v["shell.surface"] not in SURFACES:
        raise ConfigError(f"shell.surface = {v['shell.surface']!r} not in {SURFACES} "
                          f"at line {lineof('shell.surface')}")
    for e in EDGE_KEYS:
        tag = v[f"grid.boundary.{e}"]
        if tag is not None and tag not in ("clamped", "traction"):
            raise ConfigError(f"grid.boundary.{e} must be clamped or traction "
                              f"at line {lineof(f'grid.boundary.{e}')}")
    if v["certificate.manufactured_n"] not in ("none", "compress"):
        raise ConfigError("certificate.manufactured_n must be none or compress "
                          f"at line {lineof('certificate.manufactured_n')}")


# -- case assembly ------------------------------------------------------


def _eval_load(cfg, name, grid: Grid):
    kind = cfg[f"loads.{name}.kind"]
    amp = cfg[f"loads.{name}.amplitude"]
    X, Y = grid.X, grid.Y
    if kind == "zero" or amp == 0.0:
        return np.zeros_like(X)
    if kind == "const":
        return np.full_like(X, amp)
    lx, ly = grid.x1 - grid.x0, grid.y1 - grid.y0
    if kind == "sin-product":
        return amp * np.sin(np.pi * (X - grid.x0) / lx) * np.sin(np.pi * (Y - grid.y0) / ly)
    cx = cfg[f"loads.{name}.cx"]
    cy = cfg[f"loads.{name}.cy"]
    sig = cfg[f"loads.{name}.sigma"]
    cx = 0.5 * (grid.x0 + grid.x1) if cx is None else cx
    cy = 0.5 * (grid.y0 + grid.y1) if cy is None else cy
    sig = 0.15 * min(lx, ly) if sig is None else sig
    return amp * np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2.0 * sig * sig))


def build_case(cfg: CaseConfig):
    """Grid, model, loads (and geometry for shells) from a config."""
    spec = {e: (cfg[f"grid.boundary.{e}"] or cfg["grid.boundary"]) for e in EDGE_KEYS}
    grid = build_grid(
        (cfg["grid.x0"], cfg["grid.x1"], cfg["grid.y0"], cfg["grid.y1"]),
        cfg["grid.nx"], cfg["grid.ny"], spec,
    )
    geom = None
    if cfg["model"] == "shell":
        name = cfg["shell.surface"]
        params = {}
        if name in ("cylinder", "sphere-patch"):
            params["R"] = cfg["shell.R"]
        elif name == "paraboloid":
            params = {"a": cfg["shell.a"], "b": cfg["shell.b"]}
        geom = build_geometry(grid, surface_catalogue(name, **params))
        material = shell_material(geom, cfg["material.E"], cfg["material.nu"], cfg["material.h"])
        model = shell_model(grid, geom, material)
    else:
        material = build_material(cfg["material.E"], cfg["material.nu"], cfg["material.h"])
        model = plate_model(grid, material)
    loads = Loads(
        grid,
        P=_eval_load(cfg, "P", grid),
        P1=_eval_load(cfg, "P1", grid),
        P2=_eval_load(cfg, "P2", grid),
    )
    return grid, model, loads, geom


# -- output helpers -----------------------------------------------------


def _dump_csv(out_dir: Path, name, grid: Grid, values):
    path = out_dir / f"{name}.csv"
    with path.open("w") as fh:
        fh.write("x,y,value\n")
        for i in range(grid.nx):
            for j in range(grid.ny):
                fh.write(f"{grid.x[i]:.17g},{grid.y[j]:.17g},{values[i, j]:.17g}\n")
    return str(path)


def _dump_png(out_dir: Path, name, grid: Grid, values, title):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.pcolormesh(grid.X, grid.Y, values, shading="gouraud")
    fig.colorbar(im, ax=ax)
    ax.set_title(title)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    path = out_dir / f"{name}.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def _write_report(report, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "report.json"
    path.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    return str(path)


def _dump_state_fields(out_dir, grid, state, dumps, extra=None):
    u = DisplacementField.from_flat(grid, state)
    for name, vals in (("w", u.w), ("u1", u.u1), ("u2", u.u2), *(extra or [])):
        dumps.append(_dump_csv(out_dir, name, grid, vals))


# -- subcommand bodies --------------------------------------------------


def _solver_result(cfg, model, loads):
    return solve(
        model, loads,
        gtol=cfg["solver.gtol"],
        max_iter=cfg["solver.max_iter"],
        memory=cfg["solver.memory"],
    )


def _solve_report(cfg, grid, model, loads, res):
    e = model.energy(res.u_star, loads)
    return {
        "energies": {"G1": e.G1, "G2": e.G2, "F1": e.F1, "J": e.J},
        "solver": {
            "converged": bool(res.converged),
            "iterations": int(res.iterations),
            "grad_norm": res.grad_norm,
            "J_star": res.J_star,
        },
        "max_deflection": float(np.max(np.abs(res.u_star[2 * model.n:]))),
    }


def cmd_solve(cfg, out_dir, dump_fields):
    grid, model, loads, _ = build_case(cfg)
    res = _solver_result(cfg, model, loads)
    report = _solve_report(cfg, grid, model, loads, res)
    figures = [_dump_png(out_dir, "w", grid,
                         DisplacementField.from_flat(grid, res.u_star).w, "deflection w")]
    dumps = []
    if dump_fields:
        _dump_state_fields(out_dir, grid, res.u_star, dumps)
    report["figures"] = figures
    report["field_dumps"] = dumps
    return report, (0 if res.converged else 1)


def cmd_certify(cfg, out_dir, dump_fields):
    grid, model, loads, _ = build_case(cfg)
    tol_res = cfg["certificate.tol_res"]
    tol_gap = cfg["certificate.tol_gap"]

    if cfg["certificate.manufactured_n"] == "compress":
        # manufactured uniformly compressive membrane field, no solve:
        # probes the buckling-scale failure of condition A4
        amp = cfg["certificate.manufactured_n_amplitude"]
        N = np.zeros((grid.nx, grid.ny, 2, 2))
        N[..., 0, 0] = -amp
        N[..., 1, 1] = -amp
        K = cfg["certificate.K"]
        from .dual import auto_shift, check_A4

        K = auto_shift(N) if K is None else K
        shift = shift_membrane(grid, N, K)
        lam4 = check_A4(model, N, K) if shift.in_A3 else float("nan")
        certified = shift.in_A3 and lam4 > 0
        verdict = "certified-membrane-field" if certified else (
            "not-certified: A4 failed" if shift.in_A3 else "not-certified: A3 failed")
        report = {
            "certificate": {
                "K": K,
                "lambda_min_A3": shift.lambda_min,
                "in_A3": bool(shift.in_A3),
                "lambda_min_A4": lam4,
            },
            "verdict": verdict,
            "figures": [],
            "field_dumps": [],
        }
        return report, (0 if certified else 2)

    res = _solver_result(cfg, model, loads)
    report = _solve_report(cfg, grid, model, loads, res)
    cert = extract_certificate(model, res.u_star, loads, K=cfg["certificate.K"])
    gap = duality_gap(model, res.u_star, cert, loads)
    J = report["energies"]["J"]
    gap_ok = abs(gap) <= tol_gap * (1.0 + abs(J))
    feas_ok = cert.verifies(loads.scale(), tol_res)
    certified = bool(res.converged and gap_ok and feas_ok)
    reasons = []
    if not res.converged:
        reasons.append("solver not converged")
    if cert.residual_A1 > tol_res * loads.scale():
        reasons.append("A1 residual")
    if cert.residual_A2 > tol_res * loads.scale():
        reasons.append("A2 residual")
    if not cert.in_A3:
        reasons.append("A3 failed")
    if not (cert.lambda_min_A4 > 0):
        reasons.append("A4 failed")
    if not gap_ok:
        reasons.append("gap above tolerance")
    report["certificate"] = {
        "K": cert.K,
        "residual_A1": cert.residual_A1,
        "residual_A2": cert.residual_A2,
        "lambda_min_A3": cert.lambda_min_A3,
        "in_A3": bool(cert.in_A3),
        "lambda_min_A4": cert.lambda_min_A4,
        "dual_value": cert.dual_value,
        "gap": gap,
        "load_scale": loads.scale(),
    }
    report["verdict"] = "certified-global" if certified else "not-certified: " + "; ".join(reasons)
    u = DisplacementField.from_flat(grid, res.u_star)
    report["figures"] = [
        _dump_png(out_dir, "w", grid, u.w, "deflection w"),
        _dump_png(out_dir, "N11", grid, cert.N[..., 0, 0], "membrane force N11"),
    ]
    dumps = []
    if dump_fields:
        _dump_state_fields(out_dir, grid, res.u_star, dumps, extra=[
            ("N11", cert.N[..., 0, 0]), ("N22", cert.N[..., 1, 1]), ("N12", cert.N[..., 0, 1]),
            ("Q1", cert.Q[..., 0]), ("Q2", cert.Q[..., 1]),
            ("zstar1", cert.zstar[..., 0]), ("zstar2", cert.zstar[..., 1]),
        ])
    report["field_dumps"] = dumps
    return report, (0 if certified else 2)


def cmd_build_t0(cfg, out_dir, dump_fields):
    grid, model, loads, geom = build_case(cfg)
    tt = build_t_tilde(grid, loads.P1, loads.P2)
    if geom is None or geom.is_flat:
        t0 = build_t0_plate(grid, loads.P1, loads.P2)
    else:
        t0 = build_t0_shell(grid, loads.P1, loads.P2, geom)
    interior = grid.interior_mask

    def div_residual(t):
        d = div_tensor(t).values
        r = d + np.stack([loads.P1, loads.P2], axis=-1)
        return float(np.max(np.abs(r[interior])))

    report = {
        "t_tilde": {
            "div_residual": div_residual(tt),
            "lambda_min": float(np.min(np.linalg.eigvalsh(tt.values))),
        },
        "t0": {
            "div_residual": div_residual(t0) if (geom is None or geom.is_flat) else None,
            "norm": float(np.sqrt(np.sum(
                grid.quad_weights[..., None, None] * t0.values ** 2))),
        },
        "figures": [],
    }
    dumps = []
    if dump_fields:
        for nm, t in (("t_tilde", tt), ("t0", t0)):
            for (a, b) in ((0, 0), (0, 1), (1, 0), (1, 1)):
                dumps.append(_dump_csv(out_dir, f"{nm}_{a+1}{b+1}", grid, t.values[..., a, b]))
    report["field_dumps"] = dumps
    return report, 0


def cmd_probe_coercivity(cfg, out_dir, dump_fields):
    grid, model, loads, geom = build_case(cfg)
    if geom is None or geom.is_flat:
        t0 = build_t0_plate(grid, loads.P1, loads.P2)
    else:
        t0 = build_t0_shell(grid, loads.P1, loads.P2, geom)
    rng = np.random.default_rng(cfg["probe.seed"])
    free = grid.boundary_tags == 0
    dirs = []
    for _ in range(cfg["probe.n_directions"]):
        q = np.zeros(3 * model.n)
        w = rng.standard_normal((grid.nx, grid.ny)) * free
        q[2 * model.n:] = grid.flat(w / (np.max(np.abs(w)) + 1e-300))
        dirs.append(q)
    t_list = np.linspace(0.5, cfg["probe.t_max"], cfg["probe.n_t"])
    probe = coercivity_probe(model, t0.values, loads, dirs, t_list)
    report = {
        "t": [float(t) for t in probe["t"]],
        "values": [[float(v) for v in row] for row in probe["values"]],
        "direction_flags": [bool(f) for f in probe["direction_flags"]],
        "coercive_along_sample": probe["coercive_along_sample"],
        "figures": [],
        "field_dumps": [],
    }
    return report, 0


def cmd_geometry_check(cfg, out_dir, dump_fields):
    grid, model, loads, geom = build_case(cfg)
    if geom is None:
        raise ConfigError("geometry-check needs model = shell")
    ai = np.einsum("xyab,xybc->xyac", geom.a_inv, geom.a)
    ident_err = float(np.max(np.abs(ai - np.eye(2))))
    gauss = (geom.b[..., 0, 0] * geom.b[..., 1, 1] - geom.b[..., 0, 1] ** 2) / (
        geom.a[..., 0, 0] * geom.a[..., 1, 1] - geom.a[..., 0, 1] ** 2)
    report = {
        "surface": cfg["shell.surface"],
        "metric_identity_error": ident_err,
        "normal_norm_error": float(np.max(np.abs(
            np.linalg.norm(geom.normal, axis=-1) - 1.0))),
        "sqrt_a_min": float(np.min(geom.sqrt_a)),
        "gauss_curvature_min": float(np.min(gauss)),
        "gauss_curvature_max": float(np.max(gauss)),
        "figures": [],
        "field_dumps": [],
    }
    if dump_fields:
        report["field_dumps"].append(_dump_csv(out_dir, "gauss_curvature", grid, gauss))
    return report, 0


COMMANDS = {
    "solve": cmd_solve,
    "certify": cmd_certify,
    "build-t0": cmd_build_t0,
    "probe-coercivity": cmd_probe_coercivity,
    "geometry-check": cmd_geometry_check,
}


def _run_one(command, cfg_path, out_dir, dump_fields):
    t0 = time.monotonic()
    try:
        cfg = parse_config(cfg_path)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report, code = COMMANDS[command](cfg, out, dump_fields)
        report["schema_version"] = SCHEMA_VERSION
        report["tool_version"] = __version__
        report["command"] = command
        report["config"] = {"path": str(cfg_path),
                            "values": {k: v for k, v in sorted(cfg.values.items())}}
        path = _write_report(report, out)
        log.info("%s %s: wall time %.2f s", command, cfg_path, time.monotonic() - t0)
        verdict = report.get("verdict", "ok")
        print(f"{command} {cfg_path}: {verdict} (report: {path})")
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # propagate module errors as exit 1
        log.debug("failure detail", exc_info=True)
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1


def main(argv=None):
    levels = {"quiet": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(
        level=levels.get(os.environ.get("KL_LOG", "quiet"), logging.ERROR),
        format="%(levelname)s %(name)s: %(message)s",
    )
    ap = argparse.ArgumentParser(prog="kl", description=__doc__)
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("configs", nargs="+", help="case config file(s)")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--dump-fields", action="store_true", help="write CSV field dumps")
    ap.add_argument("--jobs", type=int, default=1, help="concurrent cases")
    args = ap.parse_args(argv)

    if len(args.configs) == 1:
        return _run_one(args.command, args.configs[0], args.out, args.dump_fields)

    outs = [str(Path(args.out) / Path(c).stem) for c in args.configs]
    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as ex:
            codes = list(ex.map(_run_one, [args.command] * len(args.configs),
                                args.configs, outs,
                                [args.dump_fields] * len(args.configs)))
    else:
        codes = [_run_one(args.command, c, o, args.dump_fields)
                 for c, o in zip(args.configs, outs)]
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
