"""Command-line front end: ``cso <command> --config run.json [--out DIR]``.

A run configuration is a JSON object. Recognized keys (all optional)::

    {
      "name": "p1_e11",
      "problem": "P1",                      # P1 | P2
      "equation": "reaction_neumann",       # or "poisson_dirichlet"
      "mesh_file": null,                    # .node/.ele stem; overrides "ellipsoid"
      "ellipsoid": {"a": 1.0, "b": 1.0, "level": 3, "half": false,
                    "center": [0, 0, 0], "squared_axes": false},
      "elasticity": {"E": 0.5, "nu": 0.2, "delta": 0.5},
      "tolerances": {"qp_tol": 1e-8, ...},  # any field of cso.config.Tolerances
      "eps_stop": 1e-4, "relative_stop": true, "max_iter": 200,
      "t0": 1.0, "quality_factor": 0.1, "post_process": true,
      "interpolation": {"function": "hemisphere", "n": 8, "radius": 0.9,
                        "vtk_quadratic": true},
      "seed": 0,
      "out": "runs/p1_e11"
    }

``--out`` overrides ``out``. The environment variable ``CSO_THREADS`` caps
the number of BLAS/OpenMP worker threads.
"""

from __future__ import annotations

import os

_threads = os.environ.get("CSO_THREADS")
if _threads:
    # must happen before numpy loads its BLAS
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from cso import dconvex, fem, isoconvex, shapeopt
from cso.config import DEFAULT, Tolerances
from cso.errors import ConfigError, CsoError
from cso.io import read_mesh, write_mesh, write_vtk
from cso.mesh import EllipsoidSpec, TetMesh, generate_ellipsoid_mesh

log = logging.getLogger("cso")

COMMANDS = ("mesh", "solve", "check-convexity", "interpolate-convex", "optimize", "report")
REPORT_COLUMNS = ["name", "J(Omega0)", "J(Omega)", "|Omega0|", "|Omega|", "tau", "max C", "k"]
SUMMARY_FILE = "summary.json"
LOG_FILE = "iterations.csv"
INTERPOLANTS = ("hemisphere", "paraboloid")


@dataclass(frozen=True)
class InterpolationConfig:
    function: str = "hemisphere"
    n: int = 8
    radius: float = 0.9
    vtk_quadratic: bool = True


@dataclass(frozen=True)
class RunConfig:
    name: str = "run"
    problem: str = "P1"
    equation: str = fem.REACTION_NEUMANN
    mesh_file: str | None = None
    ellipsoid: EllipsoidSpec = field(default_factory=EllipsoidSpec)
    elasticity: shapeopt.ElasticityParams = field(default_factory=shapeopt.ElasticityParams)
    tolerances: Tolerances = DEFAULT
    eps_stop: float = 1e-4
    relative_stop: bool = True
    max_iter: int = 200
    t0: float = 1.0
    quality_factor: float = 0.1
    post_process: bool = True
    interpolation: InterpolationConfig = field(default_factory=InterpolationConfig)
    seed: int = 0
    out: str = "out"

    def state_problem(self) -> fem.StateProblem:
        return fem.StateProblem(self.equation, fem.FORCINGS[self.problem]())


def _check_keys(section: str, data: dict, allowed) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected an object")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"{section}: unknown field(s) {', '.join(unknown)}")


def _number(section: str, key: str, value, positive=False, integer=False, lo=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"{section}{key}: expected a finite number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(f"{section}{key}: expected an integer, got {value!r}")
    if positive and value <= 0:
        raise ConfigError(f"{section}{key} must be positive, got {value!r}")
    if lo is not None and value < lo:
        raise ConfigError(f"{section}{key} must be >= {lo}, got {value!r}")
    return int(value) if integer else float(value)


def _bool(key: str, value) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{key}: expected true or false, got {value!r}")
    return value


def parse_config(data: dict) -> RunConfig:
    """Validate a decoded JSON object; errors name the offending field."""
    names = {f.name for f in fields(RunConfig)}
    _check_keys("config", data, names)
    kw = {}
    for key in ("name", "out"):
        if key in data:
            if not isinstance(data[key], str) or not data[key]:
                raise ConfigError(f"{key}: expected a non-empty string")
            kw[key] = data[key]
    if "problem" in data:
        if data["problem"] not in fem.FORCINGS:
            raise ConfigError(f"problem: expected one of {sorted(fem.FORCINGS)}, got {data['problem']!r}")
        kw["problem"] = data["problem"]
    if "equation" in data:
        if data["equation"] not in fem.EQUATIONS:
            raise ConfigError(f"equation: expected one of {list(fem.EQUATIONS)}, got {data['equation']!r}")
        kw["equation"] = data["equation"]
    if data.get("mesh_file") is not None:
        if not isinstance(data["mesh_file"], str):
            raise ConfigError("mesh_file: expected a path string")
        kw["mesh_file"] = data["mesh_file"]

    if "ellipsoid" in data:
        e = data["ellipsoid"]
        _check_keys("ellipsoid", e, {f.name for f in fields(EllipsoidSpec)})
        ek = {}
        for key in ("a", "b"):
            if key in e:
                ek[key] = _number("ellipsoid.", key, e[key], positive=True)
        if "level" in e:
            ek["level"] = _number("ellipsoid.", "level", e["level"], integer=True, lo=0)
        for key in ("half", "squared_axes"):
            if key in e:
                ek[key] = _bool(f"ellipsoid.{key}", e[key])
        if "center" in e:
            c = e["center"]
            if not isinstance(c, list) or len(c) != 3:
                raise ConfigError("ellipsoid.center: expected a list of 3 numbers")
            ek["center"] = tuple(_number("ellipsoid.", "center", v) for v in c)
        kw["ellipsoid"] = EllipsoidSpec(**ek)

    if "elasticity" in data:
        e = data["elasticity"]
        _check_keys("elasticity", e, {"E", "nu", "delta"})
        ek = {k: _number("elasticity.", k, v) for k, v in e.items()}
        if "nu" in ek and not 0.0 <= ek["nu"] < 0.5:
            raise ConfigError("elasticity.nu: nu out of range [0, 0.5)")
        for k in ("E", "delta"):
            if k in ek and ek[k] <= 0:
                raise ConfigError(f"elasticity.{k} must be positive, got {ek[k]!r}")
        kw["elasticity"] = shapeopt.ElasticityParams(**ek)

    if "tolerances" in data:
        t = data["tolerances"]
        tf = {f.name: f.type for f in fields(Tolerances)}
        _check_keys("tolerances", t, tf)
        tk = {}
        for k, v in t.items():
            integer = isinstance(getattr(DEFAULT, k), int)
            tk[k] = _number("tolerances.", k, v, positive=True, integer=integer)
        kw["tolerances"] = replace(DEFAULT, **tk)

    for key in ("eps_stop", "t0", "quality_factor"):
        if key in data:
            kw[key] = _number("", key, data[key], positive=key != "quality_factor", lo=0)
    if "max_iter" in data:
        kw["max_iter"] = _number("", "max_iter", data["max_iter"], integer=True, lo=1)
    if "seed" in data:
        kw["seed"] = _number("", "seed", data["seed"], integer=True, lo=0)
    for key in ("relative_stop", "post_process"):
        if key in data:
            kw[key] = _bool(key, data[key])

    if "interpolation" in data:
        e = data["interpolation"]
        _check_keys("interpolation", e, {f.name for f in fields(InterpolationConfig)})
        ik = {}
        if "function" in e:
            if e["function"] not in INTERPOLANTS:
                raise ConfigError(f"interpolation.function: expected one of {list(INTERPOLANTS)}")
            ik["function"] = e["function"]
        if "n" in e:
            ik["n"] = _number("interpolation.", "n", e["n"], integer=True, lo=1)
        if "radius" in e:
            ik["radius"] = _number("interpolation.", "radius", e["radius"], positive=True)
        if "vtk_quadratic" in e:
            ik["vtk_quadratic"] = _bool("interpolation.vtk_quadratic", e["vtk_quadratic"])
        kw["interpolation"] = InterpolationConfig(**ik)
    try:
        return RunConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(data)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise ConfigError(f"out: directory {out} is not writable")
    return out


def build_mesh(cfg: RunConfig) -> TetMesh:
    if cfg.mesh_file is not None:
        return read_mesh(cfg.mesh_file)
    return generate_ellipsoid_mesh(cfg.ellipsoid)


# ---------------------------------------------------------------------------
# commands


def cmd_mesh(cfg: RunConfig) -> dict:
    out = _out_dir(cfg)
    mesh = build_mesh(cfg)
    write_mesh(mesh, out / "mesh")
    write_vtk(mesh, None, out / "mesh.vtk")
    return {"vertices": mesh.n_vertices, "tets": mesh.n_tets, "volume": mesh.volume, "h": mesh.h}


def cmd_solve(cfg: RunConfig) -> dict:
    out = _out_dir(cfg)
    mesh = build_mesh(cfg)
    problem = cfg.state_problem()
    sol = fem.solve(mesh, problem, cfg.tolerances.cg_rtol)
    J = fem.objective(mesh, problem, sol.u)
    write_vtk(mesh, {"u": sol.u, "p": sol.p}, out / "state.vtk")
    return {"J": J, "volume": mesh.volume}


def cmd_check_convexity(cfg: RunConfig) -> dict:
    out = _out_dir(cfg)
    mesh = build_mesh(cfg)
    tol = cfg.tolerances
    certs = dconvex.certify_mesh(mesh, tol.certify_eps, tol.certify_k_max)
    report = dconvex.check_global(mesh, tol.hull_tol, certs)
    report.to_csv(out / "convexity.csv")
    return {"global": bool(report.globally_convex), "all_certified": bool(report.all_certified),
            "max_violation": report.max_violation}


def cmd_interpolate_convex(cfg: RunConfig) -> dict:
    out = _out_dir(cfg)
    ic = cfg.interpolation
    mesh2d = isoconvex.disk_mesh(ic.n, ic.radius)
    if ic.function == "hemisphere":
        u, concave = isoconvex.hemisphere, True
    else:
        u, concave = (lambda x: 0.5 * (np.asarray(x) ** 2).sum(axis=-1)), False
    f = isoconvex.convex_interpolate_graph(u, mesh2d, concave=concave, tol=cfg.tolerances.jump_tol)
    result = {"function": ic.function, "n": ic.n, "h": f.h, "gamma1": f.gamma1, "gamma2": f.gamma2,
              "min_jump": f.min_jump, "min_hessian_eig": f.min_hessian_eig,
              "certified": bool(f.certified)}
    if ic.function == "hemisphere":
        surface = isoconvex.build_half_domain_surface(f, mesh2d)
        result["min_C_H"] = surface.min_c_h(cfg.tolerances.surface_samples)
        result["min_C_K_plus"] = surface.min_c_k_plus()
        isoconvex.export_surface_vtk(surface, out / "surface.vtk", quadratic=ic.vtk_quadratic)
    with open(out / "interpolation.json", "w") as fh:
        json.dump(result, fh, indent=2)
    return result


def cmd_optimize(cfg: RunConfig) -> dict:
    out = _out_dir(cfg)
    mesh = build_mesh(cfg)
    write_mesh(mesh, out / "initial")
    state = shapeopt.optimize(
        mesh,
        cfg.state_problem(),
        cfg.elasticity,
        eps_stop=cfg.eps_stop,
        max_iter=cfg.max_iter,
        relative=cfg.relative_stop,
        t0=cfg.t0,
        half=cfg.ellipsoid.half and cfg.mesh_file is None,
        quality_factor=cfg.quality_factor,
        post_process=cfg.post_process,
        tol=cfg.tolerances,
    )
    state.write_log(out / LOG_FILE)
    write_mesh(state.mesh, out / "final")
    write_vtk(state.mesh, {"u": state.u, "p": state.p}, out / "final.vtk")
    summary = {
        "name": cfg.name,
        "problem": cfg.problem,
        "status": state.status,
        "J0": state.J0,
        "J": state.J,
        "volume0": state.volume0,
        "volume": state.mesh.volume,
        "tau": state.tau,
        "max_C": state.max_C,
        "k": state.k,
    }
    with open(out / SUMMARY_FILE, "w") as fh:
        json.dump(summary, fh, indent=2)
    return summary


def _run_dirs(root: Path) -> list[Path]:
    if (root / SUMMARY_FILE).exists():
        return [root]
    if root.is_dir():
        return sorted(p for p in root.iterdir() if (p / SUMMARY_FILE).exists())
    return []


def collect_report(dirs) -> list[dict]:
    """Summaries of completed runs, sorted by run name.

    Each directory is either a run directory or a parent of run
    directories. Raises ``ConfigError`` listing missing files.
    """
    rows, missing = [], []
    for d in map(Path, dirs):
        found = _run_dirs(d)
        if not found:
            missing += [str(d / SUMMARY_FILE), str(d / LOG_FILE)]
        for run in found:
            if not (run / LOG_FILE).exists():
                missing.append(str(run / LOG_FILE))
                continue
            rows.append(json.loads((run / SUMMARY_FILE).read_text()))
    if missing:
        raise ConfigError("missing run artifacts: " + ", ".join(missing))
    return sorted(rows, key=lambda r: r["name"])


def format_report(rows: list[dict]) -> str:
    body = [[r["name"], f"{r['J0']:.4f}", f"{r['J']:.4f}", f"{r['volume0']:.4f}", f"{r['volume']:.4f}",
             f"{r['tau']:.3g}", f"{r['max_C']:.3g}", str(r["k"])] for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) for i, c in enumerate(REPORT_COLUMNS)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(REPORT_COLUMNS, widths))]
    lines += ["  ".join(c.rjust(w) for c, w in zip(b, widths)) for b in body]
    return "\n".join(lines)


HANDLERS = {
    "mesh": cmd_mesh,
    "solve": cmd_solve,
    "check-convexity": cmd_check_convexity,
    "interpolate-convex": cmd_interpolate_convex,
    "optimize": cmd_optimize,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cso", description="Convex shape optimization toolkit")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", action="append", default=[],
                    help="JSON run configuration (report accepts several)")
    ap.add_argument("--out", action="append", default=[], help="output directory")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            dirs = list(args.out)
            for c in args.config:
                dirs.append(load_config(c).out)
            if not dirs:
                raise ConfigError("report: give run directories with --out or configs with --config")
            print(format_report(collect_report(dirs)))
            return 0
        if len(args.config) != 1:
            raise ConfigError(f"{args.command}: exactly one --config is required")
        if len(args.out) > 1:
            raise ConfigError(f"{args.command}: at most one --out")
        cfg = load_config(args.config[0])
        if args.out:
            cfg = replace(cfg, out=args.out[0])
        result = HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"cso: config error: {exc}", file=sys.stderr)
        return 2
    except (CsoError, OSError) as exc:
        print(f"cso: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2, default=float))
    return 0


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
