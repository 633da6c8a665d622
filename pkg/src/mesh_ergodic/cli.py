"""Command-line planner: ``plan``, ``eval`` and ``spectrum`` verbs.

A run is described by one JSON document (optionally starting from a named
preset); individual keys are overridden with ``--set key.sub=value`` where
the value is parsed as JSON when possible.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O error.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import shapes
from .analytic import AnalyticBasis, rectangle_quadrature, sphere_quadrature
from .ergodic import (
    InformationMap,
    SensorModel,
    Trajectory,
    coverage_field,
    evaluate_analytic_metric,
    spectral_weights,
)
from .errors import (
    DegenerateCoverageError,
    DimensionError,
    DomainError,
    EigensolverError,
    MeshFormatError,
    MeshValidationError,
    ParameterError,
)
from .mesh import TriangleMesh, load_mesh, mesh_hash, save_ply
from .optim.eto import (
    EtoProblem,
    SolverConfig,
    evaluate_constraints,
    initial_trajectory,
    load_trajectory_csv,
    solve_eto,
)
from .spectral import cached_eigenbasis

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

DEFAULTS: dict = {
    "mesh": {"source": "square_grid", "n": 100},
    "map": {"kind": "uniform"},
    "K": 100,
    "weights": "exp_decay",
    "sigma": 0.1,
    "truncate": True,
    "T": 100,
    "dt": 0.1,
    "lower": [-1.0, -1.0, -1.0],
    "upper": [1.0, 1.0, 1.0],
    "clearance": None,
    "state_lower": None,
    "state_upper": None,
    "init": {"kind": "straight_line", "start": [0.1, 0.1, 0.0], "end": [0.9, 0.9, 0.0]},
    "fix_end": False,
    "boundary": "neumann",
    "solver": {},
    "analytic": None,
    "seed": 0,
}

_SPHERE = {"source": "uv_sphere", "n_rings": 70, "n_segments": 70, "radius": 0.5}
_TORUS = {"source": "torus", "major": 0.3575, "minor": 0.1425}
_BUNNY = {"source": "blob", "level": 4, "size": 1.0}
_SURFACE = {"sigma": 0.1, "dt": 0.1, "clearance": 0.05, "weights": "exp_decay"}

PRESETS: dict[str, dict] = {
    "square": {
        "mesh": {"source": "square_grid", "n": 100},
        "weights": "inverse_sqrt",
        "sigma": 0.03,
        "dt": 0.1,
        "init": {"kind": "straight_line", "start": [0.1, 0.1, 0.0], "end": [0.9, 0.9, 0.0]},
        "fix_end": True,
        "state_lower": [0.0, 0.0, 0.0],
        "state_upper": [1.0, 1.0, 0.0],
        "analytic": {"domain": "rectangle", "lengths": [1.0, 1.0], "K": 2500},
    },
    "sphere-uniform": {
        **_SURFACE,
        "mesh": _SPHERE,
        "init": {"kind": "ring", "center": [0.0, 0.0, 0.0], "radius": 0.6},
        "analytic": {"domain": "sphere", "center": [0.0, 0.0, 0.0], "radius": 0.5, "max_degree": 40},
    },
    "sphere-bump": {
        **_SURFACE,
        "mesh": _SPHERE,
        "map": {"kind": "bump", "center": [0.0, 0.35, 0.35], "width": 0.15},
        "init": {"kind": "ring", "center": [0.0, 0.0, 0.0], "radius": 0.6},
        "analytic": {"domain": "sphere", "center": [0.0, 0.0, 0.0], "radius": 0.5, "max_degree": 40},
    },
    "torus-uniform": {**_SURFACE, "mesh": _TORUS, "init": {"kind": "bbox_diagonal"}},
    "torus-bump": {
        **_SURFACE,
        "mesh": _TORUS,
        "map": {"kind": "bump", "center": [0.5, 0.0, 0.0], "width": 0.15},
        "init": {"kind": "bbox_diagonal"},
    },
    "bunny-uniform": {
        **_SURFACE,
        "mesh": _BUNNY,
        "lower": [-0.8, -0.8, -0.8],
        "upper": [0.8, 0.8, 0.8],
        "init": {"kind": "bbox_diagonal"},
    },
    "bunny-bump": {
        **_SURFACE,
        "mesh": _BUNNY,
        "map": {"kind": "bump", "center": [0.0, 0.0, 0.5], "width": 0.2},
        "lower": [-0.8, -0.8, -0.8],
        "upper": [0.8, 0.8, 0.8],
        "init": {"kind": "bbox_diagonal"},
    },
    "turbine": {
        "mesh": {"source": "wind_turbine"},
        "weights": "exp_decay",
        "sigma": 10.0,
        "dt": 10.0,
        "clearance": 5.0,
        "lower": [-0.5, -0.5, -0.5],
        "upper": [0.5, 0.5, 0.5],
        # horizontal ring at hub height, clear of the blade tips
        "init": {"kind": "ring", "center": [0.0, 0.0, 132.0], "radius": 70.0},
    },
}


class CliError(Exception):
    """Failure in a named pipeline stage, mapped to an exit code."""

    def __init__(self, stage: str, message: str, code: int):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.code = code


_CONFIG_ERRORS = (ParameterError, DimensionError, KeyError, TypeError, ValueError)
_NUMERICAL_ERRORS = (EigensolverError, DegenerateCoverageError, DomainError, FloatingPointError,
                     np.linalg.LinAlgError)
_IO_ERRORS = (OSError, MeshFormatError)


class _stage:
    """Context manager that tags exceptions with the stage they came from."""

    def __init__(self, name: str, timings: dict | None = None):
        self.name = name
        self.timings = timings

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        if self.timings is not None:
            self.timings[self.name] = time.perf_counter() - self.t0
        if exc is None or isinstance(exc, CliError):
            return False
        # order matters: the numerical and I/O types subclass ValueError / OSError
        if isinstance(exc, _NUMERICAL_ERRORS):
            code = EXIT_NUMERICAL
        elif isinstance(exc, MeshValidationError):
            code = EXIT_CONFIG
        elif isinstance(exc, _IO_ERRORS):
            code = EXIT_IO
        elif isinstance(exc, _CONFIG_ERRORS):
            code = EXIT_CONFIG
        else:
            return False
        raise CliError(self.name, f"{type(exc).__name__}: {exc}", code) from exc


# -- configuration ----------------------------------------------------------


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("mesh", "map", "init", "analytic"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _set_path(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            node[k] = {}
        node = node[k]
    node[keys[-1]] = value


def parse_override(text: str):
    if "=" not in text:
        raise ParameterError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def build_config(config_path=None, preset: str | None = None, overrides=(), seed=None) -> dict:
    """Defaults, then the preset, then the JSON file, then ``key=value`` overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    user = {}
    if config_path is not None:
        with open(config_path, encoding="utf-8") as fh:
            try:
                user = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParameterError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ParameterError("config must be a JSON object")
    name = preset or user.get("preset")
    if name is not None:
        if name not in PRESETS:
            raise ParameterError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        cfg = _merge(cfg, PRESETS[name])
        cfg["preset"] = name
    cfg = _merge(cfg, user)
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        _set_path(cfg, key, value)
    if seed is not None:
        cfg["seed"] = int(seed)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    for key in ("sigma", "dt"):
        if not isinstance(cfg[key], (int, float)) or not cfg[key] > 0:
            raise ParameterError(f"{key} must be a positive number, got {cfg[key]!r}")
    for key in ("K", "T"):
        if not isinstance(cfg[key], int) or cfg[key] < 1:
            raise ParameterError(f"{key} must be a positive integer, got {cfg[key]!r}")
    if cfg["T"] < 2:
        raise ParameterError("T must be at least 2")
    if cfg["clearance"] is not None and not cfg["clearance"] >= 0:
        raise ParameterError("clearance must be nonnegative")
    if cfg["weights"] not in ("exp_decay", "inverse_sqrt"):
        raise ParameterError(f"unknown weight scheme {cfg['weights']!r}")
    if cfg["boundary"] != "neumann":
        raise ParameterError("only 'neumann' boundary conditions are supported")
    lo, hi = np.asarray(cfg["lower"], float), np.asarray(cfg["upper"], float)
    if lo.size not in (1, 3) or hi.size not in (1, 3) or np.any(lo > hi):
        raise ParameterError("control bounds must be scalars or 3-vectors with lower <= upper")
    for key in ("state_lower", "state_upper"):
        if cfg[key] is not None and np.asarray(cfg[key], float).size not in (1, 3):
            raise ParameterError(f"{key} must be a scalar or a 3-vector")
    mesh = cfg["mesh"]
    if mesh.get("source") == "file" and not Path(mesh.get("path", "")).is_file():
        raise ParameterError(f"mesh file {mesh.get('path')!r} does not exist")
    m = cfg["map"]
    if m.get("kind") not in ("uniform", "channel", "csv", "bump"):
        raise ParameterError(f"unknown map kind {m.get('kind')!r}")
    if m["kind"] == "csv" and not Path(m.get("path", "")).is_file():
        raise ParameterError(f"map file {m.get('path')!r} does not exist")
    if m["kind"] == "bump" and not m.get("width", 0) > 0:
        raise ParameterError("bump width must be positive")
    SolverConfig.from_dict(cfg["solver"])


# -- pipeline stages -------------------------------------------------------


_GENERATORS = {
    "square_grid": shapes.square_grid,
    "icosphere": shapes.icosphere,
    "uv_sphere": shapes.uv_sphere,
    "torus": shapes.torus,
    "blob": shapes.blob,
    "wind_turbine": shapes.wind_turbine,
}


def make_mesh(spec: dict) -> TriangleMesh:
    spec = dict(spec)
    source = spec.pop("source")
    if source == "file":
        return load_mesh(spec["path"], spec.get("format"))
    if source not in _GENERATORS:
        raise ParameterError(f"unknown mesh source {source!r}")
    return _GENERATORS[source](**spec)


def make_map(spec: dict, mesh: TriangleMesh) -> InformationMap:
    kind = spec["kind"]
    if kind == "uniform":
        return InformationMap.uniform(mesh)
    if kind == "channel":
        name = spec["name"]
        if name not in mesh.channels:
            raise ParameterError(f"mesh has no vertex channel {name!r}")
        return InformationMap.from_values(mesh, mesh.channels[name])
    if kind == "csv":
        data = np.loadtxt(spec["path"], delimiter=",", skiprows=1, ndmin=2)
        idx = data[:, 0].astype(np.int64)
        if np.any(idx < 0) or np.any(idx >= mesh.n_vertices) or np.any(idx != data[:, 0]):
            raise DimensionError("map CSV has vertex indices outside the mesh")
        values = np.zeros(mesh.n_vertices)
        values[idx] = data[:, 1]
        return InformationMap.from_values(mesh, values)
    # ambient-distance Gaussian bump painted on the vertices
    d2 = ((mesh.vertices - np.asarray(spec["center"], float)) ** 2).sum(-1)
    return InformationMap.from_values(mesh, np.exp(-0.5 * d2 / float(spec["width"]) ** 2))


def make_initial(cfg: dict, mesh: TriangleMesh) -> Trajectory:
    spec = dict(cfg["init"])
    kind = spec.pop("kind")
    if kind == "bbox_diagonal":
        # maximum corner to minimum corner, pushed out past the clearance
        lo, hi = mesh.bounding_box()
        pad = (cfg["clearance"] or 0.0) + cfg["sigma"]
        return initial_trajectory("straight_line", cfg["T"], cfg["dt"], start=hi + pad, end=lo - pad)
    return initial_trajectory(kind, cfg["T"], cfg["dt"], **spec)


def make_analytic(spec: dict | None):
    if spec is None:
        return None
    if spec["domain"] == "rectangle":
        basis = AnalyticBasis.rectangle(spec.get("lengths", (1.0, 1.0)), spec.get("K", 2500))
        return basis, rectangle_quadrature(basis.lengths, spec.get("quadrature_n", 256))
    if spec["domain"] == "sphere":
        basis = AnalyticBasis.sphere(spec.get("center", (0, 0, 0)), spec["radius"], spec.get("max_degree", 40))
        n = spec.get("quadrature_n", 2 * basis.modes[:, 0].max() + 24)
        return basis, sphere_quadrature(basis.center, basis.radius, n)
    raise ParameterError(f"unknown analytic domain {spec['domain']!r}")


def _analytic_map(spec: dict, quad_points):
    if spec["kind"] == "uniform":
        return None
    if spec["kind"] == "bump":
        d2 = ((quad_points - np.asarray(spec["center"], float)) ** 2).sum(-1)
        return np.exp(-0.5 * d2 / float(spec["width"]) ** 2)
    raise ParameterError("analytic evaluation needs a uniform or bump map")


@dataclass(eq=False)
class Setup:
    cfg: dict
    mesh: TriangleMesh
    basis: object
    weights: np.ndarray
    info_map: InformationMap
    model: SensorModel
    digest: str


def prepare(cfg: dict, cache_dir=None, timings: dict | None = None) -> Setup:
    timings = {} if timings is None else timings
    with _stage("mesh", timings):
        mesh = make_mesh(cfg["mesh"])
        digest = mesh_hash(mesh)
    with _stage("eigensolve", timings):
        basis = cached_eigenbasis(mesh, cfg["K"], cache_dir)
    with _stage("map", timings):
        info_map = make_map(cfg["map"], mesh)
        weights = spectral_weights(basis.eigenvalues, cfg["weights"])
        model = SensorModel(float(cfg["sigma"]), bool(cfg["truncate"]))
    return Setup(cfg, mesh, basis, weights, info_map, model, digest)


def _analytic_metric(setup: Setup, states):
    spec = setup.cfg["analytic"]
    if spec is None:
        return None
    basis, quad = make_analytic(spec)
    phi = _analytic_map(setup.cfg["map"], quad.points)
    return evaluate_analytic_metric(basis, setup.cfg["weights"], phi, states, setup.model, quad)


def write_trajectory_csv(traj: Trajectory, path) -> None:
    t = np.arange(traj.T + 1) * traj.dt
    u = np.vstack([traj.controls, np.full((1, 3), np.nan)])
    lines = ["t,x,y,z,ux,uy,uz"]
    for k in range(traj.T + 1):
        row = [t[k], *traj.states[k], *u[k]]
        lines.append(",".join("" if np.isnan(v) else repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_trajectory(path, dt: float | None) -> Trajectory:
    states, file_dt = load_trajectory_csv(path)
    step = file_dt if file_dt is not None else dt
    if step is None:
        raise ParameterError("trajectory time step is not uniform and no dt was given")
    data = np.genfromtxt(path, delimiter=",", skip_header=1, ndmin=2)
    controls = None
    if data.shape[1] >= 7 and np.all(np.isfinite(data[:-1, 4:7])):
        controls = data[:-1, 4:7]
    return Trajectory(states, step, controls)


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _base_report(setup: Setup, timings: dict) -> dict:
    return {
        "config": setup.cfg,
        "mesh_hash": setup.digest,
        "n_vertices": setup.mesh.n_vertices,
        "K_requested": setup.cfg["K"],
        "K_used": setup.basis.K,
        "map_definition": setup.cfg["map"],
        "timings": timings,
    }


def run_plan(cfg: dict, output_dir, cache_dir=None) -> dict:
    """Full pipeline; writes trajectory.csv, coverage.ply and report.json."""
    out = Path(output_dir)
    timings: dict = {}
    with _stage("output", None):
        out.mkdir(parents=True, exist_ok=True)
    setup = prepare(cfg, cache_dir, timings)
    with _stage("problem", timings):
        init = make_initial(cfg, setup.mesh)
        lo, hi = np.asarray(cfg["lower"], float), np.asarray(cfg["upper"], float)
        problem = EtoProblem(setup.mesh, setup.basis, setup.info_map, setup.model, setup.weights, init,
                             lo, hi, cfg["clearance"], bool(cfg["fix_end"]),
                             state_lower=cfg["state_lower"], state_upper=cfg["state_upper"])
        solver = SolverConfig.from_dict({**cfg["solver"], "seed": cfg["seed"]})
        if solver.checkpoint is None:
            solver.checkpoint = str(out / "checkpoint.jsonl")
            Path(solver.checkpoint).unlink(missing_ok=True)
    with _stage("optimize", timings):
        result = solve_eto(problem, solver)
    with _stage("evaluate", timings):
        traj = result.trajectory
        E_delta = _analytic_metric(setup, traj.states)
        E_delta_init = _analytic_metric(setup, init.states)
        cov = coverage_field(setup.model, traj, setup.mesh, setup.basis.areas)
    report = _base_report(setup, timings)
    report.update({
        "E_L": result.metric,
        "E_L_initial": result.initial_metric,
        "E_delta": E_delta,
        "E_delta_initial": E_delta_init,
        "result": result.summary(),
    })
    with _stage("export", None):
        write_trajectory_csv(traj, out / "trajectory.csv")
        save_ply(setup.mesh, out / "coverage.ply", {"mu": cov.mu, "phi": setup.info_map.density})
        _write_json(out / "report.json", report)
    return report


def run_eval(cfg: dict, trajectory_path, output_dir=None, cache_dir=None) -> dict:
    """Score an external trajectory without optimizing."""
    timings: dict = {}
    setup = prepare(cfg, cache_dir, timings)
    with _stage("trajectory", timings):
        traj = read_trajectory(trajectory_path, cfg["dt"])
    with _stage("evaluate", timings):
        E_L = float(setup.weights @ (setup.basis.project(coverage_field(
            setup.model, traj, setup.mesh, setup.basis.areas).mu)
            - setup.basis.project(setup.info_map.density)) ** 2)
        E_delta = _analytic_metric(setup, traj.states)
    report = _base_report(setup, timings)
    report.update({"E_L": E_L, "E_delta": E_delta, "trajectory": str(trajectory_path)})
    lo, hi = np.asarray(cfg["lower"], float), np.asarray(cfg["upper"], float)
    with _stage("constraints", timings):
        problem = EtoProblem(setup.mesh, setup.basis, setup.info_map, setup.model, setup.weights, traj,
                             lo, hi, cfg["clearance"], state_lower=cfg["state_lower"],
                             state_upper=cfg["state_upper"])
        report["violations"] = evaluate_constraints(problem, traj.states, traj.controls).violations()
    if output_dir is not None:
        with _stage("export", None):
            Path(output_dir).mkdir(parents=True, exist_ok=True)
            _write_json(Path(output_dir) / "report.json", report)
    return report


def run_spectrum(cfg: dict, output_dir, cache_dir=None) -> dict:
    """Write eigenvalues.csv and eigenvectors.ply (channels ``f0..f{K-1}``)."""
    timings: dict = {}
    out = Path(output_dir)
    with _stage("output", None):
        out.mkdir(parents=True, exist_ok=True)
    with _stage("mesh", timings):
        mesh = make_mesh(cfg["mesh"])
    with _stage("eigensolve", timings):
        basis = cached_eigenbasis(mesh, cfg["K"], cache_dir)
    with _stage("export", None):
        lines = ["index,eigenvalue"] + [f"{k},{lam!r}" for k, lam in enumerate(map(float, basis.eigenvalues))]
        (out / "eigenvalues.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        save_ply(mesh, out / "eigenvectors.ply", {f"f{k}": basis.eigenvectors[:, k] for k in range(basis.K)})
    return {"K_requested": cfg["K"], "K_used": basis.K, "mesh_hash": mesh_hash(mesh), "timings": timings}


# -- entry point -----------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mesh-ergodic", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in ("plan", "eval", "spectrum"):
        s = sub.add_parser(verb)
        s.add_argument("--config", help="JSON run configuration")
        s.add_argument("--preset", choices=sorted(PRESETS))
        s.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (dotted path, JSON value)")
        s.add_argument("--output-dir", default="out")
        s.add_argument("--seed", type=int)
        s.add_argument("--cache-dir", help="directory for cached eigenbases")
        s.add_argument("-v", "--verbose", action="store_true")
        if verb == "eval":
            s.add_argument("--trajectory", required=True, help="trajectory CSV to score")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _stage("config", None):
            cfg = build_config(args.config, args.preset, args.overrides, args.seed)
        if args.verb == "plan":
            report = run_plan(cfg, args.output_dir, args.cache_dir)
            summary = {k: report[k] for k in ("E_L", "E_delta", "K_used")}
        elif args.verb == "eval":
            report = run_eval(cfg, args.trajectory, args.output_dir, args.cache_dir)
            summary = {k: report[k] for k in ("E_L", "E_delta", "K_used")}
        else:
            summary = run_spectrum(cfg, args.output_dir, args.cache_dir)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    print(json.dumps(summary))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
