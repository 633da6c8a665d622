"""Acceptance gate: one test per criterion, each recorded in the summary table.

The preset runs are shared through session fixtures, so the square, sphere
and turbine plans are each solved once (the determinism check re-runs one).
"""

import json
import time

import numpy as np
import pytest

from mesh_ergodic import cli, shapes
from mesh_ergodic.analytic import AnalyticBasis, sphere_quadrature
from mesh_ergodic.ergodic import (
    ErgodicObjective,
    InformationMap,
    SensorModel,
    coverage_field,
    ergodic_metric_value,
    evaluate_analytic_metric,
    spectral_weights,
)
from mesh_ergodic.mesh import vertex_areas
from mesh_ergodic.optim.eto import EtoProblem, Scaling, straight_line
from mesh_ergodic.sdf import build_distance_index, signed_distances
from mesh_ergodic.spectral import mesh_eigenbasis

from oracles import al_fd_errors, brute_metric, brute_unsigned, metric_fd_error

pytestmark = pytest.mark.acceptance

FEASIBILITY_TOL = 1e-6
DETERMINISM_PRESET = "sphere-uniform"

_MESHES = {
    "square_grid(100)": lambda: shapes.square_grid(100),
    "icosphere(4)": lambda: shapes.icosphere(4),
    "uv_sphere(70x70)": lambda: shapes.uv_sphere(70, 70, 0.5),
    "torus": lambda: shapes.torus(),
    "blob(4)": lambda: shapes.blob(4),
    "wind_turbine": lambda: shapes.wind_turbine(),
}


@pytest.fixture(scope="session")
def bases():
    """K=100 eigenbasis and solve time for every acceptance mesh, computed lazily."""
    cache = {}

    def get(name):
        if name not in cache:
            mesh = _MESHES[name]()
            t0 = time.perf_counter()
            basis = mesh_eigenbasis(mesh, 100)
            cache[name] = (mesh, basis, time.perf_counter() - t0)
        return cache[name]

    return get


@pytest.fixture(scope="session")
def preset_runs(tmp_path_factory):
    """Full ``plan`` runs of the named presets, with wall-clock time."""
    cache = {}

    def get(name, tag="a"):
        if (name, tag) not in cache:
            out = tmp_path_factory.mktemp(f"{name}-{tag}")
            cfg = cli.build_config(preset=name, seed=0)
            t0 = time.perf_counter()
            report = cli.run_plan(cfg, out)
            cache[name, tag] = (report, time.perf_counter() - t0, out)
        return cache[name, tag]

    return get


def test_criterion_01_flat_spectrum(bases, criterion):
    mesh, basis, seconds = bases("square_grid(100)")
    k = np.arange(12)
    exact = np.sort((np.pi ** 2 * (k[:, None] ** 2 + k[None, :] ** 2)).ravel())[1:11]
    got = basis.eigenvalues[1:11]
    rel = np.abs(got - exact) / exact
    ok = mesh.n_vertices >= 10_000 and rel.max() <= 0.02 and seconds <= 60
    detail = f"n={mesh.n_vertices}, max rel err {rel.max():.2e} (<= 2e-2), eigensolve {seconds:.1f}s (<= 60)"
    assert criterion(1, "flat-square spectrum", ok, detail), detail


def test_criterion_02_sphere_spectrum(criterion):
    mesh = shapes.icosphere(4)
    basis = mesh_eigenbasis(mesh, 25)
    worst, multiplicity_ok = 0.0, True
    for ell in range(5):
        block = basis.eigenvalues[ell ** 2:(ell + 1) ** 2]
        target = ell * (ell + 1)
        if ell == 0:
            worst = max(worst, abs(block[0]))
            continue
        worst = max(worst, np.max(np.abs(block - target)) / target)
        # the next mode must belong to a different cluster
        nxt = basis.eigenvalues[(ell + 1) ** 2] if (ell + 1) ** 2 < basis.K else np.inf
        multiplicity_ok &= abs(nxt - target) / target > 0.03
    ok = worst <= 0.03 and multiplicity_ok
    detail = f"max rel deviation from l(l+1) {worst:.2e} (<= 3e-2), multiplicities 2l+1: {multiplicity_ok}"
    assert criterion(2, "icosphere spectrum", ok, detail), detail


def test_criterion_03_orthonormality(bases, criterion):
    errs = {}
    for name in _MESHES:
        mesh, basis, _ = bases(name)
        F = basis.eigenvectors
        G = F.T @ (vertex_areas(mesh)[:, None] * F)
        errs[name] = float(np.abs(G - np.eye(basis.K)).max())
    worst = max(errs.values())
    detail = f"max |F^T M F - I| {worst:.1e} (<= 1e-8) over {len(errs)} meshes"
    assert criterion(3, "M-orthonormality, K=100", worst <= 1e-8, detail), detail


def _gradient_meshes():
    return {
        "icosphere(3)": (shapes.icosphere(3), 0.25, lambda r, T: r.normal(size=(T, 3)) * 0.6),
        "square_grid(30)": (shapes.square_grid(30), 0.1,
                            lambda r, T: np.column_stack([r.uniform(0, 1, (T, 2)), r.normal(0, 0.05, T)])),
        "torus": (shapes.torus(n_major=32, n_minor=14), 0.1, lambda r, T: r.uniform(-0.5, 0.5, (T, 3))),
        "blob(3)": (shapes.blob(3), 0.15, lambda r, T: r.uniform(-0.6, 0.6, (T, 3))),
    }


def test_criterion_04_gradients(criterion):
    worst_metric, worst_al = 0.0, 0.0
    for name, (mesh, sigma, sample) in _gradient_meshes().items():
        basis = mesh_eigenbasis(mesh, 30)
        w = spectral_weights(basis.eigenvalues)
        im = InformationMap.uniform(mesh)
        model = SensorModel(sigma, truncate=False)
        obj = ErgodicObjective(mesh, basis, w, im, model)
        rng = np.random.default_rng(17)
        errs = [metric_fd_error(obj, sample(rng, int(rng.integers(2, 15))), rng) for _ in range(100)]
        worst_metric = max(worst_metric, max(errs))

        lo, hi = mesh.bounding_box()
        init = straight_line(hi + 0.1, lo - 0.1, 10, 0.5)
        problem = EtoProblem(mesh, basis, im, model, w, init, lower=-1.0, upper=1.0,
                             clearance=0.05, state_lower=lo, state_upper=hi)
        al = al_fd_errors(problem, 100, 5, Scaling(objective=0.01, length=sigma, speed=1.0))
        worst_al = max(worst_al, float(al.max()))
    ok = worst_metric <= 1e-4 and worst_al <= 1e-4
    detail = (f"max rel FD error: metric {worst_metric:.1e}, augmented Lagrangian {worst_al:.1e} "
              f"(<= 1e-4; 100 configs x 4 meshes)")
    assert criterion(4, "gradient correctness", ok, detail), detail


def test_criterion_05_refinement(criterion):
    t = np.linspace(0.0, 1.0, 100)
    th, ph = np.arccos(1 - 2 * t), 8 * np.pi * t
    states = 1.1 * np.column_stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])

    def phi(p):
        d = p / np.linalg.norm(p, axis=1, keepdims=True)
        return 1 + 0.5 * d[:, 2] + 0.3 * d[:, 0] * d[:, 1]

    model = SensorModel(0.3, truncate=False)
    e_delta = evaluate_analytic_metric(AnalyticBasis.sphere(max_degree=4), "exp_decay", phi, states, model,
                                       sphere_quadrature(n=64))
    gaps = []
    for level in range(1, 5):
        mesh = shapes.icosphere(level)
        basis = mesh_eigenbasis(mesh, 25, extend_clusters=False)
        obj = ErgodicObjective(mesh, basis, spectral_weights(basis.eigenvalues),
                               InformationMap.from_values(mesh, phi(mesh.vertices)), model)
        gaps.append(abs(obj.value(states) - e_delta))
    ok = gaps[0] > gaps[1] > gaps[2] and gaps[3] <= 1.05 * gaps[2]
    detail = "|E^L - E^Delta| for levels 1..4: " + ", ".join(f"{g:.3e}" for g in gaps)
    assert criterion(5, "metric convergence under refinement", ok, detail), detail


def test_criterion_06_table_magnitudes(preset_runs, criterion):
    rows, ok = [], True
    for name, band in (("square", (1e-3, 1e-2)), ("sphere-uniform", (2e-2, 2e-1))):
        report, seconds, _ = preset_runs(name)
        e, e0 = report["E_delta"], report["E_delta_initial"]
        good = band[0] <= e <= band[1] and e <= 0.2 * e0 and seconds <= 600
        ok &= good
        rows.append(f"{name}: E^Delta {e:.3e} in [{band[0]:g}, {band[1]:g}], initial {e0:.3e} "
                    f"(ratio {e / e0:.3f} <= 0.2), {seconds:.0f}s (<= 600)")
    detail = "; ".join(rows)
    assert criterion(6, "E^Delta order of magnitude", ok, detail), detail


def test_criterion_07_mesh_metric(preset_runs, criterion):
    vals = {name: preset_runs(name)[0]["E_L"] for name in ("square", "sphere-uniform")}
    ok = all(v <= 1e-3 for v in vals.values())
    detail = ", ".join(f"{k}: E^L {v:.3e} (<= 1e-3)" for k, v in vals.items())
    assert criterion(7, "mesh-optimized E^L", ok, detail), detail


def test_criterion_08_coefficient_oracle(criterion):
    worst = 0.0
    for mesh in (shapes.icosphere(3), shapes.square_grid(30), shapes.blob(3)):
        assert mesh.n_vertices <= 2000
        basis = mesh_eigenbasis(mesh, 40)
        A = vertex_areas(mesh)
        rng = np.random.default_rng(8)
        phi = rng.uniform(0.5, 2.0, mesh.n_vertices)
        im = InformationMap.from_values(mesh, phi)
        w = spectral_weights(basis.eigenvalues)
        model = SensorModel(0.2, truncate=False)
        brute = np.array([sum(basis.eigenvectors[i, k] * A[i] * im.density[i] for i in range(mesh.n_vertices))
                          for k in range(basis.K)])
        worst = max(worst, float(np.max(np.abs(basis.project(im.density) - brute) / np.abs(brute).max())))
        for _ in range(3):
            states = rng.uniform(-1.0, 1.0, (15, 3))
            fast = ergodic_metric_value(basis, w, im, coverage_field(model, states, mesh))
            slow = brute_metric(mesh, basis, w, im.density, model, states)
            worst = max(worst, abs(fast - slow) / slow)
    detail = f"max relative deviation {worst:.1e} (<= 1e-12)"
    assert criterion(8, "coefficient oracle", worst <= 1e-12, detail), detail


def test_criterion_09_sdf(criterion):
    worst = 0.0
    for mesh in (shapes.torus(n_major=30, n_minor=14), shapes.blob(3)):
        assert mesh.n_faces <= 2000
        idx = build_distance_index(mesh)
        lo, hi = mesh.bounding_box()
        pts = np.random.default_rng(3).uniform(lo - 0.3, hi + 0.3, (40, 3))
        d, _, _ = signed_distances(idx, pts)
        worst = max(worst, max(abs(abs(di) - brute_unsigned(mesh, p)) for p, di in zip(pts, d)))
    sphere = shapes.icosphere(4)
    edge = np.linalg.norm(sphere.vertices[sphere.faces[:, 0]] - sphere.vertices[sphere.faces[:, 1]], axis=1).max()
    chordal = 1.0 - np.sqrt(1.0 - (edge / np.sqrt(3)) ** 2)
    rng = np.random.default_rng(4)
    dirs = rng.normal(size=(300, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    r = rng.uniform(0.2, 2.0, 300)
    d, _, _ = signed_distances(build_distance_index(sphere), dirs * r[:, None])
    sphere_err = float(np.max(np.abs(d - (r - 1.0))))
    ok = worst <= 1e-12 and sphere_err <= chordal
    detail = (f"BVH vs exhaustive {worst:.1e} (<= 1e-12); sphere error {sphere_err:.2e} "
              f"<= chordal deviation {chordal:.2e}")
    assert criterion(9, "signed distance", ok, detail), detail


def test_criterion_10_feasibility(preset_runs, criterion):
    rows, ok, n_converged = [], True, 0
    for name in ("square", "sphere-uniform", "turbine"):
        res = preset_runs(name)[0]["result"]
        v = (res["defect_inf"], res["clearance_violation"], res["bound_violation"], res["workspace_violation"])
        if res["converged"]:
            n_converged += 1
            ok &= max(v) <= FEASIBILITY_TOL
        rows.append(f"{name}: converged={res['converged']} defect {v[0]:.1e} clearance {v[1]:.1e} "
                    f"bound {v[2]:.1e} workspace {v[3]:.1e}")
    ok &= n_converged > 0
    detail = "; ".join(rows)
    assert criterion(10, "feasibility of converged runs", ok, detail), detail


def test_criterion_11_turbine(preset_runs, criterion):
    report, seconds, _ = preset_runs("turbine")
    ok = seconds <= 1800 and report["E_L"] <= 1e-5
    detail = f"E^L {report['E_L']:.3e} (<= 1e-5), {seconds:.0f}s (<= 1800), K used {report['K_used']}"
    assert criterion(11, "turbine-scale run", ok, detail), detail


def test_criterion_12_determinism(preset_runs, criterion):
    _, _, first = preset_runs(DETERMINISM_PRESET)
    _, _, second = preset_runs(DETERMINISM_PRESET, "b")
    a, b = (first / "trajectory.csv").read_bytes(), (second / "trajectory.csv").read_bytes()
    cfg_a = json.loads((first / "report.json").read_text())["config"]
    cfg_b = json.loads((second / "report.json").read_text())["config"]
    ok = a == b and cfg_a == cfg_b
    detail = f"{DETERMINISM_PRESET} run twice with seed 0: trajectory.csv identical={a == b}"
    assert criterion(12, "determinism", ok, detail), detail
