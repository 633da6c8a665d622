import json

import numpy as np
import pytest

from mesh_ergodic import shapes
from mesh_ergodic.ergodic import InformationMap, SensorModel, Trajectory, spectral_weights
from mesh_ergodic.errors import DimensionError, ParameterError
from mesh_ergodic.optim.eto import (
    AugLagState,
    EtoProblem,
    Scaling,
    SolverConfig,
    evaluate_constraints,
    initial_trajectory,
    load_trajectory_csv,
    pack,
    resample,
    ring,
    solve_eto,
    straight_line,
    transcribe,
    unpack,
)
from mesh_ergodic.optim.lbfgs import LbfgsConfig
from mesh_ergodic.spectral import mesh_eigenbasis

from oracles import al_fd_errors


@pytest.fixture(scope="module")
def sphere_problem_parts():
    mesh = shapes.icosphere(2)
    basis = mesh_eigenbasis(mesh, 16)
    return mesh, basis, spectral_weights(basis.eigenvalues)


def make_problem(parts, T=12, clearance=0.1, fix_end=False, truncate=False, sigma=0.3, dt=1.0):
    mesh, basis, w = parts
    init = ring((0, 0, 0), 1.3, T, dt, axis=(0.2, 0.1, 1.0))
    return EtoProblem(mesh, basis, InformationMap.uniform(mesh), SensorModel(sigma, truncate), w, init,
                      lower=-1.0, upper=[1.0, 0.8, 1.2], clearance=clearance, fix_end=fix_end)


def test_initial_guesses(tmp_path):
    tr = straight_line([0, 0, 0], [1, 2, 3], 4, 0.5)
    np.testing.assert_allclose(tr.states[2], [0.5, 1, 1.5])
    np.testing.assert_allclose(tr.controls, np.tile([0.5, 1, 1.5], (4, 1)))
    r = ring((1, 0, 0), 2.0, 8, 0.1)
    np.testing.assert_allclose(np.linalg.norm(r.states - [1, 0, 0], axis=1), 2.0)
    np.testing.assert_array_equal(r.states[0], r.states[-1])
    path = tmp_path / "t.csv"
    np.savetxt(path, np.column_stack([np.arange(5) * 0.5, tr.states]), delimiter=",",
               header="t,x,y,z", comments="")
    states, dt = load_trajectory_csv(path)
    assert dt == 0.5
    res = resample(states, 8, 0.25)
    assert res.T == 8
    np.testing.assert_allclose(res.states[-1], [1, 2, 3])
    f = initial_trajectory("file", 8, 0.25, path=str(path))
    np.testing.assert_allclose(f.states, res.states)
    with pytest.raises(ParameterError):
        initial_trajectory("spiral", 8, 0.1)
    with pytest.raises(DimensionError):
        resample(states[:1], 4, 0.1)


def test_transcription_sizes(sphere_problem_parts):
    p = make_problem(sphere_problem_parts, T=10)
    tr = transcribe(p)
    assert (tr.n_free_states, tr.n_vars, tr.n_eq, tr.n_ineq) == (10, 60, 30, 70)
    q = make_problem(sphere_problem_parts, T=10, fix_end=True)
    assert transcribe(q).n_vars == 57


@pytest.mark.parametrize("fix_end", [False, True])
def test_pack_unpack_round_trip(sphere_problem_parts, fix_end):
    p = make_problem(sphere_problem_parts, fix_end=fix_end)
    w = pack(p, p.initial)
    states, controls = unpack(p, w)
    np.testing.assert_array_equal(states, p.initial.states)
    np.testing.assert_array_equal(controls, p.initial.controls)
    np.testing.assert_array_equal(pack(p, Trajectory(states, p.dt, controls)), w)
    with pytest.raises(DimensionError):
        unpack(p, w[:-1])


def test_problem_validation(sphere_problem_parts):
    mesh, basis, w = sphere_problem_parts
    init = ring((0, 0, 0), 1.3, 10, 0.1)
    im = InformationMap.uniform(mesh)
    with pytest.raises(ParameterError):
        EtoProblem(mesh, basis, im, SensorModel(0.2), w, init, lower=1.0, upper=0.0)
    with pytest.raises(ParameterError):
        EtoProblem(mesh, basis, im, SensorModel(0.2), w, init, clearance=-1)
    with pytest.raises(ParameterError):
        EtoProblem(mesh, basis, im, SensorModel(0.2), w, ring((0, 0, 0), 1.3, 1, 0.1))
    with pytest.raises(ParameterError):
        AugLagState.zeros(4, rho=0.0)


def test_constraint_residuals(sphere_problem_parts):
    p = make_problem(sphere_problem_parts, T=6, clearance=0.5)
    states = p.initial.states.copy()
    controls = p.initial.controls.copy()
    controls[0, 1] = 2.0
    states[3] = [0.0, 0.0, 1.2]  # within 0.5 of the unit sphere
    con = evaluate_constraints(p, states, controls)
    v = con.violations()
    assert v["bound_violation"] == pytest.approx(1.2)
    assert con.clearance[2] == pytest.approx(0.5 - 0.2, abs=0.01)
    np.testing.assert_allclose(con.defects, states[1:] - states[:-1] - p.dt * controls)


@pytest.mark.parametrize("fix_end", [False, True])
@pytest.mark.parametrize("scaling", [Scaling(), Scaling(objective=0.01, length=0.3, speed=1.2)])
def test_augmented_lagrangian_gradient(sphere_problem_parts, fix_end, scaling):
    p = make_problem(sphere_problem_parts, T=10, clearance=0.3, fix_end=fix_end)
    errs = al_fd_errors(p, 100, 7, scaling)
    assert np.max(errs) <= 1e-4


def test_augmented_lagrangian_gradient_open_mesh():
    mesh = shapes.square_grid(15)
    basis = mesh_eigenbasis(mesh, 20)
    init = straight_line([0.1, 0.1, 0.05], [0.9, 0.8, 0.05], 10, 0.1)
    p = EtoProblem(mesh, basis, InformationMap.uniform(mesh), SensorModel(0.2, False),
                   spectral_weights(basis.eigenvalues, "inverse_sqrt"), init, clearance=0.02,
                   state_lower=[0.2, 0.2, 0.0], state_upper=[0.8, 0.8, 0.1])
    assert np.max(al_fd_errors(p, 100, 3, Scaling())) <= 1e-4


def test_workspace_residuals(sphere_problem_parts):
    mesh, basis, w = sphere_problem_parts
    init = straight_line([0, 0, 1.5], [0, 0, 2.5], 4, 1.0)
    p = EtoProblem(mesh, basis, InformationMap.uniform(mesh), SensorModel(0.5), w, init,
                   state_lower=[-1, -1, 0.0], state_upper=[1, 1, 2.0])
    assert transcribe(p).n_ineq == 4 + 24 + 24
    con = evaluate_constraints(p, init.states, init.controls)
    np.testing.assert_allclose(con.state_upper[:, 2], [-0.25, 0.0, 0.25, 0.5])
    assert con.violations()["workspace_violation"] == pytest.approx(0.5)
    with pytest.raises(ParameterError):
        EtoProblem(mesh, basis, InformationMap.uniform(mesh), SensorModel(0.5), w, init,
                   state_lower=[0, 0, 3.0], state_upper=[1, 1, 2.0])


def test_solver_config_round_trip():
    cfg = SolverConfig(outer_iters=3, inner=LbfgsConfig(max_iters=7), restarts=2)
    back = SolverConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg


def test_small_solve_feasible_and_improves(sphere_problem_parts, tmp_path):
    p = make_problem(sphere_problem_parts, T=20, clearance=0.1, sigma=0.3, truncate=True)
    log = tmp_path / "ck.jsonl"
    cfg = SolverConfig(outer_iters=15, inner=LbfgsConfig(max_iters=200), checkpoint=str(log))
    r = solve_eto(p, cfg)
    assert r.feasible
    assert r.defect_inf <= 1e-6 and r.clearance_violation <= 1e-6 and r.bound_violation <= 1e-6
    assert r.metric < 0.5 * r.initial_metric
    lines = [json.loads(s) for s in log.read_text().splitlines()]
    assert len(lines) == r.outer_iterations
    assert {"metric", "defect_inf", "rho"} <= set(lines[0])
    summary = r.summary()
    assert summary["metric"] == r.metric
    again = solve_eto(p, SolverConfig(outer_iters=15, inner=LbfgsConfig(max_iters=200)))
    np.testing.assert_array_equal(again.trajectory.states, r.trajectory.states)


def test_restarts_are_seeded(sphere_problem_parts):
    p = make_problem(sphere_problem_parts, T=10, clearance=0.1, truncate=True)
    cfg = SolverConfig(outer_iters=3, inner=LbfgsConfig(max_iters=30), restarts=2, seed=5)
    a = solve_eto(p, cfg)
    b = solve_eto(p, cfg)
    np.testing.assert_array_equal(a.trajectory.states, b.trajectory.states)


def test_returns_feasible_start_when_no_progress(sphere_problem_parts):
    p = make_problem(sphere_problem_parts, T=10, clearance=0.0, truncate=True)
    r = solve_eto(p, SolverConfig(outer_iters=1, inner=LbfgsConfig(max_iters=0)))
    assert r.metric <= r.initial_metric
