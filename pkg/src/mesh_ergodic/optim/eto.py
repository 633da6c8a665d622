"""Ergodic trajectory optimization by forward-Euler transcription and an
augmented Lagrangian with L-BFGS inner solves.

Decision vector layout: free states ``x_1..x_T`` (``x_T`` omitted when the
end is fixed) followed by controls ``u_0..u_{T-1}``, each flattened row-major.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..ergodic import ErgodicObjective, InformationMap, SensorModel, Trajectory
from ..errors import DegenerateCoverageError, DimensionError, ParameterError
from ..mesh import TriangleMesh
from ..sdf import DistanceIndex, build_distance_index, signed_distances
from ..spectral import SpectralBasis
from .lbfgs import LbfgsConfig, lbfgs_minimize

logger = logging.getLogger(__name__)


# -- initial guesses -------------------------------------------------------


def straight_line(start, end, T: int, dt: float) -> Trajectory:
    a, b = np.asarray(start, float), np.asarray(end, float)
    s = np.arange(T + 1)[:, None] / T
    return Trajectory(a + s * (b - a), dt)


def ring(center, radius: float, T: int, dt: float, axis=(0.0, 0.0, 1.0), phase: float = 0.0) -> Trajectory:
    """Closed circle about ``axis`` through ``center``; ``x_T == x_0``."""
    axis = np.asarray(axis, float)
    axis = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0, 0]) if abs(axis[0]) < 0.9 else np.array([0, 1.0, 0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    th = phase + 2.0 * np.pi * np.arange(T + 1) / T
    pts = np.asarray(center, float) + radius * (np.outer(np.cos(th), e1) + np.outer(np.sin(th), e2))
    pts[-1] = pts[0]
    return Trajectory(pts, dt)


def load_trajectory_csv(path) -> tuple[np.ndarray, float | None]:
    """Read ``t,x,y,z[,ux,uy,uz]`` rows; returns states and the time step if uniform."""
    # genfromtxt so the empty control cells on the final row read as NaN
    data = np.atleast_2d(np.genfromtxt(path, delimiter=",", skip_header=1))
    if data.shape[1] < 4:
        raise DimensionError("trajectory CSV needs columns t,x,y,z")
    if not np.all(np.isfinite(data[:, :4])):
        raise ParameterError("trajectory CSV has missing or non-numeric t,x,y,z entries")
    t = data[:, 0]
    dt = None
    if len(t) > 1:
        steps = np.diff(t)
        if np.allclose(steps, steps[0]):
            dt = float(steps[0])
    return data[:, 1:4], dt


def resample(states, T: int, dt: float) -> Trajectory:
    """Linear resampling over the sample index to ``T + 1`` states (endpoints kept)."""
    states = np.asarray(states, float)
    if len(states) < 2:
        raise DimensionError("need at least two states to resample")
    s_old = np.linspace(0.0, 1.0, len(states))
    s_new = np.linspace(0.0, 1.0, T + 1)
    out = np.column_stack([np.interp(s_new, s_old, states[:, k]) for k in range(3)])
    out[0], out[-1] = states[0], states[-1]
    return Trajectory(out, dt)


def initial_trajectory(kind: str, T: int, dt: float, **params) -> Trajectory:
    if kind == "straight_line":
        return straight_line(params["start"], params["end"], T, dt)
    if kind == "ring":
        return ring(params.get("center", (0, 0, 0)), params["radius"], T, dt,
                    params.get("axis", (0, 0, 1)), params.get("phase", 0.0))
    if kind == "file":
        states, _ = load_trajectory_csv(params["path"])
        traj = resample(states, T, dt)
        if traj.T != T:
            raise DimensionError(f"resampled trajectory has {traj.T} steps, expected {T}")
        return traj
    raise ParameterError(f"unknown initial trajectory kind {kind!r}")


# -- problem ---------------------------------------------------------------


@dataclass(eq=False)
class EtoProblem:
    mesh: TriangleMesh
    basis: SpectralBasis
    info_map: InformationMap
    model: SensorModel
    weights: np.ndarray
    initial: Trajectory
    lower: np.ndarray = field(default_factory=lambda: np.full(3, -1.0))
    upper: np.ndarray = field(default_factory=lambda: np.full(3, 1.0))
    clearance: float | None = None
    fix_end: bool = False
    end: np.ndarray | None = None
    state_lower: np.ndarray | None = None
    state_upper: np.ndarray | None = None

    def __post_init__(self):
        self.lower = np.broadcast_to(np.asarray(self.lower, float), (3,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, float), (3,)).copy()
        if self.T < 2:
            raise ParameterError(f"horizon must have at least 2 steps, got {self.T}")
        if np.any(self.lower > self.upper):
            raise ParameterError("control bounds must satisfy lower <= upper")
        for name in ("state_lower", "state_upper"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.broadcast_to(np.asarray(v, float), (3,)).copy())
        if (self.state_lower is not None and self.state_upper is not None
                and np.any(self.state_lower > self.state_upper)):
            raise ParameterError("workspace bounds must satisfy lower <= upper")
        if self.clearance is not None and self.clearance < 0:
            raise ParameterError("clearance must be nonnegative")
        if self.fix_end and self.end is None:
            self.end = self.initial.states[-1].copy()
        if self.end is not None:
            self.end = np.asarray(self.end, float)
        self.objective = ErgodicObjective(self.mesh, self.basis, self.weights, self.info_map, self.model)
        self._sdf: DistanceIndex | None = None

    @property
    def T(self) -> int:
        return self.initial.T

    @property
    def dt(self) -> float:
        return self.initial.dt

    @property
    def start(self) -> np.ndarray:
        return self.initial.states[0]

    @property
    def has_clearance(self) -> bool:
        return self.clearance is not None and self.clearance > 0

    @property
    def has_workspace(self) -> bool:
        return self.state_lower is not None or self.state_upper is not None

    @property
    def sdf(self) -> DistanceIndex:
        if self._sdf is None:
            self._sdf = build_distance_index(self.mesh)
        return self._sdf


@dataclass(frozen=True)
class Transcription:
    T: int
    fix_end: bool
    workspace_sides: int = 0

    @property
    def n_free_states(self) -> int:
        return self.T - 1 if self.fix_end else self.T

    @property
    def n_vars(self) -> int:
        return 3 * (self.n_free_states + self.T)

    @property
    def n_eq(self) -> int:
        return 3 * self.T

    @property
    def n_ineq(self) -> int:
        # clearance per state x_1..x_T, two box sides per control component,
        # and one row per state component for each workspace side in use
        return self.T + 6 * self.T + 3 * self.workspace_sides * self.T


def transcribe(problem: EtoProblem) -> Transcription:
    sides = (problem.state_lower is not None) + (problem.state_upper is not None)
    return Transcription(problem.T, problem.fix_end, sides)


def pack(problem: EtoProblem, traj: Trajectory) -> np.ndarray:
    tr = transcribe(problem)
    x = traj.states[1 : 1 + tr.n_free_states]
    return np.concatenate([x.ravel(), traj.controls.ravel()])


def unpack(problem: EtoProblem, w) -> tuple[np.ndarray, np.ndarray]:
    tr = transcribe(problem)
    nf = tr.n_free_states
    w = np.asarray(w, float)
    if w.shape != (tr.n_vars,):
        raise DimensionError(f"decision vector has shape {w.shape}, expected ({tr.n_vars},)")
    states = np.empty((problem.T + 1, 3))
    states[0] = problem.start
    states[1 : 1 + nf] = w[: 3 * nf].reshape(nf, 3)
    if problem.fix_end:
        states[-1] = problem.end
    controls = w[3 * nf :].reshape(problem.T, 3)
    return states, controls


@dataclass
class Constraints:
    defects: np.ndarray  # (T, 3)
    clearance: np.ndarray  # (T,) r - d(x_t), t = 1..T; zeros when disabled
    clearance_grad: np.ndarray  # (T, 3) d/dx of the clearance residual
    upper: np.ndarray  # (T, 3) u - ub
    lower: np.ndarray  # (T, 3) lb - u
    state_upper: np.ndarray | None = None  # (T, 3) x_t - x_ub, t = 1..T
    state_lower: np.ndarray | None = None  # (T, 3) x_lb - x_t

    def violations(self) -> dict:
        ws = [r.max() for r in (self.state_upper, self.state_lower) if r is not None]
        return {
            "defect_inf": float(np.abs(self.defects).max()),
            "clearance_violation": float(max(self.clearance.max(initial=0.0), 0.0)),
            "bound_violation": float(max(self.upper.max(), self.lower.max(), 0.0)),
            "workspace_violation": float(max(*ws, 0.0, 0.0)),
        }


def evaluate_constraints(problem: EtoProblem, states, controls) -> Constraints:
    T = problem.T
    defects = states[1:] - states[:-1] - problem.dt * controls
    if problem.has_clearance:
        d, _, grad = signed_distances(problem.sdf, states[1:])
        clear = problem.clearance - d
        cgrad = -grad
    else:
        clear = np.zeros(T)
        cgrad = np.zeros((T, 3))
    su = None if problem.state_upper is None else states[1:] - problem.state_upper
    sl = None if problem.state_lower is None else problem.state_lower - states[1:]
    return Constraints(defects, clear, cgrad, controls - problem.upper, problem.lower - controls, su, sl)


@dataclass
class AugLagState:
    """Multipliers and penalty; inequality multipliers stay nonnegative."""

    eq: np.ndarray
    clearance: np.ndarray
    upper: np.ndarray
    lower: np.ndarray
    rho: float
    state_upper: np.ndarray | None = None
    state_lower: np.ndarray | None = None

    @classmethod
    def zeros(cls, T: int, rho: float = 10.0) -> "AugLagState":
        if not rho > 0:
            raise ParameterError("penalty must be positive")
        return cls(np.zeros((T, 3)), np.zeros(T), np.zeros((T, 3)), np.zeros((T, 3)), float(rho),
                   np.zeros((T, 3)), np.zeros((T, 3)))


@dataclass(frozen=True)
class Scaling:
    """Characteristic magnitudes used to nondimensionalize the subproblem.

    The metric is divided by ``objective``; defects and clearance residuals
    by ``length``; control-bound residuals by ``speed``. All ones reproduces
    the unscaled augmented Lagrangian.
    """

    objective: float = 1.0
    length: float = 1.0
    speed: float = 1.0


def _ineq_terms(mult, resid, rho):
    """Value and d/dresid of ``(1/2rho) (max(0, mult + rho*resid)^2 - mult^2)``."""
    shifted = np.maximum(0.0, mult + rho * resid)
    return float(((shifted ** 2 - mult ** 2) / (2.0 * rho)).sum()), shifted


def augmented_lagrangian_value_and_grad(state: AugLagState, w, problem: EtoProblem,
                                        scaling: Scaling = Scaling()):
    """Augmented Lagrangian and its gradient with respect to the decision vector."""
    states, controls = unpack(problem, w)
    E, dE = problem.objective.value_and_grad(states)
    con = evaluate_constraints(problem, states, controls)
    rho = state.rho
    L, S, V = scaling.length, scaling.speed, scaling.objective

    value = E / V
    gx = dE / V
    gu = np.zeros_like(controls)

    c = con.defects / L
    value += float((state.eq * c).sum() + 0.5 * rho * (c ** 2).sum())
    p = (state.eq + rho * c) / L
    gx[1:] += p
    gx[:-1] -= p
    gu -= problem.dt * p

    if problem.has_clearance:
        v, shifted = _ineq_terms(state.clearance, con.clearance / L, rho)
        value += v
        gx[1:] += (shifted / L)[:, None] * con.clearance_grad

    v, shifted = _ineq_terms(state.upper, con.upper / S, rho)
    value += v
    gu += shifted / S
    v, shifted = _ineq_terms(state.lower, con.lower / S, rho)
    value += v
    gu -= shifted / S

    if con.state_upper is not None:
        v, shifted = _ineq_terms(state.state_upper, con.state_upper / L, rho)
        value += v
        gx[1:] += shifted / L
    if con.state_lower is not None:
        v, shifted = _ineq_terms(state.state_lower, con.state_lower / L, rho)
        value += v
        gx[1:] -= shifted / L

    nf = transcribe(problem).n_free_states
    grad = np.concatenate([gx[1 : 1 + nf].ravel(), gu.ravel()])
    return value, grad


# -- solver ----------------------------------------------------------------


@dataclass
class SolverConfig:
    """Outer-loop settings.

    A small initial penalty lets early iterates trade a little constraint
    violation for coverage; the multipliers then pull them back. The outer
    loop stops once the iterate is feasible and either the inner solve has
    converged or the metric moved by less than ``objective_rtol`` relative
    to the previous outer iteration.
    """

    outer_iters: int = 15
    rho0: float = 0.1
    rho_growth: float = 10.0
    rho_max: float = 1e8
    constraint_tol: float = 1e-6
    objective_rtol: float = 1e-2
    inner: LbfgsConfig = field(default_factory=lambda: LbfgsConfig(max_iters=2000, grad_tol=1e-7))
    seed: int = 0
    restarts: int = 0
    restart_noise: float = 0.02
    scale: bool = True
    checkpoint: str | None = None

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["inner"] = dict(self.inner.__dict__)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        d = dict(d)
        inner = replace(cls().inner, **d.pop("inner", {}))
        return cls(inner=inner, **d)


@dataclass(eq=False)
class EtoResult:
    trajectory: Trajectory
    metric: float
    initial_metric: float
    defect_inf: float
    clearance_violation: float
    bound_violation: float
    outer_iterations: int
    inner_iterations: int
    evaluations: int
    converged: bool
    feasible: bool
    wall_time: float
    history: list = field(default_factory=list)
    workspace_violation: float = 0.0

    def summary(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k not in ("trajectory", "history")}
        d["history"] = self.history
        return d


def _violations(problem, states, controls):
    return evaluate_constraints(problem, states, controls).violations()


def _is_feasible(v, tol):
    return all(v[k] <= tol for k in ("defect_inf", "clearance_violation", "bound_violation",
                                     "workspace_violation"))


def default_scaling(problem: EtoProblem, metric: float) -> Scaling:
    span = np.maximum(np.abs(problem.lower), np.abs(problem.upper)).max()
    speed = float(span) if span > 0 else 1.0
    return Scaling(objective=metric if metric > 1e-300 else 1.0, length=problem.model.sigma, speed=speed)


def _solve_once(problem: EtoProblem, cfg: SolverConfig, init: Trajectory, log) -> EtoResult:
    t0 = time.perf_counter()
    tr = transcribe(problem)
    E0 = problem.objective.value(init.states)  # raises on degenerate coverage
    scaling = default_scaling(problem, E0) if cfg.scale else Scaling()
    var_scale = np.concatenate([np.full(3 * tr.n_free_states, scaling.length),
                                np.full(3 * tr.T, scaling.length / problem.dt)])
    state = AugLagState.zeros(problem.T, cfg.rho0)

    def fun(y):
        try:
            val, g = augmented_lagrangian_value_and_grad(state, y * var_scale, problem, scaling)
        except DegenerateCoverageError:  # a trial step left the mesh entirely; make the search back off
            return np.inf, np.zeros_like(y)
        return val, g * var_scale

    y = pack(problem, init) / var_scale
    inner_total = evals = 0
    prev_viol = np.inf
    prev_metric = np.inf
    converged = False
    history = []
    outer = 0
    for outer in range(1, cfg.outer_iters + 1):
        res = lbfgs_minimize(fun, y, cfg.inner)
        y = res.x
        inner_total += res.iterations
        evals += res.evaluations
        states, controls = unpack(problem, y * var_scale)
        con = evaluate_constraints(problem, states, controls)
        viol = con.violations()
        metric = problem.objective.value(states)
        record = {"iteration": outer, "metric": metric, **viol, "rho": state.rho,
                  "inner_iterations": res.iterations, "inner_converged": res.converged}
        history.append(record)
        if log is not None:
            log.write(json.dumps(record) + "\n")
            log.flush()
        logger.info("outer %d: E=%.6g defect=%.3g clear=%.3g bound=%.3g workspace=%.3g rho=%.3g inner=%d",
                    outer, metric, viol["defect_inf"], viol["clearance_violation"],
                    viol["bound_violation"], viol["workspace_violation"], state.rho, res.iterations)
        feasible = _is_feasible(viol, cfg.constraint_tol)
        settled = abs(prev_metric - metric) <= cfg.objective_rtol * metric
        prev_metric = metric
        if feasible and (res.converged or res.stalled or settled):
            converged = True
            break

        # first-order multiplier update on the scaled residuals
        state.eq = state.eq + state.rho * con.defects / scaling.length
        if problem.has_clearance:
            state.clearance = np.maximum(0.0, state.clearance + state.rho * con.clearance / scaling.length)
        state.upper = np.maximum(0.0, state.upper + state.rho * con.upper / scaling.speed)
        state.lower = np.maximum(0.0, state.lower + state.rho * con.lower / scaling.speed)
        if con.state_upper is not None:
            state.state_upper = np.maximum(0.0, state.state_upper + state.rho * con.state_upper / scaling.length)
        if con.state_lower is not None:
            state.state_lower = np.maximum(0.0, state.state_lower + state.rho * con.state_lower / scaling.length)
        scaled = max(viol["defect_inf"] / scaling.length, viol["clearance_violation"] / scaling.length,
                     viol["workspace_violation"] / scaling.length, viol["bound_violation"] / scaling.speed)
        if scaled > 0.25 * prev_viol:
            state.rho = min(cfg.rho_max, state.rho * cfg.rho_growth)
        prev_viol = scaled

    states, controls = unpack(problem, y * var_scale)
    traj = Trajectory(states, problem.dt, controls)
    viol = _violations(problem, states, controls)
    metric = problem.objective.value(states)
    return EtoResult(traj, metric, E0, viol["defect_inf"], viol["clearance_violation"],
                     viol["bound_violation"], outer, inner_total, evals, converged,
                     _is_feasible(viol, cfg.constraint_tol), time.perf_counter() - t0, history,
                     viol["workspace_violation"])


def _perturbed(problem: EtoProblem, rng, noise: float) -> Trajectory:
    x = problem.initial.states.copy()
    x[1:] += rng.normal(scale=noise * problem.mesh.scale(), size=x[1:].shape)
    if problem.fix_end:
        x[-1] = problem.end
    u = np.clip(np.diff(x, axis=0) / problem.dt, problem.lower, problem.upper)
    return Trajectory(x, problem.dt, u)


def solve_eto(problem: EtoProblem, config: SolverConfig | None = None) -> EtoResult:
    """Solve the transcribed problem; with ``restarts`` > 0 also try seeded
    perturbations of the initial trajectory and keep the best feasible run.
    """
    cfg = config or SolverConfig()
    log = open(cfg.checkpoint, "a", encoding="utf-8") if cfg.checkpoint else None
    try:
        t0 = time.perf_counter()
        init = problem.initial
        init_viol = _violations(problem, init.states, init.controls)
        e_init = problem.objective.value(init.states)
        best = _solve_once(problem, cfg, init, log)
        rng = np.random.default_rng(cfg.seed)
        for _ in range(cfg.restarts):
            cand = _solve_once(problem, cfg, _perturbed(problem, rng, cfg.restart_noise), log)
            if (cand.feasible, -cand.metric) > (best.feasible, -best.metric):
                best = cand
        # never hand back something worse than a feasible starting guess
        if _is_feasible(init_viol, cfg.constraint_tol) and e_init < best.metric:
            best = replace(best, trajectory=init, metric=e_init, feasible=True, **init_viol)
        best.initial_metric = e_init
        best.wall_time = time.perf_counter() - t0
        return best
    finally:
        if log is not None:
            log.close()
