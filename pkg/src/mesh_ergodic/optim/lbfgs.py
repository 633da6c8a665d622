"""Limited-memory BFGS with a strong-Wolfe line search."""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.optimize import line_search
from scipy.optimize._linesearch import LineSearchWarning


@dataclass
class LbfgsConfig:
    memory: int = 20
    max_iters: int = 500
    grad_tol: float = 1e-6
    ftol: float = 1e-12
    c1: float = 1e-4
    c2: float = 0.9
    max_line_search: int = 30


@dataclass
class LbfgsResult:
    x: np.ndarray
    f: float
    grad: np.ndarray
    iterations: int
    evaluations: int
    converged: bool
    stalled: bool
    message: str


class _Memo:
    """Caches the last few (f, g) evaluations so f and g share one call."""

    def __init__(self, fun):
        self.fun = fun
        self.cache = {}
        self.calls = 0

    def __call__(self, x):
        key = x.tobytes()
        hit = self.cache.get(key)
        if hit is None:
            f, g = self.fun(x)
            hit = (float(f), np.asarray(g, dtype=float))
            self.calls += 1
            if len(self.cache) > 8:
                self.cache.pop(next(iter(self.cache)))
            self.cache[key] = hit
        return hit

    def f(self, x):
        return self(x)[0]

    def g(self, x):
        return self(x)[1]


def _backtrack(f, x, f0, g, p, c1, shrink=0.5, max_halvings=60):
    """Armijo backtracking from a unit step; ``(None, None)`` if nothing decreases."""
    slope = g @ p
    step = 1.0
    for _ in range(max_halvings):
        x_new = x + step * p
        if np.array_equal(x_new, x):  # step below round-off
            break
        f_new = f(x_new)
        if np.isfinite(f_new) and f_new < f0 and f_new <= f0 + c1 * step * slope:
            return step, f_new
        step *= shrink
    return None, None


def lbfgs_minimize(fun, x0, config: LbfgsConfig | None = None) -> LbfgsResult:
    """Minimize ``fun`` (returning ``(value, gradient)``) from ``x0``.

    Stops when the gradient infinity-norm reaches ``grad_tol`` or after
    ``max_iters`` iterations. When the strong-Wolfe search fails, Armijo
    backtracking along the steepest-descent direction is tried; if that also
    fails, or its step lowers ``f`` by no more than ``ftol * |f|``, the run
    ends with ``stalled=True`` and the best iterate found.
    """
    cfg = config or LbfgsConfig()
    memo = _Memo(fun)
    x = np.array(x0, dtype=float)
    f, g = memo(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise FloatingPointError("objective is not finite at the starting point")

    pairs: deque = deque(maxlen=cfg.memory)
    old_f = f + 0.5 * np.linalg.norm(g)
    it = 0
    stalled = False
    message = "maximum iterations reached"
    while True:
        if np.max(np.abs(g), initial=0.0) <= cfg.grad_tol:
            message = "gradient tolerance reached"
            break
        if it >= cfg.max_iters:
            break

        # two-loop recursion
        q = -g
        alphas = []
        for s, y, rho in reversed(pairs):
            a = rho * (s @ q)
            alphas.append(a)
            q = q - a * y
        if pairs:
            s, y, _ = pairs[-1]
            q *= (s @ y) / (y @ y)
        for (s, y, rho), a in zip(pairs, reversed(alphas)):
            b = rho * (y @ q)
            q = q + (a - b) * s
        p = q
        if g @ p >= 0:  # not a descent direction; restart from steepest descent
            pairs.clear()
            p = -g

        with np.errstate(all="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", LineSearchWarning)
            step, _, _, f_new, old_f_tmp, _ = line_search(
                memo.f, memo.g, x, p, gfk=g, old_fval=f, old_old_fval=old_f,
                c1=cfg.c1, c2=cfg.c2, maxiter=cfg.max_line_search,
            )
        if step is None and pairs:
            pairs.clear()
            p = -g
            with np.errstate(all="ignore"), warnings.catch_warnings():
                warnings.simplefilter("ignore", LineSearchWarning)
                step, _, _, f_new, old_f_tmp, _ = line_search(
                    memo.f, memo.g, x, p, gfk=g, old_fval=f, old_old_fval=old_f,
                    c1=cfg.c1, c2=cfg.c2, maxiter=cfg.max_line_search,
                )
        fallback = step is None or f_new is None or not np.isfinite(f_new) or f_new > f
        if fallback:
            # the Wolfe search cannot shrink far enough when curvature is stiff
            p = -g
            step, f_new = _backtrack(memo.f, x, f, g, p, cfg.c1)
        if step is None:
            stalled = True
            message = "line search failed"
            break

        x_new = x + step * p
        f_new, g_new = memo(x_new)
        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            pairs.append((s, y, 1.0 / sy))
        decrease = f - f_new
        old_f = f
        x, f, g = x_new, f_new, g_new
        it += 1
        if fallback and decrease <= cfg.ftol * abs(old_f):  # round-off crawl
            stalled = True
            message = "relative decrease below ftol"
            break

    converged = bool(np.max(np.abs(g), initial=0.0) <= cfg.grad_tol)
    return LbfgsResult(x, f, g, it, memo.calls, converged, stalled, message)
