"""Independent reference computations shared by the test modules."""

import numpy as np

from mesh_ergodic.mesh import vertex_areas
from mesh_ergodic.optim.eto import AugLagState, augmented_lagrangian_value_and_grad, pack, transcribe


def segment_closest(p, a, b):
    ab = b - a
    t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return a + t * ab


def brute_unsigned(mesh, p):
    """Exhaustive minimum over faces.

    Each face: project onto the plane; if the barycentric coordinates are all
    nonnegative that is the answer, otherwise take the best of the three
    clamped edge projections.
    """
    best = np.inf
    for tri in mesh.vertices[mesh.faces]:
        a, b, c = tri
        n = np.cross(b - a, c - a)
        n /= np.linalg.norm(n)
        q = p - ((p - a) @ n) * n
        T = np.column_stack([b - a, c - a])
        uv = np.linalg.lstsq(T, q - a, rcond=None)[0]
        if uv.min() >= 0 and uv.sum() <= 1:
            d = abs((p - a) @ n)
        else:
            d = min(np.linalg.norm(p - segment_closest(p, s, e)) for s, e in ((a, b), (b, c), (c, a)))
        best = min(best, d)
    return best


def winding_number(mesh, p):
    """Generalized winding number (solid angle sum / 4 pi)."""
    tri = mesh.vertices[mesh.faces] - p
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    la, lb, lc = (np.linalg.norm(x, axis=1) for x in (a, b, c))
    num = np.einsum("ij,ij->i", a, np.cross(b, c))
    den = la * lb * lc + np.einsum("ij,ij->i", a, b) * lc + np.einsum("ij,ij->i", b, c) * la \
        + np.einsum("ij,ij->i", c, a) * lb
    return np.sum(2 * np.arctan2(num, den)) / (4 * np.pi)


def brute_metric(mesh, basis, weights, phi, model, states):
    """Dense linear algebra with explicit loops over time and modes."""
    M = np.diag(vertex_areas(mesh))
    acc = np.zeros(mesh.n_vertices)
    for x in states:
        acc += np.exp(-np.sum((mesh.vertices - x) ** 2, axis=1) / (2 * model.sigma ** 2))
    acc /= len(states)
    mu = acc / (np.ones(mesh.n_vertices) @ M @ acc)
    total = 0.0
    for k in range(basis.K):
        f = basis.eigenvectors[:, k]
        total += weights[k] * (f @ M @ mu - f @ M @ phi) ** 2
    return total


def metric_fd_error(obj, states, rng, h=1e-6):
    _, g = obj.value_and_grad(states)
    d = rng.normal(size=states.shape)
    fd = (obj.value(states + h * d) - obj.value(states - h * d)) / (2 * h)
    an = float(np.sum(g * d))
    return abs(fd - an) / max(abs(an), abs(fd), 1e-300)


def al_fd_errors(problem, n_configs, seed, scaling):
    rng = np.random.default_rng(seed)
    tr = transcribe(problem)
    errs = []
    for _ in range(n_configs):
        state = AugLagState(
            eq=rng.normal(size=(problem.T, 3)),
            clearance=np.abs(rng.normal(size=problem.T)),
            upper=np.abs(rng.normal(size=(problem.T, 3))) * (rng.random((problem.T, 3)) < 0.5),
            lower=np.abs(rng.normal(size=(problem.T, 3))) * (rng.random((problem.T, 3)) < 0.5),
            rho=float(10 ** rng.uniform(0, 3)),
            state_upper=np.abs(rng.normal(size=(problem.T, 3))) * (rng.random((problem.T, 3)) < 0.5),
            state_lower=np.abs(rng.normal(size=(problem.T, 3))) * (rng.random((problem.T, 3)) < 0.5),
        )
        w = pack(problem, problem.initial) + rng.normal(scale=0.05, size=tr.n_vars)
        _, g = augmented_lagrangian_value_and_grad(state, w, problem, scaling)
        d = rng.normal(size=tr.n_vars)
        h = 1e-6
        fp = augmented_lagrangian_value_and_grad(state, w + h * d, problem, scaling)[0]
        fm = augmented_lagrangian_value_and_grad(state, w - h * d, problem, scaling)[0]
        fd = (fp - fm) / (2 * h)
        an = float(g @ d)
        errs.append(abs(fd - an) / max(abs(an), 1e-12))
    return np.array(errs)
