"""Quick finite-difference and dense-oracle checks run by ``lcdeflate check``."""
from __future__ import annotations

import numpy as np

from .deflation import DeflationConfig, DeflationSet, deflated_update, eta_and_gradient
from .forms import hessian, lagrangian, residual
from .linsolve import LinearSolver
from .problems import PRESETS, Problem

CASES = {
    "nematic": PRESETS["tilt_twist"].problem,
    "electric": PRESETS["freedericksz"].problem,
    "cholesteric": PRESETS["cholesteric"].problem,
}


def random_state(problem: Problem, level: int, rng: np.random.Generator, scale: float = 0.2):
    """Guess perturbed on free dofs; boundary data untouched."""
    name = "chol_helical" if problem.model == "cholesteric" else "tilt_up"
    s = problem.guess(name, level)
    dofs = s.space.dofs
    return s.updated(scale * rng.standard_normal(dofs.n_free))


def gradient_error(problem: Problem, state, direction, h: float = 1e-5) -> float:
    p, m = problem.params, problem.model
    fd = (lagrangian(state.updated(direction, h), p, m) - lagrangian(state.updated(direction, -h), p, m)) / (2 * h)
    exact = residual(state, p, m) @ direction
    return abs(fd - exact) / max(abs(exact), 1e-300)


def hessian_error(problem: Problem, state, direction, h: float = 1e-6) -> float:
    p, m = problem.params, problem.model
    fd = (residual(state.updated(direction, h), p, m) - residual(state.updated(direction, -h), p, m)) / (2 * h)
    exact = hessian(state, p, m).jacobian @ direction
    return float(np.linalg.norm(fd - exact) / np.linalg.norm(exact))


def sherman_morrison_error(problem: Problem, level: int, n_roots: int, rng) -> float:
    p, m = problem.params, problem.model
    roots = DeflationSet([random_state(problem, level, rng) for _ in range(n_roots)])
    u = random_state(problem, level, rng)
    cfg = DeflationConfig()
    system = hessian(u, p, m)
    eta_val, d = eta_and_gradient(u, roots, cfg)
    upd, _ = deflated_update(system, d, eta_val, LinearSolver())
    A = system.residual
    JG = eta_val * system.jacobian.toarray() + np.outer(A, d)
    dense = np.linalg.solve(JG, -eta_val * A)
    return float(np.linalg.norm(upd - dense) / np.linalg.norm(dense))


def run_checks(seed: int = 0):
    """Yield ``(name, passed, value)`` triples."""
    rng = np.random.default_rng(seed)
    for name, prob in CASES.items():
        s = random_state(prob, 0, rng)
        v = rng.standard_normal(s.space.dofs.n_free)
        g = gradient_error(prob, s, v)
        yield f"gradient[{name}]", bool(g <= 1e-6), float(g)
        h = hessian_error(prob, s, v)
        yield f"hessian[{name}]", bool(h <= 1e-5), float(h)
    for k in (1, 2, 3):
        e = sherman_morrison_error(CASES["electric"], 0, k, rng)
        yield f"sherman_morrison[{k} roots]", bool(e <= 1e-8), float(e)
