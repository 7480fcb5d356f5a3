"""Damped Newton iterations for the undeflated and deflated optimality systems."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .deflation import (
    DISTINCT_TOL,
    AtKnownRoot,
    DeflationConfig,
    SingularUpdate,
    deflated_update,
    eta_and_gradient,
    u_distance_sq,
)
from .forms import State, hessian, mean_director_length
from .linsolve import SolverStall

log = logging.getLogger(__name__)

STATUSES = ("converged", "max_iters", "blowup", "solver_stall", "at_known_root")


@dataclass(frozen=True)
class DampingSchedule:
    """Per-level damping ``clamp(omega0 +/- level * delta, min_omega, max_omega)``."""

    omega0: float
    delta: float = 0.0
    mode: str = "increasing"
    min_omega: float = 0.1
    max_omega: float = 1.0

    def __post_init__(self):
        if not 0 < self.omega0 <= 1:
            raise ValueError("initial damping must lie in (0, 1]")
        if self.mode not in ("increasing", "decreasing"):
            raise ValueError(f"unknown damping mode {self.mode!r}")

    def omega(self, level: int) -> float:
        sign = 1.0 if self.mode == "increasing" else -1.0
        w = self.omega0 + sign * level * self.delta
        return float(min(max(w, self.min_omega), self.max_omega))


@dataclass(frozen=True)
class NewtonConfig:
    fooc_tol: float = 1e-4
    max_iters: int = 100
    blowup_mean_length: float = 3.0
    # accepted roots are refined to this residual before being deflated; 0 disables
    polish_tol: float = 1e-10
    polish_iters: int = 8


@dataclass
class NewtonOutcome:
    status: str
    state: State
    iterations: int
    residuals: list = field(default_factory=list)
    linear_iterations: list = field(default_factory=list)
    cycles: Counter = field(default_factory=Counter)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def newton_solve(
    state0: State,
    params,
    model: str,
    solver,
    omega: float = 1.0,
    cfg: NewtonConfig | None = None,
    deflation=None,
    deflation_cfg: DeflationConfig | None = None,
) -> NewtonOutcome:
    """Iterate ``u <- u + omega * du`` until the undeflated residual is below tolerance.

    With a non-empty ``deflation`` set, ``du`` is the deflated Newton step
    computed matrix-free from the same ``solver``.  Failures are reported via
    ``status``; nothing is raised.
    """
    cfg = cfg or NewtonConfig()
    deflation_cfg = deflation_cfg or DeflationConfig()
    deflate = deflation is not None and len(deflation) > 0
    state = state0.copy()
    before = solver.meter.snapshot()
    out = NewtonOutcome("max_iters", state, 0)

    def finish(status):
        out.status = status
        out.state = state
        out.cycles = solver.meter.snapshot() - before
        return out

    for k in range(cfg.max_iters + 1):
        if mean_director_length(state) > cfg.blowup_mean_length:
            return finish("blowup")
        system = hessian(state, params, model)
        res = float(np.linalg.norm(system.residual))
        out.residuals.append(res)
        if not np.isfinite(res):
            return finish("blowup")
        if res <= cfg.fooc_tol:
            if deflate and any(u_distance_sq(state, r) <= DISTINCT_TOL**2 for r in deflation):
                return finish("at_known_root")
            return finish("converged")
        if k == cfg.max_iters:
            break
        try:
            if deflate:
                eta_val, d = eta_and_gradient(state, deflation, deflation_cfg)
                du, report = deflated_update(system, d, eta_val, solver)
                its = report.iterations
            else:
                y, its = solver.solve(system, system.residual)
                du = -y
        except AtKnownRoot:
            return finish("at_known_root")
        except SingularUpdate:
            log.debug("singular deflated update at iteration %d", k)
            return finish("solver_stall")
        except SolverStall:
            return finish("solver_stall")
        out.linear_iterations.append(its)
        state = state.updated(du, omega)
        out.iterations += 1
    return finish("max_iters")
