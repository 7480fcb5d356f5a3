"""Shifted multiple deflation and Sherman-Morrison deflated Newton updates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .forms import State, gram_matrix

ROOT_TOL = 1e-12
DISTINCT_TOL = 1e-3


class AtKnownRoot(ArithmeticError):
    """The iterate coincides with a deflated root, where eta is singular."""


class SingularUpdate(ArithmeticError):
    """Sherman-Morrison denominator 1 + d^T J^-1 A / eta vanished."""


@dataclass(frozen=True)
class DeflationConfig:
    p: float = 3.0
    alpha: float = 1.0

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("deflation exponent p must be >= 1")
        if self.alpha < 0:
            raise ValueError("deflation shift alpha must be >= 0")


@dataclass
class DeflationSet:
    roots: list = field(default_factory=list)

    def __len__(self):
        return len(self.roots)

    def __iter__(self):
        return iter(self.roots)

    def add(self, state: State) -> None:
        if self.roots and state.space.mesh != self.roots[0].space.mesh:
            raise ValueError("all deflated roots must live on the same mesh")
        self.roots.append(state)


def _same_space(a: State, b: State):
    if a.space.mesh != b.space.mesh or a.space.dofs.n_stored != b.space.dofs.n_stored:
        raise ValueError("states live on different meshes")


def u_distance_sq(a: State, b: State) -> float:
    """Squared U-norm of ``a - b`` (director H(div) and H(curl) norm, potential H1, multiplier L2)."""
    _same_space(a, b)
    diff = a.u - b.u
    return float(diff @ (gram_matrix(a.space) @ diff))


def _factors(u: State, dset: DeflationSet, cfg: DeflationConfig):
    M = gram_matrix(u.space)
    diffs, dist2 = [], []
    for r in dset:
        _same_space(u, r)
        diff = u.u - r.u
        Md = M @ diff
        diffs.append(Md)
        dist2.append(float(diff @ Md))
    dist2 = np.asarray(dist2)
    if np.any(np.sqrt(np.maximum(dist2, 0.0)) <= ROOT_TOL):
        raise AtKnownRoot("iterate coincides with a deflated root")
    inv = dist2 ** (-cfg.p / 2)
    return diffs, dist2, inv + cfg.alpha


def eta(u: State, dset: DeflationSet, cfg: DeflationConfig) -> float:
    """Product of shifted inverse distances; 1 for an empty set."""
    if len(dset) == 0:
        return 1.0
    _, _, fac = _factors(u, dset, cfg)
    return float(np.prod(fac))


def eta_and_gradient(u: State, dset: DeflationSet, cfg: DeflationConfig):
    """``(eta, d)`` with ``d`` the gradient of eta over free dofs."""
    dofs = u.space.dofs
    if len(dset) == 0:
        return 1.0, np.zeros(dofs.n_free)
    Mdiffs, dist2, fac = _factors(u, dset, cfg)
    total = float(np.prod(fac))
    grad = np.zeros(dofs.n_stored)
    for i, (Md, d2) in enumerate(zip(Mdiffs, dist2)):
        others = float(np.prod(np.delete(fac, i)))
        grad += others * (-cfg.p) * d2 ** (-cfg.p / 2 - 1) * Md
    # P^T folds periodic slave contributions onto masters, drops Dirichlet
    return total, dofs.expansion.T @ grad


def eta_gradient(u: State, dset: DeflationSet, cfg: DeflationConfig) -> np.ndarray:
    return eta_and_gradient(u, dset, cfg)[1]


@dataclass
class InnerReport:
    iterations: int
    dot: float
    scale: float


def deflated_update(system, d: np.ndarray, eta_val: float, solver):
    """Newton update of the deflated system from one undeflated solve.

    With ``y = J_A^-1 A`` and ``s = d.y`` the Sherman-Morrison formula gives
    ``-(1 - (s/eta) / (1 + s/eta)) y``.
    """
    y, its = solver.solve(system, system.residual)
    s = float(d @ y)
    denom = 1.0 + s / eta_val
    if denom == 0.0 or not np.isfinite(denom):
        raise SingularUpdate("Sherman-Morrison denominator vanished")
    scale = 1.0 - (s / eta_val) / denom
    return -scale * y, InnerReport(its, s, scale)
