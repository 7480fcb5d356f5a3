"""Inner linear solvers for the Newton systems.

Right-preconditioned GMRES with either a sparse direct factorization or a
geometric multigrid V(1,1) cycle (Braess-Sarazin relaxation, Galerkin
coarse operators, direct coarsest solve) as preconditioner.
"""
from __future__ import annotations

import logging
import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .mesh import build_mesh, free_prolongation

log = logging.getLogger(__name__)

PRECONDITIONERS = ("multigrid", "direct", "none")


class SolverStall(RuntimeError):
    """GMRES hit its iteration budget before reaching the tolerance."""


class RelaxationSingular(ArithmeticError):
    """Zero diagonal entry in the primal block of a saddle-point relaxation."""


@dataclass(frozen=True)
class LinearSolveConfig:
    rel_tol: float = 1e-6
    max_krylov: int = 200
    preconditioner: str = "direct"
    pre_sweeps: int = 1
    post_sweeps: int = 1
    bs_scale: float = 1.5
    # direct preconditioner: keep the last LU while GMRES converges within this
    # many iterations, refactor otherwise; 0 refactors every system
    reuse_krylov: int = 8

    def __post_init__(self):
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


# --------------------------------------------------------------------------
# work units
# --------------------------------------------------------------------------

@dataclass
class WorkUnitMeter:
    """V-cycle counts per mesh level; ``finest`` is the reference level."""

    counts: Counter = field(default_factory=Counter)
    finest: int | None = None

    def record(self, level: int, cycles: int = 1) -> None:
        self.counts[level] += cycles

    def total_cycles(self) -> int:
        return sum(self.counts.values())

    def snapshot(self) -> Counter:
        return Counter(self.counts)


def work_units(meter: WorkUnitMeter, finest: int | None = None) -> float:
    """Fine-grid equivalent work: cycles at coarsening depth l weigh (1/4)^l."""
    if not meter.counts:
        return 0.0
    top = finest if finest is not None else meter.finest
    if top is None:
        top = max(meter.counts)
    return float(sum(c * 0.25 ** (top - lev) for lev, c in meter.counts.items()))


# --------------------------------------------------------------------------
# GMRES
# --------------------------------------------------------------------------

def gmres(matvec, b, precond=None, rel_tol=1e-6, max_iter=200):
    """Right-preconditioned GMRES without restarts, started from x0 = 0.

    Returns ``(x, iterations, residual_history)``; the history holds the
    (true, since preconditioning is on the right) residual norms.
    Raises :class:`SolverStall` when ``max_iter`` is exhausted.
    """
    n = len(b)
    precond = precond or (lambda v: v)
    beta = np.linalg.norm(b)
    history = [beta]
    if beta == 0.0:
        return np.zeros(n), 0, history
    m = min(max_iter, n)
    V = np.zeros((m + 1, n))
    Z = np.zeros((m, n))
    Hs = np.zeros((m + 1, m))
    cs = np.zeros(m)
    sn = np.zeros(m)
    g = np.zeros(m + 1)
    g[0] = beta
    V[0] = b / beta
    k = 0
    for k in range(m):
        Z[k] = precond(V[k])
        w = matvec(Z[k])
        for _ in range(2):  # classical Gram-Schmidt, reorthogonalized
            h = V[: k + 1] @ w
            w = w - h @ V[: k + 1]
            Hs[: k + 1, k] += h
        Hs[k + 1, k] = np.linalg.norm(w)
        breakdown = Hs[k + 1, k] <= 1e-14 * np.linalg.norm(Hs[: k + 1, k])
        if not breakdown:
            V[k + 1] = w / Hs[k + 1, k]
        for i in range(k):
            t = cs[i] * Hs[i, k] + sn[i] * Hs[i + 1, k]
            Hs[i + 1, k] = -sn[i] * Hs[i, k] + cs[i] * Hs[i + 1, k]
            Hs[i, k] = t
        r = np.hypot(Hs[k, k], Hs[k + 1, k])
        cs[k], sn[k] = (1.0, 0.0) if r == 0 else (Hs[k, k] / r, Hs[k + 1, k] / r)
        Hs[k, k] = r
        Hs[k + 1, k] = 0.0
        g[k + 1] = -sn[k] * g[k]
        g[k] = cs[k] * g[k]
        history.append(abs(g[k + 1]))
        if abs(g[k + 1]) <= rel_tol * beta or breakdown:
            break
    else:
        k = m - 1
    its = k + 1
    y = la.solve_triangular(Hs[:its, :its], g[:its])
    x = y @ Z[:its]
    if history[-1] > rel_tol * beta:
        res = np.linalg.norm(b - matvec(x))
        if res > rel_tol * beta:
            raise SolverStall(f"GMRES stalled after {its} iterations (ratio {res / beta:.2e})")
    return x, its, history


# --------------------------------------------------------------------------
# sparse direct factorization
# --------------------------------------------------------------------------

def nested_dissection_ranks(nodes_per_side: int, periodic_x: bool) -> np.ndarray:
    """Elimination rank of every Q2 node from geometric nested dissection.

    Separators are lines of vertex nodes (even indices), which no Q2 cell
    straddles.  For periodic meshes the x = 0 column is an extra top-level
    separator.
    """
    M = nodes_per_side
    order = []

    def block(i0, i1, j0, j1):
        ii, jj = np.meshgrid(np.arange(i0, i1), np.arange(j0, j1), indexing="ij")
        order.append((ii * M + jj).ravel())

    def split(i0, i1, j0, j1):
        wi, wj = i1 - i0, j1 - j0
        if wi * wj <= 9 or (wi <= 3 and wj <= 3):
            block(i0, i1, j0, j1)
            return
        if wi >= wj:
            s = i0 + wi // 2
            s -= s % 2
            s = s + 2 if s <= i0 else s
            split(i0, s, j0, j1)
            split(s + 1, i1, j0, j1)
            block(s, s + 1, j0, j1)
        else:
            s = j0 + wj // 2
            s -= s % 2
            s = s + 2 if s <= j0 else s
            split(i0, i1, j0, s)
            split(i0, i1, s + 1, j1)
            block(i0, i1, s, s + 1)

    if periodic_x:
        split(1, M, 0, M)
        block(0, 1, 0, M)
    else:
        split(0, M, 0, M)
    order = np.concatenate(order)
    rank = np.empty(M * M, dtype=np.int64)
    rank[order] = np.arange(M * M)
    return rank


def dof_elimination_order(space) -> np.ndarray:
    """Permutation of free dofs: node-wise nested dissection, multiplier last per cell."""
    dofs = space.dofs
    mesh = space.mesh
    M, N, Nn = mesh.nodes_per_side, mesh.cells_per_side, mesh.n_nodes
    stored = dofs.free_to_stored
    is_lam = stored >= dofs.lam_offset
    cell = stored - dofs.lam_offset
    node = np.where(is_lam, (2 * (cell // N) + 1) * M + 2 * (cell % N) + 1, stored % Nn)
    fld = np.where(is_lam, dofs.n_q2_fields, stored // Nn)
    rank = nested_dissection_ranks(M, mesh.periodic_x)
    return np.argsort(rank[node] * 8 + fld, kind="stable")


class DirectFactor:
    """Sparse LU of a symmetrically scaled, reordered matrix.

    Diagonal pivoting with a nested-dissection order keeps fill low on the
    saddle-point systems; if that factorization breaks down, SuperLU is
    rerun with its own column ordering and partial pivoting.
    """

    def __init__(self, A: sp.spmatrix, perm: np.ndarray | None = None):
        A = sp.csr_matrix(A)
        rowmax = np.asarray(abs(A).max(axis=1).todense()).ravel()
        rowmax[rowmax == 0] = 1.0
        self.scale = 1.0 / np.sqrt(rowmax)
        As = sp.diags(self.scale) @ A @ sp.diags(self.scale)
        self.perm = perm
        self.lu = None
        if perm is not None:
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("error")
                    self.lu = sla.splu(
                        As[perm][:, perm].tocsc(),
                        permc_spec="NATURAL",
                        diag_pivot_thresh=0.0,
                        options=dict(SymmetricMode=True),
                    )
            except (RuntimeError, Warning):
                log.debug("ordered factorization failed; falling back to pivoting LU")
                self.lu = None
        if self.lu is None:
            self.perm = None
            self.lu = sla.splu(As.tocsc())

    def solve(self, b: np.ndarray) -> np.ndarray:
        bs = self.scale * b
        if self.perm is None:
            x = self.lu.solve(bs)
        else:
            x = np.empty_like(bs)
            x[self.perm] = self.lu.solve(bs[self.perm])
        return self.scale * x


def _coarse_direct(A):
    """Coarsest-level solve; singular systems fall back to a pseudo-inverse."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            lu = sla.splu(sp.csc_matrix(A))
        return lu.solve
    except (RuntimeError, Warning):
        warnings.warn("coarsest multigrid matrix is singular; using pseudo-inverse")
        pinv = np.linalg.pinv(A.toarray())
        return lambda b: pinv @ b


# --------------------------------------------------------------------------
# Braess-Sarazin relaxation
# --------------------------------------------------------------------------

@dataclass
class SaddleBlocks:
    """Split of a level matrix into primal (director/potential) and multiplier parts."""

    K: sp.csr_matrix
    lam_mask: np.ndarray
    scale: float = 1.5

    def __post_init__(self):
        self.primal = np.flatnonzero(~self.lam_mask)
        self.mult = np.flatnonzero(self.lam_mask)
        K = self.K
        self.A = K[self.primal][:, self.primal]
        self.B = K[self.mult][:, self.primal].tocsr()
        self.diag = self.scale * self.A.diagonal()
        self._schur = None

    def schur_solver(self):
        if self._schur is None:
            if np.any(self.diag == 0.0):
                raise RelaxationSingular("zero diagonal entry in the primal block")
            Dinv = sp.diags(1.0 / self.diag)
            S = (self.B @ Dinv @ self.B.T).tocsc()
            if len(self.mult) == 0 or S.nnz == 0:
                self._schur = lambda r: np.zeros(len(self.mult))
            else:
                self._schur = sla.splu(S).solve
        return self._schur


def braess_sarazin_relax(blocks: SaddleBlocks, rhs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """One sweep with the primal block replaced by ``scale * diag(A)``.

    Solves ``[D B^T; B 0] dx = r`` exactly through the Schur complement
    ``B D^-1 B^T`` and returns ``x + dx``.
    """
    r = rhs - blocks.K @ x
    ru, rl = r[blocks.primal], r[blocks.mult]
    solve_s = blocks.schur_solver()
    dl = solve_s(blocks.B @ (ru / blocks.diag) - rl)
    du = (ru - blocks.B.T @ dl) / blocks.diag
    out = x.copy()
    out[blocks.primal] += du
    out[blocks.mult] += dl
    return out


def damped_jacobi(K: sp.csr_matrix, rhs, x, weight=2.0 / 3.0):
    d = np.asarray(abs(K).sum(axis=1)).ravel()
    d[d == 0] = 1.0
    return x + weight * (rhs - K @ x) / d


# --------------------------------------------------------------------------
# multigrid
# --------------------------------------------------------------------------

class MgHierarchy:
    """Galerkin hierarchy from a fine free-space matrix down to level 0."""

    def __init__(self, A_fine, spaces, prolongations, cfg: LinearSolveConfig, meter=None):
        # spaces/prolongations ordered coarse -> fine; prolongations[l]: l -> l+1
        self.cfg = cfg
        self.meter = meter
        self.spaces = spaces
        self.P = prolongations
        mats = [sp.csr_matrix(A_fine)]
        for P in reversed(prolongations):
            mats.append((P.T @ mats[-1] @ P).tocsr())
        self.A = list(reversed(mats))
        self.blocks = []
        for space, A in zip(spaces, self.A):
            dofs = space.dofs
            mask = dofs.free_to_stored >= dofs.lam_offset
            self.blocks.append(SaddleBlocks(A, mask, cfg.bs_scale))
        self.coarse_solve = _coarse_direct(self.A[0])

    @property
    def n_levels(self) -> int:
        return len(self.A)

    def _smooth(self, l, rhs, x):
        try:
            return braess_sarazin_relax(self.blocks[l], rhs, x)
        except (RelaxationSingular, RuntimeError):
            log.warning("Braess-Sarazin relaxation singular on level %d; using Jacobi", l)
            return damped_jacobi(self.A[l], rhs, x)

    def cycle(self, l, rhs, x):
        if l == 0:
            return self.coarse_solve(rhs)
        for _ in range(self.cfg.pre_sweeps):
            x = self._smooth(l, rhs, x)
        r = rhs - self.A[l] @ x
        P = self.P[l - 1]
        ec = self.cycle(l - 1, P.T @ r, np.zeros(P.shape[1]))
        x = x + P @ ec
        for _ in range(self.cfg.post_sweeps):
            x = self._smooth(l, rhs, x)
        return x


def vcycle(hierarchy: MgHierarchy, rhs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """One V(1,1) cycle on the finest level of ``hierarchy``."""
    top = hierarchy.n_levels - 1
    if hierarchy.meter is not None:
        hierarchy.meter.record(hierarchy.spaces[-1].mesh.level)
    return hierarchy.cycle(top, rhs, x)


# --------------------------------------------------------------------------
# solver facade
# --------------------------------------------------------------------------

class LinearSolver:
    """Solves Newton systems over free dofs; one instance is reused for
    both undeflated and deflated steps."""

    def __init__(self, cfg: LinearSolveConfig | None = None, meter: WorkUnitMeter | None = None):
        self.cfg = cfg or LinearSolveConfig()
        self.meter = meter if meter is not None else WorkUnitMeter()
        self._orders = {}
        self._transfers = {}
        self._lagged = {}
        self.last_iterations = 0
        self.solves = 0
        self.factorizations = 0

    def _space_key(self, space):
        return (space.mesh.level, space.mesh.periodic_x, space.director_sides, space.electric)

    def elimination_order(self, space):
        key = self._space_key(space)
        if key not in self._orders:
            self._orders[key] = dof_elimination_order(space)
        return self._orders[key]

    def hierarchy_spaces(self, space):
        key = self._space_key(space)
        if key not in self._transfers:
            spaces = [space.sibling(build_mesh(l, space.mesh.periodic_x)) for l in range(space.mesh.level)]
            spaces.append(space)
            Ps = [free_prolongation(a.dofs, b.dofs) for a, b in zip(spaces[:-1], spaces[1:])]
            self._transfers[key] = (spaces, Ps)
        return self._transfers[key]

    def preconditioner(self, A, space):
        kind = self.cfg.preconditioner
        if kind == "none":
            return None
        if kind == "direct":
            f = DirectFactor(A, self.elimination_order(space))
            self.factorizations += 1
            if self.cfg.reuse_krylov > 0:
                self._lagged[self._space_key(space)] = f
            return f.solve
        spaces, Ps = self.hierarchy_spaces(space)
        hier = MgHierarchy(A, spaces, Ps, self.cfg, self.meter)
        return lambda v: vcycle(hier, v, np.zeros_like(v))

    def factor(self, system):
        """Return ``apply(rhs) -> (x, its)`` bound to one assembled system."""
        A = system.jacobian
        cfg = self.cfg
        state = {"M": None}
        lagged = self._lagged.get(self._space_key(system.space)) if cfg.preconditioner == "direct" else None

        def run(rhs, M, budget):
            x, its, _ = gmres(lambda v: A @ v, rhs, M, cfg.rel_tol, budget)
            self.last_iterations = its
            self.solves += 1
            return x, its

        def apply(rhs):
            nonlocal lagged
            if state["M"] is None and lagged is not None and cfg.reuse_krylov > 0:
                try:
                    return run(rhs, lagged.solve, cfg.reuse_krylov)
                except SolverStall:
                    lagged = None
            if state["M"] is None:
                state["M"] = self.preconditioner(A, system.space)
            return run(rhs, state["M"], cfg.max_krylov)

        return apply

    def solve(self, system, rhs):
        return self.factor(system)(rhs)


def solve(system, rhs, cfg: LinearSolveConfig | None = None):
    """Convenience wrapper: ``(solution, iterations)``."""
    return LinearSolver(cfg).solve(system, rhs)
