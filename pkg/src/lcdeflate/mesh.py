"""Structured Q2/P0 meshes on the unit square.

Nodes and cells are numbered lexicographically in (x, y): the global id of
Q2 node (i, j) is ``i * (2N + 1) + j`` and of cell (ci, cj) is ``ci * N + cj``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

COARSE_CELLS = 8
MAX_LEVEL = 6
SIDES = ("bottom", "top", "left", "right")


class ConfigurationError(ValueError):
    """Raised for invalid user-facing configuration (levels, presets, keys)."""


# --------------------------------------------------------------------------
# reference element
# --------------------------------------------------------------------------

def q2_basis_1d(t):
    """Quadratic Lagrange basis on [0, 1] with nodes 0, 1/2, 1."""
    t = np.asarray(t, dtype=float)
    return np.stack([2 * (t - 0.5) * (t - 1), -4 * t * (t - 1), 2 * t * (t - 0.5)], axis=-1)


def q2_basis_1d_deriv(t):
    t = np.asarray(t, dtype=float)
    return np.stack([4 * t - 3, -8 * t + 4, 4 * t - 1], axis=-1)


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor Gauss rule on the reference square [0, 1]^2."""

    points: np.ndarray  # (nq, 2)
    weights: np.ndarray  # (nq,)

    @classmethod
    def gauss(cls, npts: int = 3) -> "QuadratureRule":
        x, w = np.polynomial.legendre.leggauss(npts)
        x = 0.5 * (x + 1.0)
        w = 0.5 * w
        # x-major ordering to match the node numbering
        px, py = np.meshgrid(x, x, indexing="ij")
        wx, wy = np.meshgrid(w, w, indexing="ij")
        return cls(np.column_stack([px.ravel(), py.ravel()]), (wx * wy).ravel())

    @property
    def degree(self) -> int:
        """Highest per-direction polynomial degree integrated exactly."""
        return 2 * int(round(np.sqrt(len(self.weights)))) - 1


@dataclass(frozen=True)
class ReferenceQ2:
    """Q2 basis tabulated at quadrature points, local node index ``a * 3 + b``."""

    quad: QuadratureRule
    phi: np.ndarray  # (nq, 9)
    dphi_dx: np.ndarray  # (nq, 9), reference derivative
    dphi_dy: np.ndarray

    @classmethod
    def tabulate(cls, quad: QuadratureRule) -> "ReferenceQ2":
        bx = q2_basis_1d(quad.points[:, 0])
        by = q2_basis_1d(quad.points[:, 1])
        dx = q2_basis_1d_deriv(quad.points[:, 0])
        dy = q2_basis_1d_deriv(quad.points[:, 1])
        phi = np.einsum("qa,qb->qab", bx, by).reshape(-1, 9)
        gx = np.einsum("qa,qb->qab", dx, by).reshape(-1, 9)
        gy = np.einsum("qa,qb->qab", bx, dy).reshape(-1, 9)
        return cls(quad, phi, gx, gy)


# --------------------------------------------------------------------------
# meshes
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StructuredMesh:
    level: int
    periodic_x: bool = False

    @property
    def cells_per_side(self) -> int:
        return COARSE_CELLS * 2**self.level

    @property
    def h(self) -> float:
        return 1.0 / self.cells_per_side

    @property
    def nodes_per_side(self) -> int:
        return 2 * self.cells_per_side + 1

    @property
    def n_nodes(self) -> int:
        return self.nodes_per_side**2

    @property
    def n_cells(self) -> int:
        return self.cells_per_side**2

    @cached_property
    def vertex_coords(self) -> np.ndarray:
        return np.arange(self.cells_per_side + 1) / self.cells_per_side

    @cached_property
    def node_coords(self) -> np.ndarray:
        """(n_nodes, 2) Q2 node coordinates."""
        t = np.arange(self.nodes_per_side) / (self.nodes_per_side - 1)
        X, Y = np.meshgrid(t, t, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def cell_nodes(self) -> np.ndarray:
        """(n_cells, 9) global node ids, local ordering ``a * 3 + b``."""
        N, M = self.cells_per_side, self.nodes_per_side
        ci, cj = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
        a, b = np.meshgrid(np.arange(3), np.arange(3), indexing="ij")
        i = 2 * ci.ravel()[:, None] + a.ravel()[None, :]
        j = 2 * cj.ravel()[:, None] + b.ravel()[None, :]
        return i * M + j

    @cached_property
    def cell_origins(self) -> np.ndarray:
        N = self.cells_per_side
        ci, cj = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
        return np.column_stack([ci.ravel(), cj.ravel()]) / N

    def boundary_nodes(self, side: str) -> np.ndarray:
        M = self.nodes_per_side
        idx = np.arange(M)
        if side == "bottom":
            return idx * M
        if side == "top":
            return idx * M + (M - 1)
        if side == "left":
            return idx
        if side == "right":
            return (M - 1) * M + idx
        raise ConfigurationError(f"unknown boundary side {side!r}")

    def boundary_facets(self, side: str) -> np.ndarray:
        """Cells owning a facet on ``side``."""
        N = self.cells_per_side
        k = np.arange(N)
        return {
            "bottom": k * N,
            "top": k * N + N - 1,
            "left": k,
            "right": (N - 1) * N + k,
        }[side]

    def node_cell(self) -> np.ndarray:
        """Containing cell of every node (lowest-index cell for shared nodes)."""
        N, M = self.cells_per_side, self.nodes_per_side
        i = np.arange(M)
        ci = np.maximum((i - 1) // 2, 0)
        return (ci[:, None] * N + ci[None, :]).ravel()


def build_mesh(level: int, periodic_x: bool = False) -> StructuredMesh:
    if not isinstance(level, (int, np.integer)) or not 0 <= level <= MAX_LEVEL:
        raise ConfigurationError(f"mesh level must be in 0..{MAX_LEVEL}, got {level!r}")
    return StructuredMesh(int(level), bool(periodic_x))


def refine(mesh: StructuredMesh) -> StructuredMesh | None:
    """Uniformly refined child mesh, or None once the level limit is reached."""
    if mesh.level >= MAX_LEVEL:
        return None
    return StructuredMesh(mesh.level + 1, mesh.periodic_x)


# --------------------------------------------------------------------------
# degrees of freedom and constraints
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DofMap:
    """Stored layout ``[q2 fields..., lambda]`` with Dirichlet/periodic constraints.

    ``dirichlet`` maps a Q2 field index to the boundary sides on which that
    field is prescribed. Periodic slaves (x = 1) are identified with their
    x = 0 masters; Dirichlet takes precedence at shared corner nodes.
    """

    mesh: StructuredMesh
    n_q2_fields: int
    dirichlet: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if len(self.dirichlet) != self.n_q2_fields:
            raise ValueError("one Dirichlet side tuple per Q2 field is required")

    @property
    def n_nodes(self) -> int:
        return self.mesh.n_nodes

    @property
    def lam_offset(self) -> int:
        return self.n_q2_fields * self.mesh.n_nodes

    @property
    def n_stored(self) -> int:
        return self.lam_offset + self.mesh.n_cells

    def field_slice(self, f: int) -> slice:
        return slice(f * self.n_nodes, (f + 1) * self.n_nodes)

    @cached_property
    def dirichlet_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_stored, dtype=bool)
        for f, sides in enumerate(self.dirichlet):
            for side in sides:
                mask[f * self.n_nodes + self.mesh.boundary_nodes(side)] = True
        return mask

    @cached_property
    def master(self) -> np.ndarray:
        """Stored index each stored dof is identified with (-1 if Dirichlet)."""
        m = np.arange(self.n_stored)
        if self.mesh.periodic_x:
            right = self.mesh.boundary_nodes("right")
            left = self.mesh.boundary_nodes("left")
            for f in range(self.n_q2_fields):
                m[f * self.n_nodes + right] = f * self.n_nodes + left
        m[self.dirichlet_mask] = -1
        # a slave whose master is Dirichlet is itself Dirichlet
        linked = m >= 0
        linked[linked] = self.dirichlet_mask[m[linked]]
        m[linked] = -1
        return m

    @cached_property
    def free_to_stored(self) -> np.ndarray:
        return np.flatnonzero(self.master == np.arange(self.n_stored))

    @property
    def n_free(self) -> int:
        return len(self.free_to_stored)

    @cached_property
    def stored_to_free(self) -> np.ndarray:
        lookup = -np.ones(self.n_stored, dtype=np.int64)
        lookup[self.free_to_stored] = np.arange(self.n_free)
        out = -np.ones(self.n_stored, dtype=np.int64)
        ok = self.master >= 0
        out[ok] = lookup[self.master[ok]]
        return out

    @cached_property
    def expansion(self) -> sp.csr_matrix:
        """Sparse map from free coefficients to stored coefficients."""
        rows = np.flatnonzero(self.stored_to_free >= 0)
        cols = self.stored_to_free[rows]
        return sp.csr_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(self.n_stored, self.n_free)
        )

    def expand(self, x_free: np.ndarray) -> np.ndarray:
        """Free -> stored with zero Dirichlet entries (homogeneous update)."""
        out = np.zeros(self.n_stored)
        ok = self.stored_to_free >= 0
        out[ok] = x_free[self.stored_to_free[ok]]
        return out

    def restrict(self, x_stored: np.ndarray) -> np.ndarray:
        return x_stored[self.free_to_stored]

    def sync_slaves(self, u: np.ndarray) -> np.ndarray:
        """Copy master values onto periodic slaves (in place) and return ``u``."""
        m = self.master
        slave = (m >= 0) & (m != np.arange(self.n_stored))
        u[slave] = u[m[slave]]
        return u

    @cached_property
    def cell_dofs(self) -> np.ndarray:
        """(n_cells, 9 * n_q2_fields + 1) stored indices per cell."""
        cn = self.mesh.cell_nodes
        blocks = [f * self.n_nodes + cn for f in range(self.n_q2_fields)]
        blocks.append(self.lam_offset + np.arange(self.mesh.n_cells)[:, None])
        return np.hstack(blocks)

    def stored_dof_count(self) -> int:
        """Dof total counting Dirichlet and periodic-slave dofs as stored."""
        return self.n_stored


def dof_count(level: int, n_q2_fields: int) -> int:
    """``n_q2_fields * (2N+1)^2 + N^2`` for N = 8 * 2^level."""
    N = COARSE_CELLS * 2**level
    return n_q2_fields * (2 * N + 1) ** 2 + N**2


def apply_constraints(dof_map: DofMap, matrix, vector):
    """Constrain an assembled full-size system in place of stored dofs.

    Dirichlet rows and columns are eliminated symmetrically (unit diagonal,
    zero right-hand side, since Newton updates are homogeneous there).
    Periodic slave rows and columns are folded into their masters and the
    slave row becomes ``slave - master = 0``.
    """
    A = sp.csr_matrix(matrix, dtype=float)
    b = np.array(vector, dtype=float)
    n = A.shape[0]
    m = dof_map.master
    ident = np.arange(n)
    fixed = m < 0
    slave = ~fixed & (m != ident)
    target = np.where(fixed, ident, m)

    T = sp.csr_matrix((np.ones(n), (target, ident)), shape=(n, n))
    keep = sp.diags((~fixed & ~slave).astype(float))
    A = keep @ (T @ A @ T.T) @ keep
    ks = np.flatnonzero(slave)
    pin = sp.csr_matrix(
        (
            np.concatenate([fixed[fixed].astype(float), np.ones(len(ks)), -np.ones(len(ks))]),
            (
                np.concatenate([ident[fixed], ks, ks]),
                np.concatenate([ident[fixed], ks, m[ks]]),
            ),
        ),
        shape=(n, n),
    )
    b = T @ b
    b[fixed | slave] = 0.0
    return (A + pin).tocsr(), b


# --------------------------------------------------------------------------
# inter-level transfer
# --------------------------------------------------------------------------

def q2_interpolation_1d(n_coarse_cells: int) -> sp.csr_matrix:
    """1D Q2 nodal interpolation from ``n`` to ``2n`` cells on [0, 1]."""
    nf = 4 * n_coarse_cells + 1
    rows, cols, vals = [], [], []
    for k in range(nf):
        c = min(k // 4, n_coarse_cells - 1)
        t = (k - 4 * c) / 4.0
        w = q2_basis_1d(t)
        for a in range(3):
            if abs(w[a]) > 1e-15:
                rows.append(k)
                cols.append(2 * c + a)
                vals.append(w[a])
    return sp.csr_matrix((vals, (rows, cols)), shape=(nf, 2 * n_coarse_cells + 1))


def q2_interpolation(coarse: StructuredMesh) -> sp.csr_matrix:
    P1 = q2_interpolation_1d(coarse.cells_per_side)
    return sp.kron(P1, P1, format="csr")


def p0_injection(coarse: StructuredMesh) -> sp.csr_matrix:
    Nc = coarse.cells_per_side
    Nf = 2 * Nc
    fi, fj = np.meshgrid(np.arange(Nf), np.arange(Nf), indexing="ij")
    parent = (fi // 2 * Nc + fj // 2).ravel()
    return sp.csr_matrix(
        (np.ones(Nf * Nf), (np.arange(Nf * Nf), parent)), shape=(Nf * Nf, Nc * Nc)
    )


def stored_prolongation(coarse: DofMap, fine: DofMap) -> sp.csr_matrix:
    """Block-diagonal transfer of a whole stored vector coarse -> fine."""
    if fine.mesh.level != coarse.mesh.level + 1:
        raise ValueError("prolongation requires consecutive levels")
    if fine.mesh.periodic_x != coarse.mesh.periodic_x:
        raise ValueError("prolongation requires matching periodicity")
    Pq = q2_interpolation(coarse.mesh)
    blocks = [Pq] * coarse.n_q2_fields + [p0_injection(coarse.mesh)]
    return sp.block_diag(blocks, format="csr")


def free_prolongation(coarse: DofMap, fine: DofMap) -> sp.csr_matrix:
    """Transfer between constrained (free) spaces used by multigrid."""
    P = stored_prolongation(coarse, fine)
    return (P[fine.free_to_stored] @ coarse.expansion).tocsr()
