"""Discrete Frank-Oseen Lagrangian on the slab domain.

The Lagrangian density is written in terms of 13 pointwise variables

    z = (n1, n2, n3, n1_x, n1_y, n2_x, n2_y, n3_x, n3_y, phi, phi_x, phi_y, lam)

so that every term is a quadratic or bilinear form in ``z`` (plus the cubic
multiplier term).  Gradient and Hessian of the density follow from constant
13x13 matrices, and the global residual/Hessian are obtained by pulling
back through the (cell independent) Q2/P0 tabulation.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .mesh import DofMap, QuadratureRule, ReferenceQ2, StructuredMesh

N1, N2, N3, N1X, N1Y, N2X, N2Y, N3X, N3Y, PHI, PHIX, PHIY, LAM = range(13)
NVAR = 13
MODELS = ("nematic", "cholesteric")


def _unit(i):
    e = np.zeros(NVAR)
    e[i] = 1.0
    return e


# constant forms in z
DIV = _unit(N1X) + _unit(N2Y)
CURL = np.stack([_unit(N3Y), -_unit(N3X), _unit(N2X) - _unit(N1Y)])
# n . curl n = z^T S z / 2
TWIST = np.zeros((NVAR, NVAR))
for _a, _b, _v in ((N1, N3Y, 1.0), (N2, N3X, -1.0), (N3, N2X, 1.0), (N3, N1Y, -1.0)):
    TWIST[_a, _b] = TWIST[_b, _a] = _v
# n . grad phi = z^T Q z / 2
COUPLE = np.zeros((NVAR, NVAR))
COUPLE[N1, PHIX] = COUPLE[PHIX, N1] = 1.0
COUPLE[N2, PHIY] = COUPLE[PHIY, N2] = 1.0
# n . n = z^T N z / 2
LENGTH = np.zeros((NVAR, NVAR))
LENGTH[N1, N1] = LENGTH[N2, N2] = LENGTH[N3, N3] = 2.0
GRAD_PHI = np.outer(_unit(PHIX), _unit(PHIX)) + np.outer(_unit(PHIY), _unit(PHIY))


@dataclass(frozen=True)
class MaterialParams:
    K1: float
    K2: float
    K3: float
    eps0: float = 1.42809
    eps_perp: float = 0.0
    eps_a: float = 0.0
    t0: float = 0.0
    V: float = 0.0

    def __post_init__(self):
        if min(self.K1, self.K2, self.K3) <= 0:
            raise ValueError("Frank constants must be positive")

    def with_(self, **kw) -> "MaterialParams":
        return replace(self, **kw)


def check_model(model: str, params: MaterialParams) -> None:
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")
    if model == "nematic" and params.t0 != 0.0:
        raise ValueError("nonzero twist t0 requires the cholesteric model")


# --------------------------------------------------------------------------
# pointwise density
# --------------------------------------------------------------------------

def quadratic_part(params: MaterialParams, electric: bool) -> np.ndarray:
    A = params.K1 * np.outer(DIV, DIV) + params.K3 * CURL.T @ CURL
    if electric:
        A = A - params.eps0 * params.eps_perp * GRAD_PHI
    return A


def density(z, params: MaterialParams, model: str, electric: bool, order: int = 0):
    """Lagrangian density (rescaled by 2) and optionally its derivatives.

    ``z`` has trailing dimension 13.  Returns ``W`` for ``order=0``,
    ``(W, g)`` for ``order=1`` and ``(W, g, H)`` for ``order=2``.
    """
    A = quadratic_part(params, electric)
    bend = params.K3 - params.K2
    chiral = 2.0 * params.K2 * params.t0 if model == "cholesteric" else 0.0
    field_c = params.eps0 * params.eps_a if electric else 0.0

    Az = z @ A
    Sz = z @ TWIST
    s = 0.5 * np.einsum("...i,...i", z, Sz)
    Qz = z @ COUPLE
    q = 0.5 * np.einsum("...i,...i", z, Qz)
    Nz = z @ LENGTH
    m = 0.5 * np.einsum("...i,...i", z, Nz) - 1.0
    lam = z[..., LAM]

    W = np.einsum("...i,...i", z, Az) - bend * s**2 - field_c * q**2 + chiral * s + lam * m
    if order == 0:
        return W
    g = (
        2.0 * Az
        - 2.0 * bend * s[..., None] * Sz
        - 2.0 * field_c * q[..., None] * Qz
        + chiral * Sz
        + lam[..., None] * Nz
    )
    g[..., LAM] += m
    if order == 1:
        return W, g
    H = (
        2.0 * A
        - 2.0 * bend * (Sz[..., :, None] * Sz[..., None, :] + s[..., None, None] * TWIST)
        - 2.0 * field_c * (Qz[..., :, None] * Qz[..., None, :] + q[..., None, None] * COUPLE)
        + chiral * TWIST
        + lam[..., None, None] * LENGTH
    )
    H[..., LAM, :] += Nz
    H[..., :, LAM] += Nz
    return W, g, H


def elastic_density(z, params: MaterialParams, model: str, electric: bool):
    """Reported (weighted by 1/2) energy density, excluding the multiplier term."""
    W = density(z, params, model, electric)
    m = 0.5 * np.einsum("...i,...i", z, z @ LENGTH) - 1.0
    e = 0.5 * (W - z[..., LAM] * m)
    if model == "cholesteric":
        e = e + 0.5 * params.K2 * params.t0**2
    return e


GRAM = (
    np.diag([1.0, 1.0, 1.0] + [0.0] * 10)
    + np.outer(DIV, DIV)
    + CURL.T @ CURL
    + np.outer(_unit(PHI), _unit(PHI))
    + GRAD_PHI
    + np.outer(_unit(LAM), _unit(LAM))
)


# --------------------------------------------------------------------------
# discrete space
# --------------------------------------------------------------------------

class _Pattern:
    """Precomputed CSR pattern for repeated assembly with a fixed dof table."""

    def __init__(self, idx: np.ndarray, n: int):
        nloc = idx.shape[1]
        r = np.repeat(idx, nloc, axis=1)
        c = np.tile(idx, (1, nloc))
        self.ok = (r >= 0) & (c >= 0)
        key = r[self.ok].astype(np.int64) * n + c[self.ok]
        uniq, self.inv = np.unique(key, return_inverse=True)
        rows = uniq // n
        self.indices = (uniq % n).astype(np.int32)
        self.indptr = np.searchsorted(rows, np.arange(n + 1)).astype(np.int32)
        self.n = n
        self.nnz = len(uniq)

    def build(self, local: np.ndarray) -> sp.csr_matrix:
        vals = local.reshape(local.shape[0], -1)[self.ok]
        data = np.bincount(self.inv, weights=vals, minlength=self.nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=(self.n, self.n))


class FESpace:
    """Q2 director (+ optional Q2 potential) and P0 multiplier on one mesh."""

    def __init__(self, mesh: StructuredMesh, director_sides, electric: bool, quad=None):
        self.mesh = mesh
        self.electric = bool(electric)
        self.director_sides = tuple(director_sides)
        sides = [self.director_sides] * 3
        if self.electric:
            sides.append(("bottom", "top"))
        self.dofs = DofMap(mesh, len(sides), tuple(sides))
        self.quad = quad or QuadratureRule.gauss(3)
        self.ref = ReferenceQ2.tabulate(self.quad)
        self.weights = self.quad.weights * mesh.h**2
        self._patterns: dict[str, _Pattern] = {}

    def sibling(self, mesh: StructuredMesh) -> "FESpace":
        return FESpace(mesh, self.director_sides, self.electric, self.quad)

    @property
    def nq(self) -> int:
        return len(self.weights)

    @property
    def nloc(self) -> int:
        return 9 * self.dofs.n_q2_fields + 1

    @cached_property
    def B(self) -> np.ndarray:
        """(nq, 13, nloc) map from local coefficients to pointwise variables."""
        h = self.mesh.h
        ref = self.ref
        B = np.zeros((self.nq, NVAR, self.nloc))
        for f in range(3):
            sl = slice(9 * f, 9 * f + 9)
            B[:, N1 + f, sl] = ref.phi
            B[:, N1X + 2 * f, sl] = ref.dphi_dx / h
            B[:, N1Y + 2 * f, sl] = ref.dphi_dy / h
        if self.electric:
            sl = slice(27, 36)
            B[:, PHI, sl] = ref.phi
            B[:, PHIX, sl] = ref.dphi_dx / h
            B[:, PHIY, sl] = ref.dphi_dy / h
        B[:, LAM, -1] = 1.0
        return B

    @cached_property
    def _Bflat(self) -> np.ndarray:
        return self.B.reshape(self.nq * NVAR, self.nloc)

    @cached_property
    def _Bpair(self) -> sp.csr_matrix:
        """Sparse (nloc*nloc, nq*13*13) map from pointwise Hessians to local matrices."""
        outer = np.einsum("qai,qbj->ijqab", self.B, self.B).reshape(self.nloc**2, -1)
        return sp.csr_matrix(outer)

    def index_map(self, space: str) -> np.ndarray:
        if space == "free":
            return self.dofs.stored_to_free[self.dofs.cell_dofs]
        if space == "stored":
            return self.dofs.cell_dofs
        raise ValueError(space)

    def size(self, space: str) -> int:
        return self.dofs.n_free if space == "free" else self.dofs.n_stored

    def pattern(self, space: str) -> _Pattern:
        if space not in self._patterns:
            self._patterns[space] = _Pattern(self.index_map(space), self.size(space))
        return self._patterns[space]

    def pointwise(self, u: np.ndarray) -> np.ndarray:
        """(n_cells, nq, 13) values of ``z`` at quadrature points."""
        U = u[self.dofs.cell_dofs]
        return np.einsum("vl,cl->cv", self._Bflat, U).reshape(len(U), self.nq, NVAR)

    def integrate(self, values: np.ndarray) -> float:
        return float(np.einsum("cq,q->", values, self.weights))

    def assemble_vector(self, g: np.ndarray, space: str = "free") -> np.ndarray:
        """Pull back pointwise gradients ``g`` (n_cells, nq, 13)."""
        gw = (g * self.weights[None, :, None]).reshape(len(g), -1)
        local = gw @ self._Bflat
        idx = self.index_map(space)
        ok = idx >= 0
        return np.bincount(idx[ok], weights=local[ok], minlength=self.size(space))

    def assemble_matrix(self, H: np.ndarray, space: str = "free") -> sp.csr_matrix:
        """Pull back pointwise Hessians ``H`` (n_cells, nq, 13, 13)."""
        Hw = (H * self.weights[None, :, None, None]).reshape(len(H), -1)
        local = (self._Bpair @ Hw.T).T
        return self.pattern(space).build(local)

    # ----------------------------------------------------------------- states
    def zero_state(self) -> "State":
        return State(self, np.zeros(self.dofs.n_stored))

    def state_from_fields(self, n, phi=None, lam=None) -> "State":
        u = np.zeros(self.dofs.n_stored)
        Nn = self.mesh.n_nodes
        u[: 3 * Nn] = np.asarray(n, dtype=float).reshape(3, Nn).ravel()
        if self.electric:
            if phi is None:
                raise ValueError("electric space requires a potential field")
            u[3 * Nn : 4 * Nn] = phi
        elif phi is not None:
            raise ValueError("potential given for a non-electric space")
        if lam is not None:
            u[self.dofs.lam_offset :] = lam
        return State(self, self.dofs.sync_slaves(u))


@dataclass
class State:
    """Stored coefficient vector ``u = (n1, n2, n3[, phi], lam)`` on one space."""

    space: FESpace
    u: np.ndarray

    @property
    def mesh(self) -> StructuredMesh:
        return self.space.mesh

    @property
    def n(self) -> np.ndarray:
        Nn = self.mesh.n_nodes
        return self.u[: 3 * Nn].reshape(3, Nn)

    @property
    def phi(self):
        if not self.space.electric:
            return None
        Nn = self.mesh.n_nodes
        return self.u[3 * Nn : 4 * Nn]

    @property
    def lam(self) -> np.ndarray:
        return self.u[self.space.dofs.lam_offset :]

    def copy(self) -> "State":
        return State(self.space, self.u.copy())

    def updated(self, du_free: np.ndarray, omega: float = 1.0) -> "State":
        return State(self.space, self.u + omega * self.space.dofs.expand(du_free))


# --------------------------------------------------------------------------
# assembled quantities
# --------------------------------------------------------------------------

@dataclass
class AssembledSystem:
    """Newton system over free dofs: ``jacobian @ du = -residual``."""

    jacobian: sp.csr_matrix
    residual: np.ndarray
    space: FESpace

    @cached_property
    def multiplier_dofs(self) -> np.ndarray:
        """Boolean mask of free dofs belonging to the P0 multiplier."""
        dofs = self.space.dofs
        return dofs.free_to_stored >= dofs.lam_offset


def lagrangian(state: State, params: MaterialParams, model: str) -> float:
    """Discrete Lagrangian (energy rescaled by 2 plus multiplier term)."""
    check_model(model, params)
    z = state.space.pointwise(state.u)
    return state.space.integrate(density(z, params, model, state.space.electric))


def free_energy(state: State, params: MaterialParams, model: str) -> float:
    """Reported free energy, weighted by 1/2; cholesteric includes K2 t0^2 |Omega| / 2."""
    check_model(model, params)
    z = state.space.pointwise(state.u)
    return state.space.integrate(elastic_density(z, params, model, state.space.electric))


def residual(state: State, params: MaterialParams, model: str, space: str = "free") -> np.ndarray:
    check_model(model, params)
    z = state.space.pointwise(state.u)
    _, g = density(z, params, model, state.space.electric, order=1)
    return state.space.assemble_vector(g, space)


def hessian(state: State, params: MaterialParams, model: str) -> AssembledSystem:
    check_model(model, params)
    sp_ = state.space
    z = sp_.pointwise(state.u)
    _, g, H = density(z, params, model, sp_.electric, order=2)
    return AssembledSystem(sp_.assemble_matrix(H), sp_.assemble_vector(g), sp_)


def gram_matrix(space_: FESpace, which: str = "stored") -> sp.csr_matrix:
    """Matrix of the product-space U inner product."""
    key = f"_gram_{which}"
    cached = space_.__dict__.get(key)
    if cached is None:
        H = np.broadcast_to(GRAM, (space_.mesh.n_cells, space_.nq, NVAR, NVAR))
        cached = space_.assemble_matrix(H, which)
        space_.__dict__[key] = cached
    return cached


def mean_director_length(state: State) -> float:
    """Mean director length over Q2 nodes."""
    return float(np.mean(np.linalg.norm(state.n, axis=0)))
