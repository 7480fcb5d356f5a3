import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lcdeflate.forms import (
    CURL,
    MaterialParams,
    check_model,
    density,
    free_energy,
    hessian,
    lagrangian,
    residual,
    mean_director_length,
)
from lcdeflate.problems import PRESETS
from lcdeflate.selfcheck import random_state

PROBLEMS = {
    "nematic": PRESETS["tilt_twist"].problem,
    "electric": PRESETS["freedericksz"].problem,
    "cholesteric": PRESETS["cholesteric"].problem,
}


def test_params_validation():
    with pytest.raises(ValueError):
        MaterialParams(K1=0.0, K2=1.0, K3=1.0)
    with pytest.raises(ValueError):
        check_model("nematic", MaterialParams(1, 1, 1, t0=1.0))
    with pytest.raises(ValueError):
        check_model("smectic", MaterialParams(1, 1, 1))


@pytest.mark.parametrize("name", sorted(PROBLEMS))
def test_gradient_second_order_convergence(name):
    prob = PROBLEMS[name]
    rng = np.random.default_rng(3)
    s = random_state(prob, 0, rng)
    v = rng.standard_normal(s.space.dofs.n_free)
    p, m = prob.params, prob.model
    exact = residual(s, p, m) @ v
    errs = []
    for h in (1e-2, 5e-3, 2.5e-3):
        fd = (lagrangian(s.updated(v, h), p, m) - lagrangian(s.updated(v, -h), p, m)) / (2 * h)
        errs.append(abs(fd - exact))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8)


@pytest.mark.parametrize("name", sorted(PROBLEMS))
def test_hessian_symmetric(name):
    prob = PROBLEMS[name]
    s = random_state(prob, 0, np.random.default_rng(5))
    J = hessian(s, prob.params, prob.model).jacobian
    assert abs(J - J.T).max() <= 1e-12 * abs(J).max()


def test_multiplier_blocks_zero():
    prob = PROBLEMS["electric"]
    s = random_state(prob, 0, np.random.default_rng(2))
    sysm = hessian(s, prob.params, prob.model)
    lam = sysm.multiplier_dofs
    J = sysm.jacobian.tocsr()
    assert abs(J[lam][:, lam]).max() == 0.0
    dofs = s.space.dofs
    phi_free = (dofs.free_to_stored >= 3 * s.mesh.n_nodes) & ~lam
    assert abs(J[lam][:, phi_free]).max() == 0.0


def test_uniform_state_residual_vanishes():
    prob = PROBLEMS["nematic"]
    space = prob.space(0)
    Nn = space.mesh.n_nodes
    n = np.vstack([np.ones(Nn), np.zeros(Nn), np.zeros(Nn)])
    s = space.state_from_fields(n, lam=0.0)
    assert np.abs(residual(s, prob.params, prob.model, space="stored")).max() < 1e-13


def test_constraint_residual_for_doubled_director():
    prob = PROBLEMS["nematic"]
    space = prob.space(0)
    Nn = space.mesh.n_nodes
    n = np.vstack([2 * np.ones(Nn), np.zeros(Nn), np.zeros(Nn)])
    s = space.state_from_fields(n, lam=0.0)
    r = residual(s, prob.params, prob.model, space="stored")
    lam_part = r[space.dofs.lam_offset :]
    assert np.allclose(lam_part, 3 * space.mesh.h**2)


def test_multiplier_coupling_at_uniform_state():
    prob = PROBLEMS["nematic"]
    space = prob.space(0)
    Nn = space.mesh.n_nodes
    s = space.state_from_fields(np.vstack([np.ones(Nn), np.zeros(Nn), np.zeros(Nn)]), lam=0.0)
    sysm = hessian(s, prob.params, prob.model)
    J = sysm.jacobian.tocsr()
    lam = sysm.multiplier_dofs
    f2s = space.dofs.free_to_stored
    n2n3 = (f2s >= Nn) & (f2s < 3 * Nn)
    assert abs(J[lam][:, n2n3]).max() == 0.0
    assert abs(J[lam][:, f2s < Nn]).max() > 0.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_z_identity_pointwise(seed):
    rng = np.random.default_rng(seed)
    p = MaterialParams(1.0, 3.0, 1.2)
    z = rng.standard_normal((50, 13))
    z[:, 12] = 0.0
    W = density(z, p, "nematic", False)
    n = z[:, :3]
    curl = z @ CURL.T
    div = z[:, 3] + z[:, 6]
    twist = np.einsum("ij,ij->i", n, curl)
    ref = p.K1 * div**2 + p.K3 * np.einsum("ij,ij->i", curl, curl) - (p.K3 - p.K2) * twist**2
    assert np.allclose(W, ref, rtol=1e-12, atol=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.floats(0, 2 * np.pi))
def test_frame_invariance_about_z(angle):
    # rotate a planar field and its boundary data; elastic energy unchanged
    prob = PROBLEMS["nematic"]
    space = prob.space(0)
    x, y = space.mesh.node_coords.T
    base = 0.7 * np.sin(np.pi * y) + 0.3 * x * (1 - x)
    n = np.vstack([np.cos(base), np.sin(base), np.zeros_like(x)])
    c, s_ = np.cos(angle), np.sin(angle)
    R = np.array([[c, -s_, 0], [s_, c, 0], [0, 0, 1]])
    # rotation about z by a constant angle keeps div and curl norms only if
    # applied jointly to space; restrict to the pure in-plane twist energy,
    # which depends on n only through the planar angle gradient
    e0 = free_energy(space.state_from_fields(n, lam=0.0), prob.params, prob.model)
    rot = R @ n
    # rotated field equals the field with angle base + angle
    assert np.allclose(rot, np.vstack([np.cos(base + angle), np.sin(base + angle), 0 * x]))
    e1 = free_energy(space.state_from_fields(rot, lam=0.0), prob.params, prob.model)
    # div/curl of a planar field with constant angle shift differ, but the
    # one-constant combination |div|^2 + |curl|^2 = |grad angle|^2 does not
    one = MaterialParams(1.0, 1.0, 1.0)
    f0 = free_energy(space.state_from_fields(n, lam=0.0), one, "nematic")
    f1 = free_energy(space.state_from_fields(rot, lam=0.0), one, "nematic")
    assert np.isclose(f0, f1, rtol=1e-3)
    assert np.isfinite(e0) and np.isfinite(e1)


def test_one_constant_reduction():
    prob = PROBLEMS["nematic"]
    space = prob.space(1)
    x, y = space.mesh.node_coords.T
    t = 0.5 * np.sin(np.pi * y)
    n = np.vstack([np.cos(t), 0 * x, np.sin(t)])
    s = space.state_from_fields(n, lam=0.0)
    one = MaterialParams(2.0, 2.0, 2.0)
    # for n = (cos t, 0, sin t)(y): div = 0, |curl|^2 = t'^2
    ref = 0.5 * 2.0 * 0.5 * (0.5 * np.pi) ** 2
    assert np.isclose(free_energy(s, one, "nematic"), ref, rtol=1e-4)


def test_uniform_field_energy():
    prob = PROBLEMS["electric"]
    space = prob.space(0)
    x, y = space.mesh.node_coords.T
    Nn = space.mesh.n_nodes
    s = space.state_from_fields(np.vstack([np.ones(Nn), 0 * x, 0 * x]), prob.params.V * y, 0.0)
    p = prob.params
    assert np.isclose(free_energy(s, p, "nematic"), -0.5 * p.eps0 * p.eps_perp * p.V**2, rtol=1e-12)


def test_cholesteric_planar_and_helix_energies():
    prob = PROBLEMS["cholesteric"]
    space = prob.space(1)
    x, y = space.mesh.node_coords.T
    Nn = space.mesh.n_nodes
    planar = space.state_from_fields(np.vstack([np.ones(Nn), 0 * x, 0 * x]), lam=0.0)
    assert np.isclose(free_energy(planar, prob.params, prob.model), 6 * np.pi**2, rtol=1e-12)
    # interpolated helix: energy is pure interpolation error, O(h^4)
    e = []
    for level in (0, 1, 2):
        sp_ = prob.space(level)
        x, y = sp_.mesh.node_coords.T
        helix = sp_.state_from_fields(np.vstack([np.cos(2 * np.pi * y), 0 * x, np.sin(2 * np.pi * y)]), lam=0.0)
        e.append(free_energy(helix, prob.params, prob.model))
    assert e[2] < 1e-3
    assert np.all(np.log2(np.array(e[:-1]) / np.array(e[1:])) > 3.5)


def test_mean_director_length_examples():
    prob = PROBLEMS["nematic"]
    space = prob.space(0)
    Nn = space.mesh.n_nodes
    one = np.ones(Nn)
    assert np.isclose(mean_director_length(space.state_from_fields(np.vstack([one, 0 * one, 0 * one]))), 1.0)
    assert np.isclose(mean_director_length(space.state_from_fields(np.vstack([3 * one, 0 * one, 0 * one]))), 3.0)
    v = 2 * np.ones((3, Nn)) / np.sqrt(3)
    assert np.isclose(mean_director_length(space.state_from_fields(v)), 2.0)
