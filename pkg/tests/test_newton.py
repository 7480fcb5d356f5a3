import numpy as np
import pytest
from hypothesis import given, strategies as st

from lcdeflate.deflation import DeflationSet
from lcdeflate.forms import free_energy
from lcdeflate.linsolve import LinearSolver
from lcdeflate.newton import DampingSchedule, NewtonConfig, newton_solve
from lcdeflate.problems import PRESETS

ELEC = PRESETS["freedericksz"].problem
NEM = PRESETS["tilt_twist"].problem


def test_schedule_validation():
    with pytest.raises(ValueError):
        DampingSchedule(0.0)
    with pytest.raises(ValueError):
        DampingSchedule(1.2)
    with pytest.raises(ValueError):
        DampingSchedule(0.5, mode="sideways")


def test_schedule_examples():
    assert DampingSchedule(0.4, 0.2).omega(2) == pytest.approx(0.8)
    assert DampingSchedule(0.4, 0.2).omega(5) == 1.0
    assert DampingSchedule(1.0, 0.5, "decreasing").omega(1) == 0.5
    assert DampingSchedule(1.0, 0.5, "decreasing").omega(3) == 0.1


@given(st.floats(0.01, 1.0), st.floats(0.0, 2.0), st.sampled_from(["increasing", "decreasing"]), st.integers(0, 20))
def test_schedule_clamped_and_monotone(w0, delta, mode, level):
    s = DampingSchedule(w0, delta, mode)
    w = s.omega(level)
    assert 0.1 <= w <= 1.0
    nxt = s.omega(level + 1)
    assert (nxt >= w) if mode == "increasing" else (nxt <= w)


@pytest.fixture(scope="module")
def freedericksz_roots():
    solver = LinearSolver()
    a = newton_solve(ELEC.guess("tilt_up", 0), ELEC.params, ELEC.model, solver, 1.0)
    return solver, a


def test_undeflated_converges_to_trivial_state(freedericksz_roots):
    _, a = freedericksz_roots
    assert a.converged
    assert free_energy(a.state, ELEC.params, ELEC.model) == pytest.approx(-6.048, abs=1e-3)
    assert a.residuals[-1] <= 1e-4
    assert len(a.residuals) == a.iterations + 1


def test_deflated_finds_tilted_state(freedericksz_roots):
    solver, a = freedericksz_roots
    b = newton_solve(
        ELEC.guess("tilt_up", 0), ELEC.params, ELEC.model, solver, 1.0, deflation=DeflationSet([a.state])
    )
    assert b.converged
    assert free_energy(b.state, ELEC.params, ELEC.model) == pytest.approx(-6.778, abs=1e-3)


def test_quadratic_convergence(freedericksz_roots):
    _, a = freedericksz_roots
    r = a.residuals
    tail = [x for x in r if x > 1e-11]
    # final steps: r_{k+1} <= C r_k^2
    k = len(tail) - 2
    assert tail[k + 1] <= 10 * tail[k] ** 2 + 1e-12


def test_converged_start_takes_no_steps(freedericksz_roots):
    solver, a = freedericksz_roots
    out = newton_solve(a.state, ELEC.params, ELEC.model, solver, 1.0)
    assert out.converged and out.iterations == 0


def test_at_known_root(freedericksz_roots):
    solver, a = freedericksz_roots
    out = newton_solve(a.state, ELEC.params, ELEC.model, solver, 1.0, NewtonConfig(fooc_tol=0.0), DeflationSet([a.state]))
    assert out.status == "at_known_root"


def test_blowup_detected():
    s = NEM.guess("tilt_up", 0)
    big = s.updated(np.full(s.space.dofs.n_free, 10.0))
    out = newton_solve(big, NEM.params, NEM.model, LinearSolver())
    assert out.status == "blowup" and out.iterations == 0


def test_max_iters_reported():
    out = newton_solve(NEM.guess("tilt_up", 0), NEM.params, NEM.model, LinearSolver(), 0.1, NewtonConfig(max_iters=2))
    assert out.status == "max_iters" and out.iterations == 2
