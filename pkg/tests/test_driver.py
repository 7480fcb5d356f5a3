import json
from dataclasses import replace

import numpy as np
import pytest

from lcdeflate.deflation import DeflationSet
from lcdeflate.driver import NestedIteration, is_distinct, run
from lcdeflate.mesh import ConfigurationError
from lcdeflate.problems import GUESSES, PRESETS

ALL_GUESSES = [(name, g) for name, p in PRESETS.items() for g in p.guesses]


@pytest.fixture(scope="module")
def tilt0():
    return run(PRESETS["tilt_twist"], 0)


def test_tilt_twist_coarse_solutions(tilt0):
    e = tilt0.energies(0)
    assert len(e) == 3
    assert e[0] == pytest.approx(3.593, abs=0.01)
    assert e[1] == pytest.approx(3.593, abs=0.01)
    assert e[2] == pytest.approx(3.701, abs=0.01)
    # reflected pair is energy-degenerate
    assert abs(e[0] - e[1]) <= 1e-6


def test_solutions_pairwise_distinct(tilt0):
    states = [s.state for s in tilt0.solutions]
    for i, s in enumerate(states):
        assert is_distinct(s, states[:i])


def test_iteration_bookkeeping(tilt0):
    anon = sum(tilt0.anonymous_iterations.values())
    assert tilt0.total_iterations == tilt0.attributed_iterations + anon
    assert sum(a.iterations for a in tilt0.failed) == anon


def test_report_is_json_shaped(tilt0):
    d = json.loads(json.dumps(tilt0.to_dict()))
    assert d["totals"]["newton_iterations"] == tilt0.total_iterations
    assert len(d["solutions"]) == 3
    assert d["solutions"][0]["provenance"] == "initial"


def test_deterministic(tilt0):
    again = run(PRESETS["tilt_twist"], 0)
    assert again.energies(0) == tilt0.energies(0)
    assert [s.iterations for s in again.solutions] == [s.iterations for s in tilt0.solutions]


def test_knowledge_monotone_and_energies_recorded():
    rep = run(PRESETS["freedericksz"], 1)
    assert len(rep.solutions) == 3
    for s in rep.solutions:
        assert sorted(s.levels) == list(range(s.discovered_level, 2))
        assert all(e.status == "converged" for e in s.levels.values())
        # mesh-converged branches barely move under one refinement
        assert abs(s.energies[1] - s.energies[0]) <= 0.05


def test_cholesteric_single_guess_without_deflation():
    preset = replace(PRESETS["cholesteric"], guesses=("chol_planar",), deflate=False)
    rep = run(preset, 1)
    assert len(rep.solutions) == 1
    assert rep.solutions[0].energy == pytest.approx(6 * np.pi**2, abs=0.05)
    assert not rep.failed


@pytest.mark.parametrize("preset,guess", ALL_GUESSES)
def test_guesses_satisfy_boundary_data(preset, guess):
    problem = PRESETS[preset].problem
    s = problem.guess(guess, 1)
    assert np.array_equal(problem.apply_boundary(s.copy()).u, s.u)
    assert not s.lam.any()


def test_guess_library_names():
    for _, g in ALL_GUESSES:
        assert g in GUESSES


def test_configuration_errors():
    with pytest.raises(ConfigurationError):
        NestedIteration(PRESETS["tilt_twist"], 7)
    with pytest.raises(ConfigurationError):
        NestedIteration(replace(PRESETS["tilt_twist"], guesses=()))


def test_restart_at_known_root_is_excluded():
    ni = NestedIteration(PRESETS["freedericksz"], 0)
    ni.initial_solve()
    known = ni.report.solutions[0].state
    out = ni._newton(known, 1.0, DeflationSet([known]))
    assert out.status == "at_known_root" or (out.converged and is_distinct(out.state, [known]))
