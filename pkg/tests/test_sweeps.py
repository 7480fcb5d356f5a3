import numpy as np
import pytest

from lcdeflate.driver import run
from lcdeflate.mesh import ConfigurationError
from lcdeflate.problems import PRESETS, override
from lcdeflate.sweeps import SweepSpec, critical_voltage, sweep, sweep_deflation, theta_m, write_sweep_csv
from oracles import freedericksz_theta_m

FRE = PRESETS["freedericksz"]


def test_critical_voltage_identity():
    p = FRE.problem.params
    vc = critical_voltage(p.K1, p.eps0, p.eps_a)
    assert vc == pytest.approx(np.pi / np.sqrt(1.42809 * 11.5), rel=1e-15)
    assert vc == pytest.approx(0.775217, abs=1e-6)
    assert round(vc, 3) == 0.775


def test_theta_m_simple_fields():
    space = FRE.problem.space(0)
    nn = space.mesh.n_nodes
    n = np.zeros((3, nn))
    n[0] = 1.0
    assert theta_m(space.state_from_fields(n, np.zeros(nn))) == 0.0
    n[0], n[1] = np.cos(0.3), -np.sin(0.3)
    assert theta_m(space.state_from_fields(n, np.zeros(nn))) == pytest.approx(0.3)


def test_theta_m_matches_shooting_oracle():
    rep = run(FRE, 1)
    tilted = [s for s in rep.solutions if theta_m(s.state) > 0.1]
    assert len(tilted) == 2
    ref = freedericksz_theta_m(FRE.problem.params.V)
    for s in tilted:
        assert theta_m(s.state) == pytest.approx(ref, rel=0.02)


def test_oracle_vanishes_below_threshold():
    assert freedericksz_theta_m(0.7) == pytest.approx(0.0, abs=1e-6)


@pytest.mark.parametrize(
    "param,lo,hi,steps",
    [("K3", 0.1, 0.2, 3), ("V", 0.9, 0.8, 3), ("V", 0.8, 0.9, 1)],
)
def test_spec_validation(param, lo, hi, steps):
    with pytest.raises(ConfigurationError):
        SweepSpec(FRE, param, lo, hi, steps)


def test_coarse_voltage_sweep(tmp_path):
    res = sweep(SweepSpec(FRE, "V", 0.7, 0.85, 2, levels=0))
    assert res.counts == {0.7: 1, 0.85: 3}
    assert res.bracket == (0.7, 0.85)
    assert res.estimate == pytest.approx(0.775)
    path = tmp_path / "s.csv"
    write_sweep_csv(res, path)
    rows = path.read_text().splitlines()
    assert rows[0] == "parameter,solution_id,theta_m,energy"
    assert len(rows) == 1 + 4


def test_no_bracket_without_onset():
    res = sweep(SweepSpec(FRE, "V", 0.5, 0.6, 2, levels=0))
    assert res.bracket is None and res.estimate is None


def test_sweep_deflation_defaults():
    assert sweep_deflation(FRE).alpha == 10.0
    tt = PRESETS["tilt_twist"]
    assert sweep_deflation(tt) == tt.deflation


def test_tilted_branches_below_untilted_energy():
    res = sweep(SweepSpec(FRE, "V", 0.85, 0.95, 2, levels=0))
    for v in res.counts:
        pts = [p for p in res.points if p.value == v]
        flat = [p.energy for p in pts if p.theta_m < 0.05]
        tilted = [p for p in pts if p.theta_m >= 0.05]
        assert len(flat) == 1 and len(tilted) == 2
        assert all(p.energy < flat[0] for p in tilted)
        assert abs(tilted[0].energy - tilted[1].energy) <= 1e-6


def test_energy_symmetric_in_tilt_sign():
    rep = run(override(FRE, "params.V", 0.9), 0)
    e = rep.energies(0)
    assert len(e) == 3 and abs(e[0] - e[1]) <= 1e-6
