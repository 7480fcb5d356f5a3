"""Parameter sweeps across the tilt-twist and Freedericksz pitchfork bifurcations."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .deflation import DeflationConfig
from .driver import run
from .forms import State
from .mesh import ConfigurationError
from .problems import ExperimentPreset, override

log = logging.getLogger(__name__)

SWEEP_PARAMS = {"K2": "params.K2", "V": "params.V"}
# Just above the Freedericksz threshold the tilted roots sit close to the
# uniform one and the preset shift (alpha = 1) sends deflated iterates to
# blowup; a larger shift keeps the deflated step near the Newton step away
# from the poles.  Other presets sweep with their own deflation settings.
SWEEP_DEFLATION = {"freedericksz": DeflationConfig(p=3.0, alpha=10.0)}


def sweep_deflation(preset: ExperimentPreset) -> DeflationConfig:
    return SWEEP_DEFLATION.get(preset.name, preset.deflation)


def theta_m(state: State) -> float:
    """Largest nodal tilt ``|asin(n2)|`` of the director."""
    return float(np.max(np.abs(np.arcsin(np.clip(state.n[1], -1.0, 1.0)))))


def critical_voltage(K1: float, eps0: float, eps_a: float) -> float:
    return float(np.pi * np.sqrt(K1 / (eps0 * eps_a)))


@dataclass(frozen=True)
class SweepSpec:
    preset: ExperimentPreset
    parameter: str
    lo: float
    hi: float
    steps: int
    levels: int = 3
    deflation: DeflationConfig | None = None  # None: sweep_deflation(preset)

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMS:
            raise ConfigurationError(f"sweep parameter must be one of {sorted(SWEEP_PARAMS)}")
        if not self.lo < self.hi:
            raise ConfigurationError("sweep range needs lo < hi")
        if self.steps < 2:
            raise ConfigurationError("sweep needs at least 2 steps")

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.steps)


@dataclass(frozen=True)
class BranchPoint:
    value: float
    solution_id: int
    theta_m: float
    energy: float


@dataclass
class SweepResult:
    spec: SweepSpec
    points: list = field(default_factory=list)
    counts: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    @property
    def bracket(self):
        """``(last value with one branch, first value with >= 3 branches)`` or None."""
        vals = sorted(self.counts)
        first = next((v for v in vals if self.counts[v] >= 3), None)
        if first is None:
            return None
        below = [v for v in vals if v < first and self.counts[v] == 1]
        if not below:
            return None
        return (below[-1], first)

    @property
    def estimate(self):
        b = self.bracket
        return None if b is None else 0.5 * (b[0] + b[1])


def sweep(spec: SweepSpec) -> SweepResult:
    """Full nested iteration plus deflation at every parameter value."""
    out = SweepResult(spec)
    key = SWEEP_PARAMS[spec.parameter]
    base = replace(spec.preset, deflation=spec.deflation or sweep_deflation(spec.preset))
    for v in spec.values:
        v = float(v)
        try:
            report = run(override(base, key, v), spec.levels)
        except (ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
            log.warning("sweep point %s=%g failed: %s", spec.parameter, v, exc)
            out.failures.append(v)
            out.counts[v] = 0
            continue
        found = [s for s in report.solutions if spec.levels in s.levels]
        out.counts[v] = len(found)
        for s in found:
            out.points.append(BranchPoint(v, s.id, theta_m(s.state), s.levels[spec.levels].energy))
        log.info("%s=%g: %d branches", spec.parameter, v, len(found))
    return out


def write_sweep_csv(result: SweepResult, path) -> None:
    lines = ["parameter,solution_id,theta_m,energy"]
    for p in result.points:
        lines.append(f"{p.value:.17g},{p.solution_id},{p.theta_m:.17g},{p.energy:.17g}")
    with open(path, "w", newline="\n", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
