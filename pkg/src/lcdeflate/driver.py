"""Nested iteration over uniformly refined meshes with deflated discovery."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .deflation import DISTINCT_TOL, DeflationSet, u_distance_sq
from .forms import State, free_energy
from .linsolve import LinearSolver, WorkUnitMeter, work_units
from .mesh import MAX_LEVEL, ConfigurationError
from .newton import NewtonOutcome, newton_solve
from .problems import ExperimentPreset, preset_to_dict

log = logging.getLogger(__name__)


@dataclass
class LevelEntry:
    how: str  # initial | continued | deflated
    status: str
    energy: float
    iterations: int
    residuals: list


@dataclass
class SolutionRecord:
    id: int
    state: State
    discovered_level: int
    provenance: str  # initial | deflated
    guess: str
    levels: dict = field(default_factory=dict)
    cycles: Counter = field(default_factory=Counter)

    @property
    def energy(self) -> float:
        return self.levels[max(self.levels)].energy

    @property
    def energies(self) -> dict:
        return {l: e.energy for l, e in sorted(self.levels.items())}

    @property
    def iterations(self) -> dict:
        return {l: e.iterations for l, e in sorted(self.levels.items())}

    @property
    def warning(self) -> bool:
        return any(e.status != "converged" for e in self.levels.values())


@dataclass
class Attempt:
    """A discovery solve that did not produce a new solution."""

    level: int
    guess: str
    status: str
    iterations: int
    residuals: list


@dataclass
class RunReport:
    config: dict
    finest: int
    solutions: list = field(default_factory=list)
    failed: list = field(default_factory=list)
    anonymous_cycles: Counter = field(default_factory=Counter)
    linear_iterations: dict = field(default_factory=dict)

    @property
    def anonymous_iterations(self) -> dict:
        out = {l: 0 for l in range(self.finest + 1)}
        for a in self.failed:
            out[a.level] += a.iterations
        return out

    @property
    def attributed_iterations(self) -> int:
        return sum(sum(s.iterations.values()) for s in self.solutions)

    @property
    def total_iterations(self) -> int:
        return self.attributed_iterations + sum(self.anonymous_iterations.values())

    def energies(self, level: int | None = None) -> list:
        level = self.finest if level is None else level
        return sorted(s.levels[level].energy for s in self.solutions if level in s.levels)

    def solution_work_units(self, rec: SolutionRecord) -> float:
        return work_units(WorkUnitMeter(rec.cycles), self.finest)

    def to_dict(self) -> dict:
        sols = []
        for s in self.solutions:
            sols.append(
                {
                    "id": s.id,
                    "guess": s.guess,
                    "provenance": s.provenance,
                    "discovered_level": s.discovered_level,
                    "warning": s.warning,
                    "work_units": self.solution_work_units(s),
                    "levels": {
                        str(l): {
                            "how": e.how,
                            "status": e.status,
                            "energy": e.energy,
                            "newton_iterations": e.iterations,
                            "residuals": e.residuals,
                        }
                        for l, e in sorted(s.levels.items())
                    },
                }
            )
        return {
            "config": self.config,
            "finest_level": self.finest,
            "solutions": sols,
            "anonymous": {
                "iterations_per_level": {str(l): n for l, n in self.anonymous_iterations.items()},
                "work_units": work_units(WorkUnitMeter(self.anonymous_cycles), self.finest),
                "attempts": [
                    {"level": a.level, "guess": a.guess, "status": a.status, "iterations": a.iterations, "residuals": a.residuals}
                    for a in self.failed
                ],
            },
            "totals": {
                "newton_iterations": self.total_iterations,
                "attributed_iterations": self.attributed_iterations,
            },
            "linear_iterations": {
                str(l): {
                    "solves": len(v),
                    "max": max(v, default=0),
                    "mean": float(np.mean(v)) if v else 0.0,
                }
                for l, v in sorted(self.linear_iterations.items())
            },
        }


def is_distinct(state: State, known, tol: float = DISTINCT_TOL) -> bool:
    return all(np.sqrt(max(u_distance_sq(state, k), 0.0)) > tol for k in known)


class NestedIteration:
    """Stateful runner; ``run`` drives the whole level loop."""

    def __init__(self, preset: ExperimentPreset, finest: int | None = None):
        self.preset = preset
        self.problem = preset.problem
        self.finest = preset.levels if finest is None else finest
        if not 0 <= self.finest <= MAX_LEVEL:
            raise ConfigurationError(f"levels must lie in 0..{MAX_LEVEL}, got {self.finest}")
        if not preset.guesses:
            raise ConfigurationError("at least one initial guess is required")
        self.meter = WorkUnitMeter(finest=self.finest)
        self.solver = LinearSolver(preset.linear, self.meter)
        self.report = RunReport(preset_to_dict(preset), self.finest)

    def _newton(self, state, omega, roots=None) -> NewtonOutcome:
        p = self.preset
        out = newton_solve(state, self.problem.params, self.problem.model, self.solver, omega, p.newton, roots, p.deflation)
        self.report.linear_iterations.setdefault(state.mesh.level, []).extend(out.linear_iterations)
        return self._polish(out)

    def _polish(self, out: NewtonOutcome) -> NewtonOutcome:
        """Tighten a converged state with full undeflated steps so deflation poles sit on the discrete root."""
        cfg = self.preset.newton
        if not out.converged or cfg.polish_tol <= 0 or out.residuals[-1] <= cfg.polish_tol:
            return out
        tight = replace(cfg, fooc_tol=cfg.polish_tol, max_iters=cfg.polish_iters)
        extra = newton_solve(out.state, self.problem.params, self.problem.model, self.solver, 1.0, tight)
        self.report.linear_iterations.setdefault(out.state.mesh.level, []).extend(extra.linear_iterations)
        out.cycles.update(extra.cycles)
        out.iterations += extra.iterations
        out.residuals.extend(extra.residuals[1:])
        out.linear_iterations.extend(extra.linear_iterations)
        if extra.converged:
            out.state = extra.state
        else:
            log.debug("polishing stalled at residual %.3g", extra.residuals[-1])
        return out

    def _entry(self, how, out: NewtonOutcome) -> LevelEntry:
        e = free_energy(out.state, self.problem.params, self.problem.model)
        return LevelEntry(how, out.status, float(e), out.iterations, out.residuals)

    def continue_solutions(self, level: int) -> None:
        """Undeflated re-convergence of every known solution on ``level``."""
        omega = self.preset.undeflated_schedule.omega(level)
        for rec in self.report.solutions:
            if level in rec.levels:
                continue
            out = self._newton(rec.state, omega)
            rec.cycles.update(out.cycles)
            if out.converged:
                rec.state = out.state
            else:
                log.warning("solution %d did not re-converge on level %d (%s)", rec.id, level, out.status)
            entry = self._entry("continued", out)
            if not out.converged:
                # keep the prolonged state; report its energy
                entry.energy = float(free_energy(rec.state, self.problem.params, self.problem.model))
            rec.levels[level] = entry

    def _add(self, level, guess, provenance, out) -> SolutionRecord:
        rec = SolutionRecord(len(self.report.solutions), out.state, level, provenance, guess)
        rec.levels[level] = self._entry(provenance, out)
        rec.cycles.update(out.cycles)
        self.report.solutions.append(rec)
        log.info("level %d: new solution %d from %s, energy %.6f", level, rec.id, guess, rec.levels[level].energy)
        return rec

    def _fail(self, level, guess, out, status=None):
        self.report.failed.append(Attempt(level, guess, status or out.status, out.iterations, out.residuals))
        self.report.anonymous_cycles.update(out.cycles)

    def initial_solve(self) -> None:
        guess = self.preset.guesses[0]
        omega = self.preset.undeflated_schedule.omega(0)
        out = self._newton(self.problem.guess(guess, 0), omega)
        if out.converged:
            self._add(0, guess, "initial", out)
        else:
            self._fail(0, guess, out)

    def discover(self, level: int) -> list:
        """Deflated solve from every guess against all known solutions on ``level``."""
        if not self.preset.deflate:
            return []
        omega_d = self.preset.deflated_schedule.omega(level)
        omega_u = self.preset.undeflated_schedule.omega(level)
        found = []
        for guess in self.preset.guesses:
            known = [r.state for r in self.report.solutions]
            roots = DeflationSet(list(known))
            start = self.problem.guess(guess, level)
            out = self._newton(start, omega_d if known else omega_u, roots)
            if not out.converged:
                self._fail(level, guess, out)
            elif not is_distinct(out.state, known):
                self._fail(level, guess, out, "duplicate")
            else:
                found.append(self._add(level, guess, "deflated", out))
        return found

    def refine(self, level: int) -> None:
        for rec in self.report.solutions:
            rec.state = self.problem.prolong(rec.state)

    def run(self) -> RunReport:
        self.initial_solve()
        for level in range(self.finest + 1):
            if level > 0:
                self.refine(level - 1)
            self.continue_solutions(level)
            self.discover(level)
        return self.report


def run(preset: ExperimentPreset, levels: int | None = None) -> RunReport:
    """Run nested iteration with deflation up to ``levels`` (default: preset depth)."""
    return NestedIteration(preset, levels).run()
