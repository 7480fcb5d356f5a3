"""Boundary data, initial-guess library and the four experiment presets."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .deflation import DeflationConfig
from .forms import FESpace, MaterialParams, State, check_model
from .linsolve import LinearSolveConfig
from .mesh import ConfigurationError, build_mesh, stored_prolongation
from .newton import DampingSchedule, NewtonConfig

PI = np.pi

# --------------------------------------------------------------------------
# boundary data
# --------------------------------------------------------------------------


def _tilt_twist_bc(x, y):
    ang = np.where(y < 0.5, -PI / 4, PI / 4)
    return np.stack([np.cos(ang), np.zeros_like(x), np.sin(ang)])


def _uniform_x_bc(x, y):
    return np.stack([np.ones_like(x), np.zeros_like(x), np.zeros_like(x)])


def _center_facing_bc(x, y):
    cx, cy = 0.5 - x, 0.5 - y
    r = np.hypot(cx, cy)
    r = np.where(r == 0, 1.0, r)
    return np.stack([cx / r, cy / r, np.zeros_like(x)])


BOUNDARIES = {
    # name: (director Dirichlet sides, periodic in x, director data)
    "tilt_twist": (("bottom", "top"), True, _tilt_twist_bc),
    "uniform_x": (("bottom", "top"), True, _uniform_x_bc),
    "center_facing": (("bottom", "top", "left", "right"), False, _center_facing_bc),
}


# --------------------------------------------------------------------------
# initial guesses (interior values; boundary data imposed afterwards)
# --------------------------------------------------------------------------


def _const(v):
    def guess(x, y):
        return np.stack([np.full_like(x, c) for c in v])

    return guess


def _escape(sign):
    zeta = 9 * PI / 20

    def guess(x, y):
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = np.abs(np.arctan(np.divide(0.5 - y, 0.5 - x)))
        xi = np.where(np.isclose(x, 0.5, atol=1e-14), PI / 2, xi)
        n1 = np.where(x <= 0.5, 1.0, -1.0) * np.sin(zeta) * np.cos(xi)
        n2 = np.where(y <= 0.5, 1.0, -1.0) * np.sin(zeta) * np.sin(xi)
        n3 = sign * np.cos(zeta) * np.ones_like(x)
        n = np.stack([n1, n2, n3])
        center = np.isclose(x, 0.5, atol=1e-14) & np.isclose(y, 0.5, atol=1e-14)
        n[:, center] = np.array([[0.0], [0.0], [sign]])
        return n

    return guess


def _chol_modulated(x, y):
    xi, zeta = 7 * PI / 16, PI / 4
    a = zeta * np.cos(4 * PI * x)
    return np.stack([np.sin(xi) * np.cos(a), np.sin(xi) * np.sin(a), np.cos(xi) * np.ones_like(x)])


def _chol_helical(x, y):
    c = np.cos(2 * PI * y)
    return np.stack([c * np.cos(PI / 8), c * np.sin(PI / 8), np.sin(2 * PI * y)])


GUESSES = {
    "tilt_up": _const((np.cos(PI / 40), np.sin(PI / 40), 0.0)),
    "tilt_down": _const((np.cos(PI / 40), -np.sin(PI / 40), 0.0)),
    "escape_up": _escape(1.0),
    "escape_down": _escape(-1.0),
    "chol_planar": _const((np.cos(PI / 12), np.sin(PI / 12), 0.0)),
    "chol_modulated": _chol_modulated,
    "chol_helical": _chol_helical,
}


# --------------------------------------------------------------------------
# problems
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Problem:
    params: MaterialParams
    model: str = "nematic"
    boundary: str = "tilt_twist"
    electric: bool = False

    def __post_init__(self):
        check_model(self.model, self.params)
        if self.boundary not in BOUNDARIES:
            raise ConfigurationError(f"unknown boundary {self.boundary!r}")

    @property
    def periodic_x(self) -> bool:
        return BOUNDARIES[self.boundary][1]

    @property
    def director_sides(self):
        return BOUNDARIES[self.boundary][0]

    def space(self, level: int) -> FESpace:
        cache = _SPACE_CACHE
        key = (level, self.boundary, self.electric)
        if key not in cache:
            cache[key] = FESpace(build_mesh(level, self.periodic_x), self.director_sides, self.electric)
        return cache[key]

    def apply_boundary(self, state: State) -> State:
        """Impose Dirichlet data (director and potential) on ``state`` in place."""
        space = state.space
        mesh, dofs = space.mesh, space.dofs
        x, y = mesh.node_coords.T
        nbc = BOUNDARIES[self.boundary][2](x, y)
        Nn = mesh.n_nodes
        for side in self.director_sides:
            idx = mesh.boundary_nodes(side)
            for f in range(3):
                state.u[f * Nn + idx] = nbc[f, idx]
        if self.electric:
            state.u[3 * Nn + mesh.boundary_nodes("bottom")] = 0.0
            state.u[3 * Nn + mesh.boundary_nodes("top")] = self.params.V
        dofs.sync_slaves(state.u)
        return state

    def guess(self, name: str, level: int) -> State:
        if name not in GUESSES:
            raise ConfigurationError(f"unknown initial guess {name!r}")
        space = self.space(level)
        x, y = space.mesh.node_coords.T
        n = GUESSES[name](x, y)
        phi = self.params.V * y if self.electric else None
        return self.apply_boundary(space.state_from_fields(n, phi, 0.0))

    def prolong(self, state: State) -> State:
        """Interpolate ``state`` to the next finer level (Q2 interpolation, P0 copy)."""
        fine = self.space(state.mesh.level + 1)
        P = stored_prolongation(state.space.dofs, fine.dofs)
        return self.apply_boundary(State(fine, P @ state.u))


_SPACE_CACHE: dict = {}


# --------------------------------------------------------------------------
# presets
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    problem: Problem
    omega1: float
    delta1: float
    omega2: float
    delta2: float
    guesses: tuple
    deflation: DeflationConfig = DeflationConfig()
    newton: NewtonConfig = NewtonConfig()
    linear: LinearSolveConfig = LinearSolveConfig()
    levels: int = 3
    deflate: bool = True

    @property
    def undeflated_schedule(self) -> DampingSchedule:
        return DampingSchedule(self.omega1, self.delta1, "increasing")

    @property
    def deflated_schedule(self) -> DampingSchedule:
        return DampingSchedule(self.omega2, self.delta2, "decreasing")


ELASTIC = MaterialParams(K1=1.0, K2=3.0, K3=1.2)
FIVE_CB = MaterialParams(K1=1.0, K2=0.62903, K3=1.32258, eps0=1.42809, eps_perp=7.0, eps_a=11.5, V=1.1)

PRESETS = {
    "tilt_twist": ExperimentPreset(
        "tilt_twist",
        Problem(ELASTIC, "nematic", "tilt_twist"),
        1.0, 0.0, 1.0, 0.5,
        ("tilt_up", "tilt_down"),
    ),
    "freedericksz": ExperimentPreset(
        "freedericksz",
        Problem(FIVE_CB, "nematic", "uniform_x", electric=True),
        1.0, 0.0, 1.0, 0.5,
        ("tilt_up", "tilt_down"),
    ),
    "disclination": ExperimentPreset(
        "disclination",
        Problem(ELASTIC, "nematic", "center_facing"),
        0.4, 0.2, 1.0, 0.5,
        ("escape_up", "escape_down"),
    ),
    "cholesteric": ExperimentPreset(
        "cholesteric",
        Problem(ELASTIC.with_(t0=-2 * PI), "cholesteric", "uniform_x"),
        0.2, 0.2, 0.2, 0.0,
        ("chol_planar", "chol_modulated", "chol_helical"),
    ),
}


def get_preset(name: str) -> ExperimentPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def _coerce(value: str, current):
    if isinstance(current, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"expected a boolean, got {value!r}")
    if isinstance(current, tuple):
        return tuple(v.strip() for v in value.split(",") if v.strip())
    try:
        return type(current)(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"cannot convert {value!r} to {type(current).__name__}") from None


def override(obj, key: str, value):
    """Return a copy of a (nested) frozen dataclass with dotted ``key`` replaced.

    String values are converted to the type of the current field value.
    """
    head, _, rest = key.partition(".")
    names = {f.name for f in dataclasses.fields(obj)}
    if head not in names:
        # allow skipping the ``problem`` level, e.g. ``params.K2``
        if "problem" in names and head in {f.name for f in dataclasses.fields(obj.problem)}:
            return override(obj, f"problem.{key}", value)
        raise ConfigurationError(f"unknown configuration key {key!r}")
    current = getattr(obj, head)
    if rest:
        if not dataclasses.is_dataclass(current):
            raise ConfigurationError(f"unknown configuration key {key!r}")
        new = override(current, rest, value)
    else:
        if dataclasses.is_dataclass(current):
            raise ConfigurationError(f"key {key!r} names a group, not a value")
        new = _coerce(value, current) if isinstance(value, str) else value
    try:
        return dataclasses.replace(obj, **{head: new})
    except (ValueError, TypeError) as exc:
        raise ConfigurationError(f"invalid value for {key!r}: {exc}") from None


def preset_to_dict(preset: ExperimentPreset) -> dict:
    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, tuple):
            return [conv(x) for x in v]
        if isinstance(v, (np.floating,)):
            return float(v)
        return v

    return conv(preset)
