"""Delimited-text export and import of solution fields and run reports."""
from __future__ import annotations

import json
import os

import numpy as np

from .forms import State
from .mesh import COARSE_CELLS, ConfigurationError

HEADER = "x,y,n1,n2,n3,phi,lambda_cell"


def _g(v: float) -> str:
    return f"{v:.17g}"


def export_solution(state: State, path) -> None:
    """One row per Q2 node, x-major; lambda is taken from the lowest-index cell holding the node."""
    mesh = state.mesh
    xy = mesh.node_coords
    n = state.n
    phi = state.phi
    lam = state.lam[mesh.node_cell()]
    lines = [HEADER]
    for k in range(mesh.n_nodes):
        p = _g(phi[k]) if phi is not None else ""
        lines.append(",".join([_g(xy[k, 0]), _g(xy[k, 1]), _g(n[0, k]), _g(n[1, k]), _g(n[2, k]), p, _g(lam[k])]))
    try:
        with open(path, "w", newline="\n", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write solution file {os.fspath(path)!r}: {exc}") from exc


def import_solution(path, problem) -> State:
    """Rebuild a State for ``problem`` from a file written by :func:`export_solution`."""
    try:
        with open(path, encoding="ascii") as fh:
            header = fh.readline().strip()
            rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    except OSError as exc:
        raise OSError(f"cannot read solution file {os.fspath(path)!r}: {exc}") from exc
    if header != HEADER:
        raise ConfigurationError(f"{os.fspath(path)!r}: unexpected header {header!r}")
    nps = int(round(np.sqrt(len(rows))))
    cells = (nps - 1) // 2
    level = int(round(np.log2(max(cells, 1) / COARSE_CELLS)))
    space = problem.space(level)
    mesh = space.mesh
    if mesh.n_nodes != len(rows):
        raise ConfigurationError(f"{os.fspath(path)!r}: {len(rows)} rows do not form a supported mesh")
    n = np.array([[float(r[c]) for r in rows] for c in (2, 3, 4)])
    phi = np.array([float(r[5]) for r in rows]) if space.electric else None
    lam_nodes = np.array([float(r[6]) for r in rows])
    lam = np.empty(mesh.n_cells)
    lam[mesh.node_cell()] = lam_nodes  # every cell owns at least its centre node
    return space.state_from_fields(n, phi, lam)


def write_json(obj, path) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
