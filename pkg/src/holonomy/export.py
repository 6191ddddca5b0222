"""CSV tables, sparse triplet files and run manifests.

Every writer goes through a temporary file and an atomic rename.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import platform
import sys
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .measures import HolonomyConstraintSystem, OccupationMeasure
from .model import GridFunction


def _atomic_write(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
    return path


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return _atomic_write(path, buf.getvalue())


def grid_function_rows(gf: GridFunction):
    for idx in np.ndindex(*gf.grid.shape):
        yield (*idx, gf.values[idx])


def write_grid_function(path: str | Path, gf: GridFunction) -> Path:
    header = [f"i{d}" for d in range(gf.grid.dim)] + ["value"]
    return write_csv(path, header, grid_function_rows(gf))


def write_convergence_log(path: str | Path, log: Sequence[tuple[float, float, float]]) -> Path:
    return write_csv(path, ["time", "sup_change", "mean"], log)


def write_constraint_system(stem: str | Path, system: HolonomyConstraintSystem) -> tuple[Path, Path]:
    """stem.triplets holds 'row col value' lines; stem.meta.json describes the layout."""
    A = system.matrix().tocoo()
    order = np.lexsort((A.col, A.row))
    lines = [f"{int(A.row[i])} {int(A.col[i])} {float(A.data[i])!r}" for i in order]
    stem = Path(stem)
    trip = _atomic_write(stem.with_suffix(".triplets"), "\n".join(lines) + "\n")
    grid = system.disc.grid
    meta = {
        "format": "row col value, zero-based, one entry per line",
        "mode": system.mode,
        "shape": [int(A.shape[0]), int(A.shape[1])],
        "grid": {"dim": grid.dim, "n": grid.n},
        "n_velocities": system.n_vel,
        "K": system.K,
        "dt": system.dt,
        "free_source": system.free_source,
        "column_order": "((k * n_vel + j) * n + i), then source weights when free",
        "rhs": [float(v) for v in system.rhs()],
        "cost": [float(v) for v in system.cost()],
    }
    side = _atomic_write(stem.with_suffix(".meta.json"), json.dumps(meta, indent=1))
    return trip, side


def write_occupation(path: str | Path, occ: OccupationMeasure, tol: float = 0.0) -> Path:
    grid, vel = occ.grid, occ.vlat.velocities()
    header = ["k"] + [f"i{d}" for d in range(grid.dim)] + [f"q{d}" for d in range(grid.dim)] + ["weight"]
    w = occ.weights if occ.mode == "spacetime" else occ.weights[None]

    def rows():
        for k in range(w.shape[0]):
            for j in range(w.shape[1]):
                for flat in range(w.shape[2]):
                    if w[k, j, flat] > tol:
                        idx = np.unravel_index(flat, grid.shape)
                        yield (k, *(int(i) for i in idx), *vel[j], w[k, j, flat])

    return write_csv(path, header, rows())


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def versions() -> dict:
    import scipy

    from . import __version__

    return {"python": sys.version.split()[0], "numpy": np.__version__, "scipy": scipy.__version__,
            "holonomy": __version__, "platform": platform.platform()}


def write_manifest(out_dir: str | Path, command: str, config_text: str, seed: int, tolerances: dict,
                   artifacts: Sequence[str | Path], extra: dict | None = None) -> Path:
    manifest = {
        "command": command,
        "config_sha256": config_hash(config_text),
        "seed": seed,
        "tolerances": tolerances,
        "versions": versions(),
        "artifacts": sorted(Path(a).name for a in artifacts),
    }
    if extra:
        manifest.update(extra)
    return _atomic_write(Path(out_dir) / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True, default=float))
