"""YAML experiment configuration.

One file describes the model, the grid, the velocity lattice and the optional
experiment sections.  Unknown keys and missing required keys are errors that
carry the line number in the file.

Example::

    family: power
    m: 2
    C0: 10
    c_shift: -1
    potential: {name: cosine, amplitude: -1.0, frequency: 1}
    diffusion: {name: constant, coef: 0.0}
    grid: {dim: 1, n: 64}
    velocity: {q_max: 2.5, n_q: 33}
    solve: {T_final: 20.0}
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .measures import DiscreteMeasure, Discretization, divisible_time_step
from .model import ConfigurationError, Diffusion, GridFunction, ModelSpec, TorusGrid, TrigField, VelocityLattice, \
    cosine_potential
from .pde import SolveConfig, random_trig_data


class ConfigError(ConfigurationError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


# key -> (required, nested schema or None); "*" marks a free-form value
_FIELD = (False, None)
SCHEMA: dict[str, tuple[bool, Any]] = {
    "family": (True, None),
    "m": (True, None),
    "C0": (True, None),
    "c_shift": _FIELD,
    "potential": (False, {"name": (True, None), "amplitude": _FIELD, "frequency": _FIELD, "terms": _FIELD}),
    "drift": (False, {"name": (True, None), "components": _FIELD}),
    "diffusion": (False, {"name": (True, None), "coef": _FIELD, "matrix": _FIELD}),
    "grid": (True, {"dim": (True, None), "n": (True, None)}),
    "velocity": (True, {"q_max": (True, None), "n_q": (True, None)}),
    "solve": (False, {"T_final": (True, None), "cfl_safety": _FIELD, "eps_viscosity": _FIELD,
                      "lf_dissipation": _FIELD, "snapshot_times": _FIELD, "scheme": _FIELD, "dt": _FIELD}),
    "lp": (False, {"eta": _FIELD, "dt": _FIELD, "cfl": _FIELD, "solver": _FIELD}),
    "data": (False, {"kind": (True, None), "amplitude": _FIELD, "frequency": _FIELD, "degree": _FIELD,
                     "scale": _FIELD, "flat_fraction": _FIELD}),
    "measures": (False, {"nu0": _FIELD, "nu1": _FIELD}),
    "experiment": (False, {"t": _FIELD, "horizons": _FIELD, "tail": _FIELD, "eps": _FIELD, "eta": _FIELD,
                           "alpha": _FIELD, "alphas": _FIELD, "K": _FIELD, "scales": _FIELD,
                           "barrier_C": _FIELD, "seeds": _FIELD, "pairs": _FIELD}),
    "tolerances": (False, {"profile": _FIELD, "lp": _FIELD, "monotone": _FIELD, "uniform": _FIELD}),
}


def _validate(node: yaml.Node, schema: dict, where: str) -> None:
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{where or 'top level'} must be a mapping", node.start_mark.line + 1)
    seen = {}
    for key_node, value_node in node.value:
        key = key_node.value
        line = key_node.start_mark.line + 1
        if key in seen:
            raise ConfigError(f"duplicate key {where}{key!r}", line)
        if key not in schema:
            raise ConfigError(f"unknown key {where}{key!r}", line)
        seen[key] = value_node
        sub = schema[key][1]
        if sub is not None and not (isinstance(value_node, yaml.ScalarNode) and value_node.tag.endswith("null")):
            _validate(value_node, sub, f"{where}{key}.")
    for key, (required, _) in schema.items():
        if required and key not in seen:
            raise ConfigError(f"missing required key {where}{key!r}", node.start_mark.line + 1)


def parse_config_text(text: str) -> dict:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML parse error: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark is not None else None) from None
    if root is None:
        raise ConfigError("empty configuration", 1)
    _validate(root, SCHEMA, "")
    return yaml.safe_load(text)


@dataclass
class ExperimentConfig:
    raw: dict
    text: str
    model: ModelSpec
    grid: TorusGrid
    vlat: VelocityLattice
    source: str = "<string>"
    sections: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name) or {})

    def solve_config(self, **overrides) -> SolveConfig:
        s = self.section("solve")
        if not s and "T_final" not in overrides:
            raise ConfigError("this command needs a 'solve' section")
        kw = {k: v for k, v in s.items()}
        if "snapshot_times" in kw:
            kw["snapshot_times"] = tuple(float(t) for t in kw["snapshot_times"])
        if kw.get("scheme") == "lattice":
            kw["velocity"] = self.vlat
        kw.update(overrides)
        return SolveConfig(**kw)

    def discretization(self) -> Discretization:
        """Without lp.dt the step is the largest stable one dividing 1, so integer horizons are exact."""
        s = self.section("lp")
        eta, cfl = float(s.get("eta", 0.0)), float(s.get("cfl", 1.0))
        dt = s.get("dt")
        if dt is None:
            dt = divisible_time_step(self.model, self.grid, self.vlat, eta, cfl=cfl)
        return Discretization(self.grid, self.vlat, eta, float(dt), cfl)

    def initial_data(self, rng: np.random.Generator | None = None) -> GridFunction:
        return build_data(self.section("data") or {"kind": "zero"}, self.grid, rng)

    def measure(self, key: str, default: Any = "uniform") -> DiscreteMeasure | str:
        spec = self.section("measures").get(key, default)
        return build_measure(spec, self.grid)


def _trig_field(spec: dict, dim: int, where: str) -> TrigField:
    name = spec.get("name")
    if name == "zero":
        return TrigField()
    if name == "cosine":
        return cosine_potential(float(spec.get("amplitude", 1.0)), int(spec.get("frequency", 1)), dim)
    if name == "trig":
        terms = []
        for entry in spec.get("terms", []):
            k, c, s = entry
            k = tuple(int(v) for v in np.atleast_1d(k))
            if len(k) != dim:
                raise ConfigError(f"{where}: wave vector {k} does not match dim {dim}")
            terms.append((k, float(c), float(s)))
        return TrigField(tuple(terms))
    raise ConfigError(f"{where}: unknown field name {name!r}")


def build_model(raw: dict) -> tuple[ModelSpec, TorusGrid, VelocityLattice]:
    grid = TorusGrid(int(raw["grid"]["dim"]), int(raw["grid"]["n"]))
    vlat = VelocityLattice(float(raw["velocity"]["q_max"]), int(raw["velocity"]["n_q"]), grid.dim)
    potential = _trig_field(raw.get("potential") or {"name": "zero"}, grid.dim, "potential")
    drift = None
    if raw.get("drift"):
        d = raw["drift"]
        if d.get("name") != "trig":
            raise ConfigError(f"drift: unknown name {d.get('name')!r}")
        comps = d.get("components") or []
        if len(comps) != grid.dim:
            raise ConfigError(f"drift: need {grid.dim} components")
        drift = tuple(_trig_field({"name": "trig", "terms": c}, grid.dim, "drift") for c in comps)
    dif = raw.get("diffusion") or {"name": "constant", "coef": 0.0}
    if dif.get("matrix") is not None:
        diffusion = Diffusion("constant", 0.0, tuple(tuple(float(v) for v in row) for row in dif["matrix"]))
    else:
        diffusion = Diffusion(dif["name"], float(dif.get("coef", 0.0)))
    model = ModelSpec(raw["family"], float(raw["m"]), float(raw["C0"]), potential, drift, diffusion,
                      float(raw.get("c_shift", 0.0)))
    return model, grid, vlat


def build_data(spec: dict, grid: TorusGrid, rng: np.random.Generator | None = None) -> GridFunction:
    x = grid.points().reshape(grid.shape + (grid.dim,))
    kind = spec["kind"]
    amp = float(spec.get("amplitude", 1.0))
    k = int(spec.get("frequency", 1))
    if kind == "zero":
        vals = np.zeros(grid.shape)
    elif kind == "sin":
        vals = amp * np.sum(np.sin(2 * np.pi * k * x), axis=-1)
    elif kind == "cos":
        vals = amp * np.sum(np.cos(2 * np.pi * k * x), axis=-1)
    elif kind == "abs_sin":
        vals = -amp * np.sum(np.abs(np.sin(np.pi * x)), axis=-1)
    elif kind == "neg_dist":
        vals = -amp * np.sum(np.minimum(x, 1 - x), axis=-1)
    elif kind == "random":
        rng = np.random.default_rng(0) if rng is None else rng
        return random_trig_data(grid, rng, int(spec.get("degree", 4)), float(spec.get("scale", 1.0)),
                                float(spec.get("flat_fraction", 0.0)))
    else:
        raise ConfigError(f"data: unknown kind {kind!r}")
    return GridFunction(grid, vals)


def build_measure(spec: Any, grid: TorusGrid) -> DiscreteMeasure | str:
    """'uniform', 'free', 'mather' (resolved by the caller), {kind: point, node: [i, ...]}, or a mix."""
    if isinstance(spec, str):
        if spec == "uniform":
            return DiscreteMeasure.uniform(grid)
        if spec in ("free", "mather"):
            return spec
        raise ConfigError(f"unknown measure {spec!r}")
    kind = spec.get("kind")
    if kind == "point":
        return DiscreteMeasure.point(grid, tuple(int(v) for v in np.atleast_1d(spec["node"])))
    if kind == "uniform":
        return DiscreteMeasure.uniform(grid)
    if kind == "mix":
        a, b = build_measure(spec["a"], grid), build_measure(spec["b"], grid)
        return a.mix(b, float(spec.get("lam", 0.5)))
    raise ConfigError(f"unknown measure kind {kind!r}")


def load_config(path: str | Path) -> ExperimentConfig:
    text = Path(path).read_text()
    return load_config_text(text, str(path))


def load_config_text(text: str, source: str = "<string>") -> ExperimentConfig:
    raw = parse_config_text(text)
    model, grid, vlat = build_model(raw)
    return ExperimentConfig(raw, text, model, grid, vlat, source)
