"""Run configuration: TOML file with sections, environment overrides, validation.

Every key may appear at top level or inside its own section; anything else
is rejected so typos fail loudly. ``RIDEACCEPT_<KEY>`` environment variables
override file values (the value is parsed as a TOML literal, falling back
to a plain string).
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .choice import ChoiceModel
from .errors import ConfigurationError
from .netgraph import RoadGraph, classify_speeds, generate_grid, load_graph
from .scenario import DEFAULT_SHARES, ExperimentPlan, ScenarioConfig

ENV_PREFIX = "RIDEACCEPT_"

_SCENARIO = ScenarioConfig()
_MODEL = ChoiceModel()

# key -> (section, type, default)
SCHEMA: dict[str, tuple[str, str, Any]] = {
    "horizon_s": ("scenario", "float", _SCENARIO.horizon_s),
    "n_drivers": ("scenario", "int", _SCENARIO.n_drivers),
    "n_travellers": ("scenario", "int", _SCENARIO.n_travellers),
    "behavioural_share": ("scenario", "float", _SCENARIO.behavioural_share),
    "fare_per_km_eur": ("scenario", "float", _SCENARIO.fare_per_km_eur),
    "central_x_m": ("scenario", "float?", None),
    "central_y_m": ("scenario", "float?", None),
    "central_radius_m": ("scenario", "float", _SCENARIO.central_radius_m),
    "central_speed_kmh": ("scenario", "float", _SCENARIO.central_speed_kmh),
    "outer_speed_kmh": ("scenario", "float", _SCENARIO.outer_speed_kmh),
    "rating_low": ("scenario", "float", _SCENARIO.rating_low),
    "rating_high": ("scenario", "float", _SCENARIO.rating_high),
    "max_offer_rounds": ("scenario", "int", _SCENARIO.max_offer_rounds),
    "max_wait_s": ("scenario", "float?", None),
    "min_trip_m": ("scenario", "float", _SCENARIO.min_trip_m),
    "arrival_process": ("scenario", "str", _SCENARIO.arrival_process),
    "master_seed": ("scenario", "int", _SCENARIO.master_seed),
    "grid_rows": ("graph", "int", 20),
    "grid_cols": ("graph", "int", 20),
    "grid_edge_m": ("graph", "float", 125.0),
    "nodes_file": ("graph", "str?", None),
    "edges_file": ("graph", "str?", None),
    "cache_max_nodes": ("graph", "int", 2000),
    "beta_asc": ("choice", "float", _MODEL.beta_asc),
    "beta_pickup": ("choice", "float", _MODEL.beta_pickup),
    "beta_waiting": ("choice", "float", _MODEL.beta_waiting),
    "beta_time1loc": ("choice", "float", _MODEL.beta_time1loc),
    "beta_rlrd": ("choice", "float", _MODEL.beta_rlrd),
    "calibrated_p": ("choice", "float?", None),
    "calibration_runs": ("choice", "int", 10),
    "shares": ("sweep", "floats", list(DEFAULT_SHARES)),
    "replications": ("sweep", "int", 10),
    "jobs": ("sweep", "int", 1),
    "pickup_grid": ("sensitivity", "floats", [float(i) for i in range(0, 31)]),
    "waiting_grid": ("sensitivity", "floats", [float(i) for i in range(0, 61, 2)]),
    "time1loc_grid": ("sensitivity", "floats", [0.0, 1.0]),
    "rlrd_grid": ("sensitivity", "floats", [i / 4 for i in range(0, 21)]),
    "out_dir": ("output", "str", "out"),
    "plots": ("output", "bool", False),
}
SECTIONS = sorted({s for s, _, _ in SCHEMA.values()})
# keys that change how a run is executed but never what it computes
RUNTIME_KEYS = {"jobs", "out_dir", "plots"}


def _coerce(key: str, kind: str, value: Any) -> Any:
    optional = kind.endswith("?")
    base = kind.rstrip("?")
    if value is None and optional:
        return None
    ok = False
    if base == "int":
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif base == "float":
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif base == "str":
        ok = isinstance(value, str)
    elif base == "bool":
        ok = isinstance(value, bool)
    elif base == "floats":
        ok = isinstance(value, list) and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
        value = [float(v) for v in value] if ok else value
    if not ok:
        raise ConfigurationError(f"{key}: expected {base}, got {type(value).__name__} {value!r}")
    return value


@dataclass(frozen=True)
class RunConfig:
    values: Mapping[str, Any]
    source: Optional[str] = None
    lines: Mapping[str, int] = field(default_factory=dict, compare=False)

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key) from None

    def with_values(self, **overrides) -> "RunConfig":
        merged = dict(self.values)
        for key, value in overrides.items():
            if key not in SCHEMA:
                raise ConfigurationError(f"unknown key {key!r}")
            merged[key] = _coerce(key, SCHEMA[key][1], value)
        return _validated(merged, self.source, self.lines)

    def digest(self) -> str:
        payload = {k: v for k, v in sorted(self.values.items()) if k not in RUNTIME_KEYS}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]

    def choice_model(self) -> ChoiceModel:
        return ChoiceModel(self.beta_asc, self.beta_pickup, self.beta_waiting,
                           self.beta_time1loc, self.beta_rlrd)

    def scenario(self) -> ScenarioConfig:
        centre = None
        if self.central_x_m is not None or self.central_y_m is not None:
            if self.central_x_m is None or self.central_y_m is None:
                raise ConfigurationError("central_x_m and central_y_m must be set together")
            centre = (self.central_x_m, self.central_y_m)
        return ScenarioConfig(
            horizon_s=self.horizon_s, n_drivers=self.n_drivers, n_travellers=self.n_travellers,
            behavioural_share=self.behavioural_share, fare_per_km_eur=self.fare_per_km_eur,
            central_centre=centre, central_radius_m=self.central_radius_m,
            central_speed_kmh=self.central_speed_kmh, outer_speed_kmh=self.outer_speed_kmh,
            rating_low=self.rating_low, rating_high=self.rating_high,
            max_offer_rounds=self.max_offer_rounds, max_wait_s=self.max_wait_s,
            min_trip_m=self.min_trip_m, arrival_process=self.arrival_process,
            master_seed=self.master_seed, choice_model=self.choice_model(),
        )

    def plan(self) -> ExperimentPlan:
        return ExperimentPlan(tuple(self.shares), self.replications, self.master_seed)

    def sensitivity_grids(self) -> dict[str, list[float]]:
        return {"pickup": self.pickup_grid, "waiting": self.waiting_grid,
                "time1_loc": self.time1loc_grid, "rlrd": self.rlrd_grid}

    def raw_graph(self) -> RoadGraph:
        if (self.nodes_file is None) != (self.edges_file is None):
            raise ConfigurationError("nodes_file and edges_file must be given together")
        if self.nodes_file is not None:
            base = Path(self.source).parent if self.source else Path(".")
            graph = load_graph(base / self.nodes_file, base / self.edges_file)
        else:
            graph = generate_grid(self.grid_rows, self.grid_cols, self.grid_edge_m)
        graph.cache_max_nodes = self.cache_max_nodes
        return graph

    def graph(self) -> RoadGraph:
        """Road graph with central/outer speeds assigned."""
        graph = self.raw_graph()
        scenario = self.scenario()
        classified = classify_speeds(graph, scenario.zone(graph)[0], self.central_radius_m,
                                     self.central_speed_kmh, self.outer_speed_kmh)
        classified.cache_max_nodes = self.cache_max_nodes
        return classified


def _key_lines(text: str) -> dict[str, int]:
    lines = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*([A-Za-z0-9_\-]+)\s*=", line)
        if m:
            lines.setdefault(m.group(1), lineno)
    return lines


def _validated(values: dict, source: Optional[str], lines: Mapping[str, int]) -> RunConfig:
    cfg = RunConfig(values, source, lines)
    try:
        cfg.scenario()
        cfg.plan()
        if cfg.nodes_file is None and (cfg.grid_rows < 2 or cfg.grid_cols < 2):
            raise ConfigurationError("grid_rows: grid needs at least 2 rows and 2 columns")
        if not cfg.grid_edge_m > 0:
            raise ConfigurationError("grid_edge_m: must be positive")
        if cfg.cache_max_nodes < 0:
            raise ConfigurationError("cache_max_nodes: must be nonnegative")
        if cfg.calibrated_p is not None and not 0.0 <= cfg.calibrated_p <= 1.0:
            raise ConfigurationError("calibrated_p: must lie in [0, 1]")
        if cfg.calibration_runs < 1:
            raise ConfigurationError("calibration_runs: must be positive")
        if cfg.jobs < 1:
            raise ConfigurationError("jobs: must be positive")
        for key in ("pickup_grid", "waiting_grid", "time1loc_grid", "rlrd_grid"):
            if not cfg.values[key]:
                raise ConfigurationError(f"{key}: grid must not be empty")
    except ConfigurationError as exc:
        key = str(exc).split(":", 1)[0]
        where = f" (line {lines[key]})" if key in lines else ""
        raise ConfigurationError(f"{exc}{where}") from None
    return cfg


def parse_config(path: Optional[str | Path] = None,
                 env: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Load, merge with defaults and environment overrides, and validate."""
    text = ""
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    lines = _key_lines(text)

    values = {k: v[2] for k, v in SCHEMA.items()}

    def assign(key, value, section):
        where = f" (line {lines[key]})" if key in lines else ""
        if key not in SCHEMA:
            raise ConfigurationError(f"unknown key {key!r}{where}")
        expected = SCHEMA[key][0]
        if section is not None and section != expected:
            raise ConfigurationError(f"key {key!r} belongs in [{expected}], not [{section}]{where}")
        try:
            values[key] = _coerce(key, SCHEMA[key][1], value)
        except ConfigurationError as exc:
            raise ConfigurationError(f"{exc}{where}") from None

    for key, value in doc.items():
        if isinstance(value, dict):
            if key not in SECTIONS:
                where = f" (line {lines[key]})" if key in lines else ""
                raise ConfigurationError(f"unknown section [{key}]{where}")
            for sub, subval in value.items():
                assign(sub, subval, key)
        else:
            assign(key, value, None)

    env = os.environ if env is None else env
    for name, raw in sorted(env.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower()
        if key not in SCHEMA:
            raise ConfigurationError(f"unknown key {key!r} from environment variable {name}")
        try:
            value = tomllib.loads(f"v = {raw}")["v"]
        except tomllib.TOMLDecodeError:
            value = raw
        values[key] = _coerce(key, SCHEMA[key][1], value)

    return _validated(values, str(path) if path is not None else None, lines)
