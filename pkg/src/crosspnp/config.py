"""Run configuration: TOML parsing, validation, and serialization.

A run config is a flat TOML document selecting a scenario preset (or
describing a custom one in a ``[custom]`` table) plus numerical and
output options.  Unknown keys are rejected with their full path so
typos never silently fall back to defaults.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .geometry import (
    BoundarySpec,
    ConfigError,
    Grid1D,
    ScenarioConfig,
    build_scenario,
    channel_geometry,
    uniform_geometry,
)
from .model import PhysicalParams, SpeciesSpec

_ENV_OUT = "CROSSPNP_OUT"

# key -> (type, default); None default means "resolved later".
_TOP_LEVEL = {
    "scenario": (str, "calcium"),
    "dt": (float, None),
    "cells": (int, None),
    "max_steps": (int, None),
    "steady_tol": (float, None),
    "newton_tol": (float, None),
    "out": (str, None),
    "cadence": (int, 1),
    "concentration_scale": (float, None),
    "thermal_voltage_mv": (float, None),
    "area_weighted": (bool, False),
    "poisson_area_weighting": (bool, True),
    "boundary_closure": (str, "full-cell"),
    "no_flux": (bool, False),
    "workers": (int, 2),
}

_CUSTOM_KEYS = {
    "beta": float,
    "lambda_sq": float,
    "geometry": str,  # "channel" | "uniform"
    "oxygen": str,  # "standard" | "degenerate" | "none"
    "area": float,
    "phi_left": float,
    "phi_right": float,
    "provenance": str,
}

_SPECIES_KEYS = {
    "name": str,
    "diffusivity": float,
    "valence": float,
    "boundary_left": float,
    "boundary_right": float,
}


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; ``scenario`` is fully resolved."""

    scenario: ScenarioConfig
    out_dir: str
    cadence: int = 1
    workers: int = 2
    source: dict = field(default_factory=dict)  # resolved key/value view

    def __post_init__(self) -> None:
        if self.cadence < 1:
            raise ConfigError("cadence must be at least 1")


def _coerce(path: str, value: Any, expect):
    if expect is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"key {path!r} must be a number, got {value!r}")
        return float(value)
    if expect is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"key {path!r} must be an integer, got {value!r}")
        return value
    if not isinstance(value, expect):
        raise ConfigError(f"key {path!r} must be {expect.__name__}, got {value!r}")
    return value


def _check_positive(path: str, value) -> None:
    if value is not None and value <= 0:
        raise ConfigError(f"key {path!r} must be positive, got {value}")


def _parse_custom(table: dict) -> ScenarioConfig:
    unknown = set(table) - set(_CUSTOM_KEYS) - {"species"}
    if unknown:
        raise ConfigError(f"unknown keys in [custom]: {sorted(unknown)}")
    species_tables = table.get("species")
    if not species_tables:
        raise ConfigError("custom scenario needs at least one [[custom.species]]")
    species, left, right = [], [], []
    for k, st in enumerate(species_tables):
        unknown = set(st) - set(_SPECIES_KEYS)
        if unknown:
            raise ConfigError(f"unknown keys in custom.species[{k}]: {sorted(unknown)}")
        for req in _SPECIES_KEYS:
            if req not in st:
                raise ConfigError(f"custom.species[{k}] lacks {req!r}")
        vals = {nm: _coerce(f"custom.species[{k}].{nm}", st[nm], t)
                for nm, t in _SPECIES_KEYS.items()}
        species.append(SpeciesSpec(vals["name"], vals["diffusivity"], vals["valence"]))
        left.append(vals["boundary_left"])
        right.append(vals["boundary_right"])

    vals = {}
    for nm, t in _CUSTOM_KEYS.items():
        if nm in table:
            vals[nm] = _coerce(f"custom.{nm}", table[nm], t)
    for req in ("beta", "lambda_sq"):
        if req not in vals:
            raise ConfigError(f"custom scenario lacks {req!r}")
    boundary = BoundarySpec(
        "dirichlet", np.array(left), np.array(right),
        vals.get("phi_left", 0.0), vals.get("phi_right", 0.0),
    )
    grid = Grid1D(100)
    kind = vals.get("geometry", "uniform")
    if kind == "channel":
        geometry = channel_geometry(grid, vals.get("oxygen", "none"))
    elif kind == "uniform":
        geometry = uniform_geometry(grid, area=vals.get("area", 1.0))
    else:
        raise ConfigError(f"key 'custom.geometry' must be channel or uniform, got {kind!r}")
    return ScenarioConfig(
        name="custom",
        params=PhysicalParams(vals["beta"], vals["lambda_sq"], len(species)),
        species=tuple(species),
        grid=grid,
        geometry=geometry,
        boundary=boundary,
        provenance=vals.get("provenance", "user"),
    )


def parse_config(text: str) -> RunConfig:
    """Parse and validate a TOML run configuration."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    unknown = set(doc) - set(_TOP_LEVEL) - {"custom"}
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    values = {}
    for key, (t, default) in _TOP_LEVEL.items():
        if key in doc:
            values[key] = _coerce(key, doc[key], t)
        else:
            values[key] = default
    for key in ("dt", "steady_tol", "newton_tol", "cadence", "cells", "max_steps",
                "concentration_scale", "thermal_voltage_mv", "workers"):
        _check_positive(key, values[key])

    if "custom" in doc:
        scenario = _parse_custom(doc["custom"])
    else:
        name = values["scenario"]
        if name not in ("calcium", "degenerate"):
            raise ConfigError(f"unknown scenario {name!r} (and no [custom] table)")
        scenario = build_scenario(name)

    overrides = {}
    if values["cells"] is not None:
        grid = Grid1D(values["cells"])
        overrides["grid"] = grid
        if scenario.name in ("calcium", "degenerate"):
            variant = scenario.geometry.oxygen_variant
            overrides["geometry"] = channel_geometry(grid, variant)
        else:
            area = float(scenario.geometry.cell_area[0])
            overrides["geometry"] = uniform_geometry(grid, area=area)
    for src, dst in (
        ("dt", "dt"), ("max_steps", "max_steps"), ("steady_tol", "steady_tolerance"),
        ("newton_tol", "newton_tolerance"),
        ("concentration_scale", "concentration_scale"),
        ("thermal_voltage_mv", "thermal_voltage_mv"),
        ("area_weighted", "area_weighted_norms"),
        ("poisson_area_weighting", "poisson_area_weighting"),
        ("boundary_closure", "boundary_closure"),
    ):
        if values[src] is not None:
            overrides[dst] = values[src]
    if values["no_flux"]:
        overrides["boundary"] = replace(scenario.boundary, mode="no-flux")
    try:
        scenario = replace(scenario, **overrides)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    out_dir = values["out"] or os.environ.get(_ENV_OUT) or "out"
    resolved = dict(values)
    resolved["out"] = out_dir
    resolved["scenario"] = scenario.name
    return RunConfig(
        scenario=scenario,
        out_dir=out_dir,
        cadence=values["cadence"],
        workers=values["workers"],
        source=resolved,
    )


def _toml_scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        return repr(v)
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    raise TypeError(f"cannot serialize {type(value).__name__}")


def dump_toml(data: dict, prefix: str = "") -> str:
    """Serialize a nested dict of scalars/lists-of-tables to TOML text."""
    lines = []
    tables = []
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else key
        if isinstance(value, dict):
            tables.append(("table", path, value))
        elif isinstance(value, (list, tuple)) and value and isinstance(value[0], dict):
            tables.append(("array", path, value))
        elif isinstance(value, (list, tuple)):
            items = ", ".join(_toml_scalar(v) for v in value)
            lines.append(f"{key} = [{items}]")
        elif value is None:
            continue
        else:
            lines.append(f"{key} = {_toml_scalar(value)}")
    text = "\n".join(lines)
    for kind, path, value in tables:
        if kind == "table":
            text += f"\n\n[{path}]\n" + dump_toml(value)
        else:
            for entry in value:
                text += f"\n\n[[{path}]]\n" + dump_toml(entry)
    return text


def serialize_config(config: RunConfig) -> str:
    """Resolved config as TOML; parsing it again reproduces the config."""
    doc = {k: v for k, v in config.source.items() if k != "scenario"}
    sc = config.scenario
    head = {"scenario": sc.name} if sc.name != "custom" else {}
    doc = {
        **head,
        **{k: v for k, v in doc.items() if v is not None},
        "dt": sc.dt,
        "cells": sc.grid.n_cells,
        "max_steps": sc.max_steps,
        "steady_tol": sc.steady_tolerance,
        "newton_tol": sc.newton_tolerance,
        "concentration_scale": sc.concentration_scale,
        "thermal_voltage_mv": sc.thermal_voltage_mv,
        "no_flux": sc.boundary.mode == "no-flux",
    }
    if sc.name == "custom":
        kind = "uniform" if np.allclose(sc.geometry.cell_area, sc.geometry.cell_area[0]) else "channel"
        doc["custom"] = {
            "beta": sc.params.beta,
            "lambda_sq": sc.params.lambda_sq,
            "geometry": kind,
            "oxygen": sc.geometry.oxygen_variant,
            "phi_left": sc.boundary.phi_left,
            "phi_right": sc.boundary.phi_right,
            "provenance": sc.provenance,
            "species": [
                {
                    "name": s.name,
                    "diffusivity": s.diffusivity,
                    "valence": s.valence,
                    "boundary_left": float(sc.boundary.u_left[i]),
                    "boundary_right": float(sc.boundary.u_right[i]),
                }
                for i, s in enumerate(sc.species)
            ],
        }
        if kind == "uniform":
            doc["custom"]["area"] = float(sc.geometry.cell_area[0])
    return dump_toml(doc) + "\n"
