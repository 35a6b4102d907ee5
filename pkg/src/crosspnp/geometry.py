"""Grid, channel geometry, and packaged scenario presets.

The computational domain is the unit interval split into uniform cells.
The channel scenarios use a rotationally symmetric pore whose radius
narrows linearly into a throat; the cross-section area weights every
volume and flux term of the reduced one-dimensional system.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .model import PhysicalParams, SpeciesSpec


class ConfigError(ValueError):
    """Scenario or run configuration is invalid."""


@dataclass(frozen=True)
class Grid1D:
    """Uniform cell-centered grid on (0, 1)."""

    n_cells: int
    h: float = field(init=False)
    centers: np.ndarray = field(init=False)
    edges: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        if self.n_cells < 2:
            raise ConfigError("need at least two cells")
        h = 1.0 / self.n_cells
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "centers", (np.arange(self.n_cells) + 0.5) * h)
        object.__setattr__(self, "edges", np.arange(self.n_cells + 1) * h)


def radius_at(x):
    """Channel radius: linear funnels joined to a throat of radius 0.08."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError("position outside [0, 1]")
    r = np.where(x < 0.4, 0.48 - x, np.where(x <= 0.6, 0.08, x - 0.52))
    return float(r) if r.ndim == 0 else r


def area_at(x):
    """Cross-section area ``pi r(x)^2``."""
    r = np.asarray(radius_at(x))
    a = math.pi * r**2
    return float(a) if a.ndim == 0 else a


OXYGEN_VARIANTS = ("standard", "degenerate", "none")


def oxygen_profile(x, variant: str = "standard"):
    """Confined-oxygen volume fraction at position x.

    standard: 0.89 on (0.45, 0.55); degenerate: 0.81 on (0.35, 0.65);
    none: identically zero.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError("position outside [0, 1]")
    if variant == "standard":
        u = np.where((x > 0.45) & (x < 0.55), 0.89, 0.0)
    elif variant == "degenerate":
        u = np.where((x > 0.35) & (x < 0.65), 0.81, 0.0)
    elif variant == "none":
        u = np.zeros_like(x)
    else:
        raise ConfigError(f"unknown oxygen variant {variant!r}")
    return float(u) if u.ndim == 0 else u


def permanent_charge(x, variant: str = "standard"):
    """Background charge density carried by the confined oxygen: -u_O/2."""
    u = oxygen_profile(x, variant)
    return -0.5 * u


@dataclass(frozen=True)
class ChannelGeometry:
    """Per-cell and per-edge geometric data of a scenario.

    ``cell_area`` and ``edge_area`` sample the cross-section at cell
    centers and at cell interfaces (including the two domain ends);
    ``oxygen`` and ``charge`` are cell-center samples.
    """

    cell_area: np.ndarray  # (M,)
    edge_area: np.ndarray  # (M+1,)
    oxygen: np.ndarray  # (M,)
    charge: np.ndarray  # (M,)
    oxygen_variant: str = "none"

    def __post_init__(self) -> None:
        for name in ("cell_area", "edge_area", "oxygen", "charge"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.cell_area <= 0.0) or np.any(self.edge_area <= 0.0):
            raise ConfigError("areas must be positive")
        if np.any(self.oxygen < 0.0) or np.any(self.oxygen >= 1.0):
            raise ConfigError("oxygen fraction must lie in [0, 1)")
        if self.edge_area.shape[0] != self.cell_area.shape[0] + 1:
            raise ConfigError("need one more edge than cells")


def geometry_from_radius(
    grid: Grid1D,
    radius: Callable,
    oxygen_variant: str = "none",
) -> ChannelGeometry:
    """Sample an arbitrary positive radius profile onto a grid."""
    r_cell = np.asarray(radius(grid.centers), dtype=float)
    r_edge = np.asarray(radius(grid.edges), dtype=float)
    oxy = np.asarray(oxygen_profile(grid.centers, oxygen_variant), dtype=float)
    return ChannelGeometry(
        cell_area=math.pi * r_cell**2,
        edge_area=math.pi * r_edge**2,
        oxygen=oxy,
        charge=-0.5 * oxy,
        oxygen_variant=oxygen_variant,
    )


def channel_geometry(grid: Grid1D, oxygen_variant: str = "standard") -> ChannelGeometry:
    """The funnel-throat channel with its confined-oxygen filter."""
    return geometry_from_radius(grid, radius_at, oxygen_variant)


def uniform_geometry(
    grid: Grid1D,
    area: float = 1.0,
    oxygen: float = 0.0,
    charge=None,
) -> ChannelGeometry:
    """Constant cross-section, optionally with uniform oxygen or charge."""
    m = grid.n_cells
    oxy = np.full(m, float(oxygen))
    if charge is None:
        chg = -0.5 * oxy
    else:
        chg = np.full(m, float(charge)) if np.isscalar(charge) else np.asarray(charge, float)
    return ChannelGeometry(
        cell_area=np.full(m, float(area)),
        edge_area=np.full(m + 1, float(area)),
        oxygen=oxy,
        charge=chg,
        oxygen_variant="none" if oxygen == 0.0 else "custom",
    )


@dataclass(frozen=True)
class BoundarySpec:
    """Boundary data: Dirichlet reservoirs or insulated (no-flux) ends.

    In no-flux mode the species fluxes vanish at both ends while the
    potential keeps its Dirichlet values (a fully insulated Poisson
    problem would be singular); this is the configuration used for the
    conservation checks.
    """

    mode: str  # "dirichlet" | "no-flux"
    u_left: np.ndarray
    u_right: np.ndarray
    phi_left: float = 0.0
    phi_right: float = 0.0

    def __post_init__(self) -> None:
        if self.mode not in ("dirichlet", "no-flux"):
            raise ConfigError(f"unknown boundary mode {self.mode!r}")
        ul = np.atleast_1d(np.asarray(self.u_left, dtype=float))
        ur = np.atleast_1d(np.asarray(self.u_right, dtype=float))
        if ul.shape != ur.shape:
            raise ConfigError("left/right boundary vectors differ in length")
        for u in (ul, ur):
            if np.any(u <= 0.0) or u.sum() >= 1.0:
                raise ConfigError("Dirichlet data must be strictly interior")
        object.__setattr__(self, "u_left", ul)
        object.__setattr__(self, "u_right", ur)


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything a run needs: physics, geometry, boundary data, numerics."""

    name: str
    params: PhysicalParams
    species: tuple[SpeciesSpec, ...]
    grid: Grid1D
    geometry: ChannelGeometry
    boundary: BoundarySpec
    dt: float = 1e-3
    newton_tolerance: float = 1e-12
    newton_max_iterations: int = 50
    steady_tolerance: float = 1e-13
    max_steps: int = 50_000
    concentration_scale: float = 61.5  # mol/l per unit volume fraction
    thermal_voltage_mv: float = 25.693  # millivolt per unit of phi at beta = 1
    poisson_area_weighting: bool = True
    boundary_closure: str = "full-cell"  # or "half-cell"
    area_weighted_norms: bool = False
    channel_window: tuple[float, float] = (0.4, 0.6)
    provenance: str = "external-unverified"

    def __post_init__(self) -> None:
        if self.dt <= 0.0:
            raise ConfigError("dt must be positive")
        for nm in ("newton_tolerance", "steady_tolerance"):
            if getattr(self, nm) <= 0.0:
                raise ConfigError(f"{nm} must be positive")
        if self.boundary_closure not in ("full-cell", "half-cell"):
            raise ConfigError(f"unknown boundary closure {self.boundary_closure!r}")
        if len(self.species) != self.params.n_species:
            raise ConfigError("species list does not match n_species")
        if self.boundary.u_left.shape[0] != self.params.n_species:
            raise ConfigError("boundary vectors do not match n_species")

    @property
    def n_species(self) -> int:
        return self.params.n_species

    @property
    def valences(self) -> np.ndarray:
        return np.array([s.valence for s in self.species])

    @property
    def diffusivities(self) -> np.ndarray:
        return np.array([s.diffusivity for s in self.species])

    def external_potentials(self) -> np.ndarray:
        """Per-cell W_i as an (M, n) array (zeros where unset)."""
        m = self.grid.n_cells
        w = np.zeros((m, self.n_species))
        for i, s in enumerate(self.species):
            if s.external_potential is not None:
                if s.external_potential.shape != (m,):
                    raise ConfigError(
                        f"external potential of {s.name!r} not sampled on the grid"
                    )
                w[:, i] = s.external_potential
        return w


# Placeholder physical values for the channel presets.  The published
# experiments take diffusivities, permittivity, and bath conditions from an
# external parameter table that is not reproduced here; these stand-ins are
# physically plausible (ion diffusivities in the ratio Ca:Na:Cl of bulk
# water, a Debye length a little below the channel length, 100 mM NaCl with
# a 2 mM CaCl2 trace, no applied voltage) and every run built from them is
# flagged ``provenance = "external-unverified"``.
PLACEHOLDER_CALCIUM = {
    "beta": 1.0,
    "lambda_sq": 0.02,
    "diffusivities": {"ca": 4.7, "na": 8.0, "cl": 12.2},
    "valences": {"ca": 2.0, "na": 1.0, "cl": -1.0},
    "bath_molar": {"ca": 2.0e-3, "na": 0.100, "cl": 0.104},
    "phi_volts": (0.0, 0.0),
    "concentration_scale": 61.5,
}


def _preset_species(diffs, vals) -> tuple[SpeciesSpec, ...]:
    return tuple(
        SpeciesSpec(name=k, diffusivity=diffs[k], valence=vals[k]) for k in diffs
    )


def build_scenario(preset: str, **overrides) -> ScenarioConfig:
    """Build a scenario preset, optionally overriding any config field.

    Presets: ``calcium`` (standard oxygen filter), ``degenerate`` (wide
    oxygen filter driving the solvent fraction toward zero), ``custom``
    (caller must supply params, species, boundary, and geometry pieces).
    Extra keyword overrides matching ScenarioConfig fields replace the
    preset values; ``n_cells`` and ``oxygen_variant`` are also accepted.
    """
    n_cells = overrides.pop("n_cells", 100)
    grid = Grid1D(n_cells)

    if preset in ("calcium", "degenerate"):
        p = PLACEHOLDER_CALCIUM
        variant = overrides.pop(
            "oxygen_variant", "standard" if preset == "calcium" else "degenerate"
        )
        species = _preset_species(p["diffusivities"], p["valences"])
        scale = p["concentration_scale"]
        bath = np.array([p["bath_molar"][s.name] / scale for s in species])
        boundary = BoundarySpec(
            mode=overrides.pop("boundary_mode", "dirichlet"),
            u_left=bath,
            u_right=bath,
            phi_left=p["phi_volts"][0],
            phi_right=p["phi_volts"][1],
        )
        base = ScenarioConfig(
            name=preset,
            params=PhysicalParams(p["beta"], p["lambda_sq"], len(species)),
            species=species,
            grid=grid,
            geometry=channel_geometry(grid, variant),
            boundary=boundary,
            concentration_scale=scale,
        )
    elif preset == "custom":
        missing = [k for k in ("params", "species", "boundary") if k not in overrides]
        if missing:
            raise ConfigError(f"custom scenario lacks {', '.join(missing)}")
        species = tuple(overrides.pop("species"))
        geometry = overrides.pop("geometry", None)
        if geometry is None:
            geometry = uniform_geometry(grid)
        base = ScenarioConfig(
            name=overrides.pop("name", "custom"),
            params=overrides.pop("params"),
            species=species,
            grid=grid,
            geometry=geometry,
            boundary=overrides.pop("boundary"),
        )
    else:
        raise ConfigError(f"unknown scenario preset {preset!r}")

    if overrides:
        unknown = set(overrides) - {f.name for f in base.__dataclass_fields__.values()}
        if unknown:
            raise ConfigError(f"unknown scenario overrides: {sorted(unknown)}")
        base = replace(base, **overrides)
    return base
