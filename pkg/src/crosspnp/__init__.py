"""Finite-volume simulator for cross-diffusion ion transport with size exclusion."""

__version__ = "0.1.0"

from .model import (
    EntropyPoint,
    InfeasibleStateError,
    PhysicalParams,
    ReferenceState,
    SimplexPoint,
    SpeciesSpec,
    degenerate_identity_sides,
    entropy_variables,
    free_energy,
    gajewski_semimetric,
    invert_entropy_variables,
    solvent_fraction,
)
from .geometry import (
    BoundarySpec,
    ChannelGeometry,
    ConfigError,
    Grid1D,
    ScenarioConfig,
    area_at,
    build_scenario,
    channel_geometry,
    oxygen_profile,
    permanent_charge,
    radius_at,
    uniform_geometry,
)
from .discretization import (
    SparseSystem,
    StateLayout,
    assemble_jacobian,
    assemble_residual,
    edge_fluxes,
    log_mean,
    poisson_residual,
    species_flux,
    species_residual,
)
from .solver import (
    LinearSolveError,
    NewtonError,
    NewtonSettings,
    RunResult,
    StepReport,
    TimeLoopSettings,
    dirichlet_reference,
    initial_state,
    linear_solve,
    newton_solve,
    run,
    self_convergence,
    solve_poisson,
    steady_reference,
    step_error,
)

__all__ = [name for name in dir() if not name.startswith("_")]
