"""Damped Newton solver and the implicit-Euler time loop.

One time step solves the coupled nonlinear system for all species
concentrations and the potential simultaneously.  Newton steps are
globalized by Armijo backtracking on the squared residual norm plus a
feasibility guard that rejects iterates leaving the closed simplex by
more than a hair.  The time loop marches with a fixed step, optionally
halving it on Newton failure, and stops when consecutive states agree
to the steady-state tolerance.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from . import discretization as disc
from .geometry import ScenarioConfig
from .model import InfeasibleStateError, ReferenceState, free_energy


class NewtonError(RuntimeError):
    """Newton iteration failed to converge."""


class LinearSolveError(RuntimeError):
    """Linear system could not be solved reliably."""


@dataclass(frozen=True)
class NewtonSettings:
    residual_tolerance: float = 1e-12  # infinity norm of the residual
    max_iterations: int = 50
    damping_factor: float = 0.5
    min_step: float = 2.0**-20
    armijo_slope: float = 1e-4
    feasibility_guard: bool = True
    feasibility_slack: float = 1e-12

    def __post_init__(self) -> None:
        if self.residual_tolerance <= 0.0 or self.max_iterations < 1:
            raise ValueError("invalid Newton settings")


@dataclass(frozen=True)
class TimeLoopSettings:
    dt: float = 1e-3
    max_steps: int = 50_000
    steady_tolerance: float = 1e-13
    halve_dt_on_failure: bool = True
    dt_floor_factor: float = 1024.0  # floor is dt / this
    restore_after: int = 10  # accepted steps before dt is restored
    state_cadence: int = 1  # store a state snapshot every this many steps

    def __post_init__(self) -> None:
        if self.dt <= 0.0 or self.steady_tolerance <= 0.0:
            raise ValueError("invalid time-loop settings")


@dataclass(frozen=True)
class StepReport:
    """Per-step record emitted by the time loop."""

    step: int
    time: float
    dt: float
    newton_iterations: int
    err: float
    free_energy: float
    relative_entropy: float  # nan unless a steady reference was supplied
    l1_errors: tuple  # per species then potential; nan without reference
    masses: tuple  # area-weighted per-species totals
    min_solvent: float  # minimum solvent fraction in the channel window
    wall_time: float


@dataclass
class RunResult:
    scenario: ScenarioConfig
    reports: list[StepReport]
    final_state: np.ndarray
    termination: str  # "steady" | "max-steps"
    snapshots: list[tuple[int, np.ndarray]]  # (step, state) at the cadence
    snapshot_times: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        times = {r.step: r.time for r in self.reports}
        times[0] = 0.0
        self.snapshot_times = np.array([times[k] for k, _ in self.snapshots])

    @property
    def layout(self) -> disc.StateLayout:
        return disc.layout_of(self.scenario)


def linear_solve(system: disc.SparseSystem) -> np.ndarray:
    """Solve the block-tridiagonal system by banded LU with pivoting."""
    ab, bw = system.to_banded()
    try:
        x = solve_banded((bw, bw), ab, system.rhs)
    except np.linalg.LinAlgError as exc:
        raise LinearSolveError(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise LinearSolveError("non-finite solution")
    resid = system_matvec(system, x) - system.rhs
    scale = np.abs(system.diag).max() * np.abs(x).max() + np.abs(system.rhs).max()
    if np.abs(resid).max() > 1e-10 * (scale + 1.0):
        raise LinearSolveError("linear system is numerically singular")
    return x


def system_matvec(system: disc.SparseSystem, x: np.ndarray) -> np.ndarray:
    """A @ x for a block-tridiagonal system (used to verify solves)."""
    m, b = system.n_blocks, system.block
    xb = x.reshape(m, b)
    out = np.einsum("mij,mj->mi", system.diag, xb)
    out[1:] += np.einsum("mij,mj->mi", system.lower, xb[:-1])
    out[:-1] += np.einsum("mij,mj->mi", system.upper, xb[1:])
    return out.reshape(m * b)


def solve_poisson(conc: np.ndarray, scenario: ScenarioConfig) -> np.ndarray:
    """Potential solving the discrete Poisson system for given concentrations."""
    charge = conc @ scenario.valences + scenario.geometry.charge
    return solve_poisson_charge(charge, scenario)


def solve_poisson_charge(charge: np.ndarray, scenario: ScenarioConfig) -> np.ndarray:
    """Potential for an explicit charge-density profile (tridiagonal solve)."""
    g = disc.edge_divisors(scenario)
    w_edge, w_cell = disc._poisson_weights(scenario)
    ke = scenario.params.lambda_sq * w_edge / g
    m = scenario.grid.n_cells
    ab = np.zeros((3, m))
    ab[0, 1:] = -ke[1:-1]
    ab[1, :] = ke[:-1] + ke[1:]
    ab[2, :-1] = -ke[1:-1]
    rhs = scenario.grid.h * w_cell * np.asarray(charge, dtype=float)
    rhs[0] += ke[0] * scenario.boundary.phi_left
    rhs[-1] += ke[-1] * scenario.boundary.phi_right
    try:
        return solve_banded((1, 1), ab, rhs)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - SPD in practice
        raise LinearSolveError(str(exc)) from exc


def initial_state(scenario: ScenarioConfig) -> np.ndarray:
    """Linear concentration profiles plus the consistent Poisson potential."""
    grid = scenario.grid
    b = scenario.boundary
    x = grid.centers[:, None]
    conc = (1.0 - x) * b.u_left[None, :] + x * b.u_right[None, :]
    solvent = disc.solvent_profile(scenario, conc)
    if np.any(solvent <= 0.0):
        raise InfeasibleStateError(
            "linear initial interpolant leaves no solvent against the "
            "immobile-species profile"
        )
    phi = solve_poisson(conc, scenario)
    return disc.layout_of(scenario).pack(conc, phi)


def _feasible(state: np.ndarray, scenario: ScenarioConfig, slack: float) -> bool:
    layout = disc.layout_of(scenario)
    conc = layout.concentrations(state)
    if np.any(conc < -slack):
        return False
    return not np.any(disc.solvent_profile(scenario, conc) < -slack)


def newton_solve(
    guess: np.ndarray,
    state_prev: np.ndarray,
    dt: float,
    scenario: ScenarioConfig,
    settings: NewtonSettings | None = None,
    trace: list | None = None,
) -> tuple[np.ndarray, int]:
    """Solve the coupled implicit step; returns the root and iteration count.

    ``trace``, if given, collects the residual infinity norm after each
    accepted iterate (with the initial guess first).
    """
    s = settings or NewtonSettings()
    state = np.array(guess, dtype=float)
    residual = disc.assemble_residual(state, state_prev, dt, scenario)
    norm = float(np.abs(residual).max())
    if trace is not None:
        trace.append(norm)
    if norm <= s.residual_tolerance:
        return state, 0

    sq = float(residual @ residual)
    for iteration in range(1, s.max_iterations + 1):
        system = disc.assemble_jacobian(state, state_prev, dt, scenario)
        delta = linear_solve(system)
        step = 1.0
        while True:
            candidate = state + step * delta
            ok = True
            if s.feasibility_guard and not _feasible(candidate, scenario, s.feasibility_slack):
                ok = False
            if ok:
                trial = disc.assemble_residual(candidate, state_prev, dt, scenario)
                trial_sq = float(trial @ trial)
                if np.isfinite(trial_sq) and trial_sq <= (1.0 - s.armijo_slope * step) * sq:
                    break
            step *= s.damping_factor
            if step < s.min_step:
                raise NewtonError(
                    f"damping floor reached at iteration {iteration} "
                    f"(residual {norm:.3e})"
                )
        state, residual, sq = candidate, trial, trial_sq
        norm = float(np.abs(residual).max())
        if trace is not None:
            trace.append(norm)
        if norm <= s.residual_tolerance:
            return state, iteration
    raise NewtonError(f"no convergence within {s.max_iterations} iterations "
                      f"(residual {norm:.3e})")


def step_error(state: np.ndarray, state_prev: np.ndarray, layout: disc.StateLayout,
               h: float) -> float:
    """Steady-state detector: summed L2 distances between consecutive steps.

    ``sum_i sqrt(sum_m h (u_i - u_i_prev)^2) + sqrt(sum_m h (phi - phi_prev)^2)``,
    unweighted by the cross-section, following the reference formula.
    """
    if state.shape != state_prev.shape:
        raise ValueError("state shapes differ")
    du = layout.concentrations(state) - layout.concentrations(state_prev)
    dphi = layout.potential(state) - layout.potential(state_prev)
    return float(np.sqrt(h * (du**2).sum(axis=0)).sum() + np.sqrt(h * (dphi**2).sum()))


def dirichlet_reference(scenario: ScenarioConfig) -> ReferenceState:
    """Boundary data extended into the domain as the free-energy anchor.

    Concentrations interpolate linearly; the reference solvent fraction
    is one minus their sum (no immobile part); the reference potential
    solves the Poisson system with the permanent charge alone.
    """
    x = scenario.grid.centers[:, None]
    b = scenario.boundary
    conc = (1.0 - x) * b.u_left[None, :] + x * b.u_right[None, :]
    phi = solve_poisson_charge(scenario.geometry.charge, scenario)
    return ReferenceState(conc, phi, role="dirichlet")


def steady_reference(result: "RunResult") -> ReferenceState:
    """Final state of a converged run, packaged for relative entropies."""
    layout = result.layout
    conc = layout.concentrations(result.final_state).copy()
    solvent = disc.solvent_profile(result.scenario, conc)
    return ReferenceState(conc, layout.potential(result.final_state).copy(),
                          solvent=solvent, role="steady")


def energy_edge_coeffs(scenario: ScenarioConfig) -> np.ndarray:
    """Edge coefficients a_e / g_e of the electrostatic energy quadrature."""
    return scenario.geometry.edge_area / disc.edge_divisors(scenario)


def free_energy_of_state(
    state: np.ndarray, scenario: ScenarioConfig, ref: ReferenceState,
    strict_ref: bool = True,
) -> float:
    """Discrete free energy of a packed state against a reference profile."""
    layout = disc.layout_of(scenario)
    return free_energy(
        layout.concentrations(state),
        layout.potential(state),
        ref,
        scenario.geometry.cell_area * scenario.grid.h,
        scenario.params,
        scenario.species,
        immobile=scenario.geometry.oxygen,
        edge_coeffs=energy_edge_coeffs(scenario),
        strict_ref=strict_ref,
    )


def _l1_errors(state, ref: ReferenceState, scenario, layout) -> tuple:
    h = scenario.grid.h
    if scenario.area_weighted_norms:
        w = scenario.geometry.cell_area * h
    else:
        w = np.full(scenario.grid.n_cells, h)
    du = np.abs(layout.concentrations(state) - ref.concentrations)
    dphi = np.abs(layout.potential(state) - ref.potential)
    return tuple((w[:, None] * du).sum(axis=0)) + (float((w * dphi).sum()),)


def run(
    scenario: ScenarioConfig,
    time_settings: TimeLoopSettings | None = None,
    newton_settings: NewtonSettings | None = None,
    *,
    initial: np.ndarray | None = None,
    reference: ReferenceState | None = None,
    callback=None,
) -> RunResult:
    """March the implicit-Euler scheme until steady, exhausted, or failed.

    ``reference``, when given, is used for the relative-entropy and L1
    columns of the reports (typically a steady state from an earlier
    run); the free-energy column always uses the Dirichlet reference.
    ``callback`` receives each StepReport after the step is accepted.
    """
    ts = time_settings or TimeLoopSettings(
        dt=scenario.dt,
        max_steps=scenario.max_steps,
        steady_tolerance=scenario.steady_tolerance,
    )
    ns = newton_settings or NewtonSettings(
        residual_tolerance=scenario.newton_tolerance,
        max_iterations=scenario.newton_max_iterations,
    )
    layout = disc.layout_of(scenario)
    grid = scenario.grid
    state = initial_state(scenario) if initial is None else np.array(initial, float)
    anchor = dirichlet_reference(scenario)
    in_channel = (grid.centers >= scenario.channel_window[0]) & (
        grid.centers <= scenario.channel_window[1]
    )
    if not in_channel.any():
        in_channel = np.ones(grid.n_cells, dtype=bool)
    cell_meas = scenario.geometry.cell_area * grid.h

    reports: list[StepReport] = []
    snapshots: list[tuple[int, np.ndarray]] = [(0, state.copy())]
    dt_full = ts.dt
    dt = dt_full
    accepted_since_cut = 0
    t = 0.0
    termination = "max-steps"

    for step in range(1, ts.max_steps + 1):
        started = time.perf_counter()
        while True:
            try:
                new_state, iterations = newton_solve(state, state, dt, scenario, ns)
                break
            except NewtonError as exc:
                if not ts.halve_dt_on_failure or dt <= dt_full / ts.dt_floor_factor:
                    raise NewtonError(
                        f"step {step} of scenario {scenario.name!r} failed at "
                        f"dt={dt:.3e} (floor {dt_full / ts.dt_floor_factor:.3e}): {exc}"
                    ) from exc
                dt *= 0.5
                accepted_since_cut = 0
        t += dt
        err = step_error(new_state, state, layout, grid.h)
        state = new_state
        if dt < dt_full:
            accepted_since_cut += 1
            if accepted_since_cut >= ts.restore_after:
                dt = dt_full
                accepted_since_cut = 0

        conc = layout.concentrations(state)
        solvent = disc.solvent_profile(scenario, conc)
        if reference is not None:
            rel_entropy = free_energy_of_state(state, scenario, reference, strict_ref=False)
            l1 = _l1_errors(state, reference, scenario, layout)
        else:
            rel_entropy = float("nan")
            l1 = tuple([float("nan")] * (layout.n_species + 1))
        report = StepReport(
            step=step,
            time=t,
            dt=dt,
            newton_iterations=iterations,
            err=err,
            free_energy=free_energy_of_state(state, scenario, anchor),
            relative_entropy=rel_entropy,
            l1_errors=l1,
            masses=tuple(cell_meas @ conc),
            min_solvent=float(solvent[in_channel].min()),
            wall_time=time.perf_counter() - started,
        )
        reports.append(report)
        if callback is not None:
            callback(report)
        if step % ts.state_cadence == 0:
            snapshots.append((step, state.copy()))
        if err < ts.steady_tolerance:
            termination = "steady"
            break

    if reports and snapshots[-1][0] != reports[-1].step:
        snapshots.append((reports[-1].step, state.copy()))
    return RunResult(
        scenario=scenario,
        reports=reports,
        final_state=state,
        termination=termination,
        snapshots=snapshots,
    )


def self_convergence(
    scenario: ScenarioConfig,
    dt_list,
    final_time: float,
    newton_settings: NewtonSettings | None = None,
) -> float:
    """Observed temporal order from runs of the same scenario at several dt.

    Marches to the same final time with each step size (which must divide
    it to a whole number of steps) and compares successive solutions in
    the grid L2 norm; returns the observed order from the last pair of
    error ratios.  Needs at least three step sizes.
    """
    dts = list(dt_list)
    if len(dts) < 3:
        raise ValueError("need at least three step sizes")
    finals = []
    for dt in dts:
        steps = round(final_time / dt)
        if abs(steps * dt - final_time) > 1e-12 * final_time:
            raise ValueError(f"dt {dt} does not divide the final time")
        settings = TimeLoopSettings(
            dt=dt, max_steps=steps, steady_tolerance=1e-300, halve_dt_on_failure=False
        )
        finals.append(run(scenario, settings, newton_settings).final_state)
    h = scenario.grid.h
    errors = [
        float(np.sqrt(h * ((a - b) ** 2).sum()))
        for a, b in zip(finals[:-1], finals[1:])
    ]
    orders = [
        np.log(e1 / e2) / np.log(r1 / r2)
        for e1, e2, r1, r2 in zip(errors[:-1], errors[1:], dts[:-1], dts[1:])
    ]
    return float(orders[-1])
