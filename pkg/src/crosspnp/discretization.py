"""Finite-volume discretization: edge fluxes, residual, analytic Jacobian.

The unknown vector stacks, cell by cell, the n species concentrations
followed by the cell potential.  Fluxes use logarithmic-mean edge
concentrations, which makes the discrete flux exactly proportional to
the jump of the entropy variables across the edge.  Boundary conditions
enter through ghost values; two closures are available for the ghost
distance (see ``edge_divisors``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ScenarioConfig


@dataclass(frozen=True)
class StateLayout:
    """Indexing of the flat unknown vector (cell-major, potential last)."""

    n_cells: int
    n_species: int

    @property
    def block(self) -> int:
        return self.n_species + 1

    @property
    def size(self) -> int:
        return self.n_cells * self.block

    def concentrations(self, state: np.ndarray) -> np.ndarray:
        """View of shape (M, n) onto the species entries."""
        return state.reshape(self.n_cells, self.block)[:, : self.n_species]

    def potential(self, state: np.ndarray) -> np.ndarray:
        """View of shape (M,) onto the potential entries."""
        return state.reshape(self.n_cells, self.block)[:, self.n_species]

    def pack(self, conc: np.ndarray, phi: np.ndarray) -> np.ndarray:
        state = np.empty(self.size)
        self.concentrations(state)[:] = conc
        self.potential(state)[:] = phi
        return state


def layout_of(scenario: ScenarioConfig) -> StateLayout:
    return StateLayout(scenario.grid.n_cells, scenario.n_species)


@dataclass
class SparseSystem:
    """Block-tridiagonal linear system with one block per cell.

    ``lower[k]`` couples block-row k+1 to block-row k; ``upper[k]``
    couples block-row k to block-row k+1.
    """

    diag: np.ndarray  # (M, B, B)
    lower: np.ndarray  # (M-1, B, B)
    upper: np.ndarray  # (M-1, B, B)
    rhs: np.ndarray  # (M*B,)

    @property
    def n_blocks(self) -> int:
        return self.diag.shape[0]

    @property
    def block(self) -> int:
        return self.diag.shape[1]

    def to_banded(self) -> tuple[np.ndarray, int]:
        """LAPACK band storage ``ab[bw + i - j, j] = A[i, j]`` and bandwidth."""
        m, b = self.n_blocks, self.block
        n = m * b
        bw = 2 * b - 1
        ab = np.zeros((2 * bw + 1, n))
        ii, jj = np.indices((b, b))
        for k in range(m):
            r0 = k * b
            ab[bw + ii - jj, r0 + jj] = self.diag[k]
            if k + 1 < m:
                # lower block: rows r0+b.., cols r0..
                ab[bw + (ii + b) - jj, r0 + jj] = self.lower[k]
                # upper block: rows r0.., cols r0+b..
                ab[bw + ii - (jj + b), r0 + b + jj] = self.upper[k]
        return ab, bw


def log_mean(a, b):
    """Logarithmic mean ``(b - a) / (log b - log a)`` of nonnegative values.

    Equal positive arguments return their common value; if either
    argument is zero the mean is zero.  Raises on negative input.  The
    result always lies between min(a, b) and the arithmetic mean.
    """
    a_arr = np.asarray(a, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    if np.any(a_arr < 0.0) or np.any(b_arr < 0.0):
        raise ValueError("logarithmic mean needs nonnegative arguments")
    out = _log_mean_extended(a_arr, b_arr)
    return float(out) if out.ndim == 0 else out


def _log_mean_extended(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """log_mean extended by 0 to all nonpositive arguments (no validation).

    Newton iterates may wander slightly negative; the zero branch keeps
    the residual total there instead of clipping the state.
    """
    pos = (a > 0.0) & (b > 0.0)
    s = np.where(pos, a + b, 1.0)
    d = np.where(pos, (b - a) / s, 0.0)
    near = np.abs(d) < 1e-6
    # Series in d = (b-a)/(a+b) about equal arguments avoids the 0/0
    # cancellation: Lambda = mu (1 - d^2/3 - 4 d^4/45 + O(d^6)).
    mu = 0.5 * s
    series = mu * (1.0 - d * d * (1.0 / 3.0 + d * d * (4.0 / 45.0)))
    with np.errstate(divide="ignore", invalid="ignore"):
        la = np.log(np.where(a > 0.0, a, 1.0))
        lb = np.log(np.where(b > 0.0, b, 1.0))
        direct = np.where(pos & ~near, (b - a) / np.where(lb != la, lb - la, 1.0), 1.0)
    return np.where(pos, np.where(near, series, direct), 0.0)


def _log_mean_partials(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(d Lambda/da, d Lambda/db) matching ``_log_mean_extended``.

    Closed form ``dLambda/da = Lambda/(b-a) (Lambda/a - 1)`` away from the
    diagonal; series ``1/2 + d/3 + d^2/6 + 8 d^3/45`` near it; zero on the
    zero branch.
    """
    pos = (a > 0.0) & (b > 0.0)
    s = np.where(pos, a + b, 1.0)
    d = np.where(pos, (b - a) / s, 0.0)
    near = np.abs(d) < 1e-6
    lam = _log_mean_extended(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        diff = np.where(pos & ~near, b - a, 1.0)
        da_direct = lam / diff * (lam / np.where(a > 0.0, a, 1.0) - 1.0)
        db_direct = lam / (-diff) * (lam / np.where(b > 0.0, b, 1.0) - 1.0)
    da_series = 0.5 + d * (1.0 / 3.0 + d * (1.0 / 6.0 + d * (8.0 / 45.0)))
    db_series = 0.5 - d * (1.0 / 3.0 - d * (1.0 / 6.0 - d * (8.0 / 45.0)))
    da = np.where(pos, np.where(near, da_series, da_direct), 0.0)
    db = np.where(pos, np.where(near, db_series, db_direct), 0.0)
    return da, db


def edge_divisors(scenario: ScenarioConfig) -> np.ndarray:
    """Gradient divisor per edge: h inside; h or h/2 at the ends.

    The full-cell closure places Dirichlet ghosts a whole cell away, the
    literal form of the reference stencil; the half-cell closure puts
    them at the physical boundary (half a cell from the first center),
    restoring second-order accuracy of the Poisson solve.
    """
    grid = scenario.grid
    g = np.full(grid.n_cells + 1, grid.h)
    if scenario.boundary_closure == "half-cell":
        g[0] = 0.5 * grid.h
        g[-1] = 0.5 * grid.h
    return g


def _extended_fields(scenario: ScenarioConfig, conc: np.ndarray, phi: np.ndarray):
    """Cell fields extended by the Dirichlet ghost values at both ends.

    Returns (u_ext (M+2, n), u0_ext (M+2,), phi_ext (M+2,), w_ext (M+2, n)).
    Ghost cells carry the boundary data with zero immobile fraction and
    zero external potential (the external potential vanishes on the
    Dirichlet boundary by assumption).
    """
    b = scenario.boundary
    u_ext = np.vstack([b.u_left, conc, b.u_right])
    oxy = np.concatenate([[0.0], scenario.geometry.oxygen, [0.0]])
    u0_ext = 1.0 - u_ext.sum(axis=1) - oxy
    phi_ext = np.concatenate([[b.phi_left], phi, [b.phi_right]])
    w_pot = scenario.external_potentials()
    w_ext = np.vstack([np.zeros(scenario.n_species), w_pot, np.zeros(scenario.n_species)])
    return u_ext, u0_ext, phi_ext, w_ext


def solvent_profile(scenario: ScenarioConfig, conc: np.ndarray) -> np.ndarray:
    """Per-cell solvent fraction 1 - sum(u) - u_O."""
    return 1.0 - conc.sum(axis=1) - scenario.geometry.oxygen


def edge_fluxes(state: np.ndarray, scenario: ScenarioConfig) -> np.ndarray:
    """Species fluxes at every edge, shape (M+1, n).

    Edge j sits between cells j-1 and j (ghosts at the ends).  The area
    factor is applied at residual assembly, not here.  In no-flux mode
    the two boundary rows are zero.
    """
    layout = layout_of(scenario)
    conc = layout.concentrations(state)
    phi = layout.potential(state)
    u_ext, u0_ext, phi_ext, w_ext = _extended_fields(scenario, conc, phi)
    g = edge_divisors(scenario)

    u_l, u_r = u_ext[:-1], u_ext[1:]
    lam_u = _log_mean_extended(u_l, u_r)
    lam_0 = _log_mean_extended(u0_ext[:-1], u0_ext[1:])[:, None]
    du = u_r - u_l
    du0 = (u0_ext[1:] - u0_ext[:-1])[:, None]
    drift = scenario.params.beta * scenario.valences[None, :] * np.diff(phi_ext)[:, None]
    drift = drift + (w_ext[1:] - w_ext[:-1])
    flux = (scenario.diffusivities[None, :] / g[:, None]) * (
        lam_0 * du - lam_u * du0 + lam_u * lam_0 * drift
    )
    if scenario.boundary.mode == "no-flux":
        flux[0, :] = 0.0
        flux[-1, :] = 0.0
    return flux


def species_flux(i: int, m_edge: int, state: np.ndarray, scenario: ScenarioConfig) -> float:
    """Flux of species i at one edge (0 and M are the boundary edges)."""
    return float(edge_fluxes(state, scenario)[m_edge, i])


def _poisson_weights(scenario: ScenarioConfig):
    """(edge weight, cell weight) of the Poisson rows.

    Area-weighted by default, consistent with the reduced divergence
    form; the unweighted variant reproduces the flat reference stencil
    for comparison.
    """
    if scenario.poisson_area_weighting:
        return scenario.geometry.edge_area, scenario.geometry.cell_area
    m = scenario.grid.n_cells
    return np.ones(m + 1), np.ones(m)


def poisson_rows(state: np.ndarray, scenario: ScenarioConfig) -> np.ndarray:
    """Residual of the discrete Poisson equation in every cell."""
    layout = layout_of(scenario)
    conc = layout.concentrations(state)
    phi = layout.potential(state)
    b = scenario.boundary
    phi_ext = np.concatenate([[b.phi_left], phi, [b.phi_right]])
    g = edge_divisors(scenario)
    w_edge, w_cell = _poisson_weights(scenario)
    lam_sq = scenario.params.lambda_sq
    h = scenario.grid.h

    dphi = np.diff(phi_ext) / g
    charge = conc @ scenario.valences + scenario.geometry.charge
    return -lam_sq * (w_edge[1:] * dphi[1:] - w_edge[:-1] * dphi[:-1]) - h * w_cell * charge


def poisson_residual(m: int, state: np.ndarray, scenario: ScenarioConfig) -> float:
    """Poisson residual of cell m."""
    return float(poisson_rows(state, scenario)[m])


def species_rows(
    state: np.ndarray, state_prev: np.ndarray, dt: float, scenario: ScenarioConfig
) -> np.ndarray:
    """Residual of the species balance in every cell, shape (M, n)."""
    layout = layout_of(scenario)
    conc = layout.concentrations(state)
    conc_prev = layout.concentrations(state_prev)
    h = scenario.grid.h
    a_cell = scenario.geometry.cell_area
    a_edge = scenario.geometry.edge_area
    flux = edge_fluxes(state, scenario)
    weighted = a_edge[:, None] * flux
    return (a_cell * h)[:, None] * (conc - conc_prev) / dt - (weighted[1:] - weighted[:-1])


def species_residual(
    i: int,
    m: int,
    state: np.ndarray,
    state_prev: np.ndarray,
    dt: float,
    scenario: ScenarioConfig,
) -> float:
    """Balance residual of species i in cell m."""
    return float(species_rows(state, state_prev, dt, scenario)[m, i])


def assemble_residual(
    state: np.ndarray, state_prev: np.ndarray, dt: float, scenario: ScenarioConfig
) -> np.ndarray:
    """Full nonlinear residual in the unknown-vector ordering."""
    layout = layout_of(scenario)
    if state.shape != (layout.size,) or state_prev.shape != (layout.size,):
        raise ValueError(
            f"expected state vectors of length {layout.size}, "
            f"got {state.shape} and {state_prev.shape}"
        )
    out = np.empty(layout.size)
    res = out.reshape(layout.n_cells, layout.block)
    res[:, : layout.n_species] = species_rows(state, state_prev, dt, scenario)
    res[:, layout.n_species] = poisson_rows(state, scenario)
    return out


def assemble_jacobian(
    state: np.ndarray, state_prev: np.ndarray, dt: float, scenario: ScenarioConfig
) -> SparseSystem:
    """Analytic Jacobian of ``assemble_residual`` with rhs = -residual."""
    layout = layout_of(scenario)
    m_cells, n = layout.n_cells, layout.n_species
    blk = layout.block
    conc = layout.concentrations(state)
    phi = layout.potential(state)
    u_ext, u0_ext, phi_ext, w_ext = _extended_fields(scenario, conc, phi)
    g = edge_divisors(scenario)
    beta = scenario.params.beta
    z = scenario.valences
    dvec = scenario.diffusivities
    h = scenario.grid.h
    a_cell = scenario.geometry.cell_area
    a_edge = scenario.geometry.edge_area

    u_l, u_r = u_ext[:-1], u_ext[1:]
    u0_l, u0_r = u0_ext[:-1], u0_ext[1:]
    lam_u = _log_mean_extended(u_l, u_r)  # (M+1, n)
    lam_0 = _log_mean_extended(u0_l, u0_r)[:, None]  # (M+1, 1)
    dlu_l, dlu_r = _log_mean_partials(u_l, u_r)
    dl0_l, dl0_r = _log_mean_partials(u0_l, u0_r)
    dl0_l, dl0_r = dl0_l[:, None], dl0_r[:, None]
    du = u_r - u_l
    du0 = (u0_r - u0_l)[:, None]
    drift = beta * z[None, :] * np.diff(phi_ext)[:, None] + (w_ext[1:] - w_ext[:-1])
    scale = (dvec[None, :] / g[:, None])  # (M+1, n)

    # dJ_i/du_{j,left}: the solvent mean couples every species pair through
    # d u0 / d u_j = -1; species-diagonal terms add the own-mean partials.
    common_l = scale * (-dl0_l * (du + lam_u * drift) - lam_u)  # (M+1, n)
    common_r = scale * (-dl0_r * (du + lam_u * drift) + lam_u)
    diag_l = scale * (-lam_0 - dlu_l * du0 + dlu_l * lam_0 * drift)
    diag_r = scale * (lam_0 - dlu_r * du0 + dlu_r * lam_0 * drift)
    dj_duL = np.repeat(common_l[:, :, None], n, axis=2)
    dj_duR = np.repeat(common_r[:, :, None], n, axis=2)
    idx = np.arange(n)
    dj_duL[:, idx, idx] += diag_l
    dj_duR[:, idx, idx] += diag_r
    dj_dphi = scale * lam_u * lam_0 * beta * z[None, :]  # d/dphi_R; d/dphi_L is its negative

    if scenario.boundary.mode == "no-flux":
        for arr in (dj_duL, dj_duR, dj_dphi):
            arr[0] = 0.0
            arr[-1] = 0.0

    diag = np.zeros((m_cells, blk, blk))
    lower = np.zeros((m_cells - 1, blk, blk))
    upper = np.zeros((m_cells - 1, blk, blk))

    ae_l = a_edge[:-1]  # left edge of each cell
    ae_r = a_edge[1:]
    # Species rows: R_m = a_m h (u_m - u_prev)/dt - (ae_r J_r - ae_l J_l).
    diag[:, :n, :n] = -ae_r[:, None, None] * dj_duL[1:] + ae_l[:, None, None] * dj_duR[:-1]
    diag[:, idx, idx] += (a_cell * h / dt)[:, None]
    diag[:, :n, n] = -ae_r[:, None] * (-dj_dphi[1:]) + ae_l[:, None] * dj_dphi[:-1]
    upper[:, :n, :n] = -ae_r[:-1, None, None] * dj_duR[1:-1]
    upper[:, :n, n] = -ae_r[:-1, None] * dj_dphi[1:-1]
    lower[:, :n, :n] = ae_l[1:, None, None] * dj_duL[1:-1]
    lower[:, :n, n] = ae_l[1:, None] * (-dj_dphi[1:-1])

    # Poisson rows: linear, state-independent coefficients.
    w_edge, w_cell = _poisson_weights(scenario)
    lam_sq = scenario.params.lambda_sq
    ke = lam_sq * w_edge / g
    diag[:, n, :n] = -(h * w_cell)[:, None] * z[None, :]
    diag[:, n, n] = ke[1:] + ke[:-1]
    upper[:, n, n] = -ke[1:-1]
    lower[:, n, n] = -ke[1:-1]

    rhs = -assemble_residual(state, state_prev, dt, scenario)
    return SparseSystem(diag=diag, lower=lower, upper=upper, rhs=rhs)
