"""Algebraic core of the size-exclusion electrodiffusion model.

Concentrations are volume fractions living on the open simplex
``u_i > 0, sum(u_i) + u_immobile < 1``; the solvent fraction is the
remainder.  This module holds the state types, the entropy variables
(chemical potentials) and their explicit inversion, the discrete free
energy, the degeneracy identity relating gradient expressions, and the
entropy semimetric used to compare two solutions.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

SIMPLEX_TOL = 1e-12

# Largest double below 1 and smallest positive subnormal: used to keep
# inverted states strictly inside the open simplex at extreme entropy values.
_BELOW_ONE = np.nextafter(1.0, 0.0)
_TINY = np.nextafter(0.0, 1.0)


class InfeasibleStateError(ValueError):
    """Concentrations violate the simplex constraint."""


@dataclass(frozen=True)
class SpeciesSpec:
    """Physical constants of one mobile species.

    ``external_potential`` holds per-cell samples of the static potential
    W_i acting on this species; ``None`` means identically zero.
    """

    name: str
    diffusivity: float
    valence: float
    external_potential: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not self.diffusivity > 0.0:
            raise ValueError(f"diffusivity must be positive, got {self.diffusivity}")
        if self.external_potential is not None:
            w = np.asarray(self.external_potential, dtype=float)
            object.__setattr__(self, "external_potential", w)


@dataclass(frozen=True)
class PhysicalParams:
    """Scaled physical constants: inverse thermal voltage and permittivity."""

    beta: float
    lambda_sq: float
    n_species: int

    def __post_init__(self) -> None:
        if not self.beta > 0.0:
            raise ValueError("beta must be positive")
        if not self.lambda_sq > 0.0:
            raise ValueError("lambda_sq must be positive")
        if self.n_species < 1:
            raise ValueError("need at least one species")


@dataclass(frozen=True)
class SimplexPoint:
    """Concentration vector of one cell plus its immobile fraction.

    The solvent fraction is derived at construction.  ``solvent`` may be
    supplied explicitly when it is known to better precision than the
    subtraction ``1 - sum(u) - u_immobile`` provides (it must then agree
    with the derived value to within ``SIMPLEX_TOL``).
    """

    concentrations: np.ndarray
    immobile_fraction: float = 0.0
    solvent: float | None = None

    def __post_init__(self) -> None:
        u = np.atleast_1d(np.asarray(self.concentrations, dtype=float))
        object.__setattr__(self, "concentrations", u)
        total = float(u.sum()) + self.immobile_fraction
        derived = 1.0 - total
        if np.any(u < 0.0) or np.any(u > 1.0):
            raise InfeasibleStateError(f"concentrations outside [0, 1]: {u}")
        if not 0.0 <= self.immobile_fraction < 1.0:
            raise InfeasibleStateError(
                f"immobile fraction outside [0, 1): {self.immobile_fraction}"
            )
        if total > 1.0 + SIMPLEX_TOL:
            raise InfeasibleStateError(f"fractions sum to {total} > 1")
        if self.solvent is None:
            object.__setattr__(self, "solvent", max(derived, 0.0))
        else:
            if abs(self.solvent - derived) > SIMPLEX_TOL or self.solvent < 0.0:
                raise InfeasibleStateError(
                    f"supplied solvent fraction {self.solvent} inconsistent "
                    f"with derived value {derived}"
                )

    @property
    def n_species(self) -> int:
        return self.concentrations.shape[0]


@dataclass(frozen=True)
class EntropyPoint:
    """Entropy variables (chemical potentials) of one cell."""

    w: np.ndarray

    def __post_init__(self) -> None:
        w = np.atleast_1d(np.asarray(self.w, dtype=float))
        if not np.all(np.isfinite(w)):
            raise ValueError(f"entropy variables must be finite, got {w}")
        object.__setattr__(self, "w", w)


@dataclass(frozen=True)
class ReferenceState:
    """Per-cell reference profile: boundary data or a steady state.

    Used as the anchor of the free energy.  Must be strictly interior so
    the logarithms in the mixing terms are defined.
    """

    concentrations: np.ndarray  # (M, n)
    potential: np.ndarray  # (M,)
    solvent: np.ndarray | None = None  # (M,), derived without immobile part if None
    role: str = "dirichlet"  # "dirichlet" or "steady"

    def __post_init__(self) -> None:
        u = np.atleast_2d(np.asarray(self.concentrations, dtype=float))
        phi = np.atleast_1d(np.asarray(self.potential, dtype=float))
        if u.shape[0] != phi.shape[0]:
            raise ValueError("concentration and potential cell counts differ")
        s = self.solvent
        if s is None:
            s = 1.0 - u.sum(axis=1)
        s = np.asarray(s, dtype=float)
        object.__setattr__(self, "concentrations", u)
        object.__setattr__(self, "potential", phi)
        object.__setattr__(self, "solvent", s)

    def require_interior(self) -> None:
        if np.any(self.concentrations <= 0.0) or np.any(self.solvent <= 0.0):
            raise ValueError("reference state must be strictly interior")


def solvent_fraction(p: SimplexPoint) -> float:
    """Solvent volume fraction ``1 - sum(u) - u_immobile`` of a state."""
    return p.solvent


def _external_at(species: Sequence[SpeciesSpec], w_here) -> np.ndarray:
    n = len(species)
    if w_here is None:
        return np.zeros(n)
    w = np.atleast_1d(np.asarray(w_here, dtype=float))
    if w.shape != (n,):
        raise ValueError(f"expected {n} external potential values, got {w.shape}")
    return w


def entropy_variables(
    p: SimplexPoint,
    phi: float,
    params: PhysicalParams,
    species: Sequence[SpeciesSpec],
    w_here=None,
) -> EntropyPoint:
    """Chemical potentials ``w_i = log(u_i/u_0) + beta z_i phi + W_i``.

    Requires a strictly interior state (every ``u_i > 0`` and solvent > 0).
    """
    u = p.concentrations
    u0 = p.solvent
    if np.any(u <= 0.0) or u0 <= 0.0:
        raise ValueError("entropy variables need a strictly interior state")
    z = np.array([s.valence for s in species], dtype=float)
    w_ext = _external_at(species, w_here)
    w = np.log(u) - np.log(u0) + params.beta * z * phi + w_ext
    return EntropyPoint(w)


def invert_entropy_variables(
    w: EntropyPoint,
    phi: float,
    params: PhysicalParams,
    species: Sequence[SpeciesSpec],
    w_here=None,
) -> SimplexPoint:
    """Explicit inverse of ``entropy_variables`` onto the open simplex.

    ``u_i = exp(e_i) / (1 + sum_j exp(e_j))`` with
    ``e_i = w_i - beta z_i phi - W_i``.  The maximum exponent is shifted
    out before exponentiating, so any finite input maps without overflow.
    The immobile fraction is taken as zero: the inversion is only defined
    on the mobile sub-simplex.

    Outputs are nudged off the representable boundary (a concentration
    that would round to exactly 0 or 1 becomes the nearest interior
    double) and the solvent fraction is attached at full precision, so
    round-trips stay accurate even for ``|w|`` of several hundred.
    """
    z = np.array([s.valence for s in species], dtype=float)
    w_ext = _external_at(species, w_here)
    e = w.w - params.beta * z * phi - w_ext
    shift = max(0.0, float(e.max()))
    terms = np.exp(e - shift)
    solvent_term = np.exp(-shift)
    denom = solvent_term + terms.sum()
    u = terms / denom
    u0 = solvent_term / denom
    u = np.clip(u, _TINY, _BELOW_ONE)
    u0 = min(max(u0, _TINY), _BELOW_ONE)
    return SimplexPoint(u, 0.0, solvent=u0)


def mixing_energy(u, ref) -> np.ndarray:
    """Elementwise relative mixing entropy ``u log(u/c) - u + c``.

    Continuous extension ``0 log 0 = 0`` at ``u = 0``; convex in ``u``
    and zero exactly at ``u = c``.  ``ref`` entries must be positive.
    """
    u = np.asarray(u, dtype=float)
    c = np.asarray(ref, dtype=float)
    if np.any(c <= 0.0):
        raise ValueError("reference concentrations must be positive")
    out = np.where(u > 0.0, u * (np.log(np.where(u > 0.0, u, 1.0)) - np.log(c)), 0.0)
    return out - u + c


def free_energy(
    u,
    phi,
    ref: ReferenceState,
    cell_measures,
    params: PhysicalParams,
    species: Sequence[SpeciesSpec],
    *,
    immobile=None,
    edge_coeffs=None,
    psi_ghost=(0.0, 0.0),
    strict_ref: bool = True,
) -> float:
    """Discrete free energy of a grid state relative to a reference.

    Sums ``a_m h`` times the per-cell mixing entropy of all fractions
    including the solvent, plus the electrostatic energy
    ``(beta lambda^2 / 2) sum_e (a_e / g_e) (d_e(phi - phi_ref))^2`` over
    the flux edges of the grid, plus the external-potential energy.

    Args:
        u: concentrations, shape (M, n).
        phi: potential per cell, shape (M,), or None to skip the
            electrostatic term (valid when the state shares the
            reference potential).
        ref: reference profile (strictly interior unless strict_ref is
            False, in which case zero reference entries fall back to the
            0 log 0 convention and may produce +inf).
        cell_measures: per-cell measures ``a_m h``, shape (M,).
        immobile: per-cell immobile fraction, default zero.
        edge_coeffs: per-edge coefficients ``a_e / g_e`` of the gradient
            quadrature, shape (M+1,); required when phi is given.
        psi_ghost: values of ``phi - phi_ref`` at the two ghost cells
            (zero whenever state and reference share boundary data).
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    m_cells, n = u.shape
    meas = np.asarray(cell_measures, dtype=float)
    if meas.shape != (m_cells,):
        raise ValueError("cell_measures shape mismatch")
    if strict_ref:
        ref.require_interior()

    uo = np.zeros(m_cells) if immobile is None else np.asarray(immobile, dtype=float)
    u0 = 1.0 - u.sum(axis=1) - uo

    total = float(np.dot(meas, mixing_energy(u0, ref.solvent)))
    for i in range(n):
        total += float(np.dot(meas, mixing_energy(u[:, i], ref.concentrations[:, i])))
        w_i = species[i].external_potential
        if w_i is not None:
            total += float(np.dot(meas, u[:, i] * w_i))

    if phi is not None:
        if edge_coeffs is None:
            raise ValueError("edge_coeffs required for the electrostatic term")
        psi = np.asarray(phi, dtype=float) - ref.potential
        coeffs = np.asarray(edge_coeffs, dtype=float)
        dpsi = np.empty(m_cells + 1)
        dpsi[0] = psi[0] - psi_ghost[0]
        dpsi[1:-1] = np.diff(psi)
        dpsi[-1] = psi_ghost[1] - psi[-1]
        total += 0.5 * params.beta * params.lambda_sq * float(np.dot(coeffs, dpsi**2))
    return total


def degenerate_identity_sides(p: SimplexPoint, grad_u) -> tuple[float, float]:
    """Both sides of the gradient identity behind the degeneracy estimate.

    Left: ``sum_i u_i u_0 |grad log(u_i/u_0)|^2``.
    Right: ``4 u_0 sum_i |grad sqrt(u_i)|^2 + |grad u_0|^2 + 4 |grad sqrt(u_0)|^2``
    with ``grad u_0 = -sum_i grad u_i``.  Defined on the mobile simplex
    (zero immobile fraction, where the solvent gradient identity holds).
    """
    if p.immobile_fraction != 0.0:
        raise ValueError("identity is defined on the mobile sub-simplex only")
    u = p.concentrations
    u0 = p.solvent
    if np.any(u <= 0.0) or u0 <= 0.0:
        raise ValueError("identity requires a strictly interior state")
    g = np.atleast_1d(np.asarray(grad_u, dtype=float))
    if g.shape != u.shape:
        raise ValueError("one gradient component per species required")
    g0 = -g.sum()
    lhs = float(np.sum(u * u0 * (g / u - g0 / u0) ** 2))
    rhs = float(4.0 * u0 * np.sum(g**2 / (4.0 * u)) + g0**2 + 4.0 * g0**2 / (4.0 * u0))
    return lhs, rhs


def _h_eps(s: np.ndarray, eps: float) -> np.ndarray:
    # (s+eps)(log(s+eps) - 1) + 1 with the 0 log 0 = 0 convention.
    t = s + eps
    safe = np.where(t > 0.0, t, 1.0)
    return np.where(t > 0.0, t * (np.log(safe) - 1.0), 0.0) + 1.0


def gajewski_semimetric(u, v, eps: float = 0.0, weights=None) -> float:
    """Entropy semimetric between two per-cell concentration fields.

    ``d_eps(u, v) = sum_m weight_m sum_i [h(u_i) + h(v_i) - 2 h((u_i+v_i)/2)]``
    with ``h(s) = (s+eps)(log(s+eps) - 1) + 1``.  Nonnegative by convexity
    and bounded below by ``1/8`` of the weighted squared L2 distance for
    fractions in [0, 1].
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if u.shape != v.shape:
        raise ValueError(f"grid mismatch: {u.shape} vs {v.shape}")
    if eps < 0.0:
        raise ValueError("eps must be nonnegative")
    if eps == 0.0 and (np.any(u < 0.0) or np.any(v < 0.0)):
        raise ValueError("eps = 0 requires nonnegative entries")
    if weights is None:
        w = np.ones(u.shape[0])
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (u.shape[0],):
            raise ValueError("one weight per cell required")
    cellwise = _h_eps(u, eps) + _h_eps(v, eps) - 2.0 * _h_eps(0.5 * (u + v), eps)
    return float(np.dot(w, cellwise.sum(axis=1)))
