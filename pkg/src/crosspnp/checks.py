"""Self-contained property suite behind the ``check`` CLI subcommand.

Each check prints one pass/fail line; the suite returns the number of
failures.  These mirror the invariants the test suite pins down, in a
form that runs against an installed build without pytest.
"""
from __future__ import annotations

import numpy as np

from . import discretization as disc
from . import solver as sv
from .geometry import (
    BoundarySpec,
    Grid1D,
    ScenarioConfig,
    build_scenario,
    uniform_geometry,
)
from .model import (
    EntropyPoint,
    PhysicalParams,
    SimplexPoint,
    SpeciesSpec,
    degenerate_identity_sides,
    entropy_variables,
    gajewski_semimetric,
    invert_entropy_variables,
)


def _random_simplex(rng, n):
    raw = rng.uniform(0.05, 1.0, n + 1)
    fractions = raw / raw.sum() * rng.uniform(0.3, 0.95)
    return SimplexPoint(fractions[:n])


def check_identity(rng) -> bool:
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 4))
        p = _random_simplex(rng, n)
        grad = rng.normal(0.0, 2.0, n)
        lhs, rhs = degenerate_identity_sides(p, grad)
        worst = max(worst, abs(lhs - rhs) / (1.0 + abs(lhs)))
    return worst <= 1e-12


def check_roundtrip(rng) -> bool:
    params = PhysicalParams(1.3, 1.0, 3)
    species = tuple(SpeciesSpec(f"s{i}", 1.0, z) for i, z in enumerate((2.0, 1.0, -1.0)))
    for _ in range(500):
        p = _random_simplex(rng, 3)
        phi = float(rng.normal(0.0, 1.0))
        w = entropy_variables(p, phi, params, species)
        back = invert_entropy_variables(w, phi, params, species)
        if np.abs(back.concentrations - p.concentrations).max() > 1e-12:
            return False
        sign = 1.0 if rng.random() < 0.5 else -1.0
        w_ext = EntropyPoint(sign * rng.uniform(0.0, 700.0, 3))
        u = invert_entropy_variables(w_ext, 0.0, params, species)
        w_back = entropy_variables(u, 0.0, params, species)
        scale = np.maximum(np.abs(w_ext.w), 1.0)
        if (np.abs(w_back.w - w_ext.w) / scale).max() > 1e-12:
            return False
    return True


def check_semimetric(rng) -> bool:
    for _ in range(500):
        m, n = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        u = rng.uniform(0.0, 0.5, (m, n))
        v = rng.uniform(0.0, 0.5, (m, n))
        w = rng.uniform(0.1, 2.0, m)
        d_uv = gajewski_semimetric(u, v, 0.0, w)
        d_vu = gajewski_semimetric(v, u, 0.0, w)
        lower = 0.125 * float((w[:, None] * (u - v) ** 2).sum())
        if d_uv < -1e-15 or abs(d_uv - d_vu) > 1e-12 or d_uv + 1e-15 < lower:
            return False
        if gajewski_semimetric(u, u, 0.0, w) != 0.0:
            return False
    return True


def _test_scenario() -> ScenarioConfig:
    grid = Grid1D(20)
    params = PhysicalParams(1.0, 0.05, 2)
    species = (SpeciesSpec("p", 1.1, 1.0), SpeciesSpec("m", 0.8, -1.0))
    boundary = BoundarySpec("dirichlet", [0.08, 0.05], [0.03, 0.06], 0.2, -0.1)
    return ScenarioConfig("check", params, species, grid,
                          uniform_geometry(grid), boundary)


def check_jacobian(rng) -> bool:
    sc = _test_scenario()
    layout = disc.layout_of(sc)
    for _ in range(20):
        conc = rng.uniform(0.01, 0.2, (20, 2))
        phi = rng.normal(0.0, 0.5, 20)
        state = layout.pack(conc, phi)
        prev = layout.pack(rng.uniform(0.01, 0.2, (20, 2)), rng.normal(0.0, 0.5, 20))
        system = disc.assemble_jacobian(state, prev, 1e-3, sc)
        step = 1e-6
        for _ in range(10):
            j = int(rng.integers(layout.size))
            up, down = state.copy(), state.copy()
            up[j] += step
            down[j] -= step
            col = (
                disc.assemble_residual(up, prev, 1e-3, sc)
                - disc.assemble_residual(down, prev, 1e-3, sc)
            ) / (2 * step)
            analytic = _column(system, j, layout)
            mask = np.abs(col) > 1e-10
            if mask.any():
                rel = np.abs(analytic[mask] - col[mask]) / np.abs(col[mask])
                if rel.max() > 1e-6:
                    return False
    return True


def _column(system: disc.SparseSystem, j: int, layout: disc.StateLayout) -> np.ndarray:
    col = np.zeros(layout.size)
    blk = layout.block
    cell, comp = divmod(j, blk)
    col[cell * blk : (cell + 1) * blk] = system.diag[cell][:, comp]
    if cell > 0:
        col[(cell - 1) * blk : cell * blk] = system.upper[cell - 1][:, comp]
    if cell + 1 < layout.n_cells:
        col[(cell + 1) * blk : (cell + 2) * blk] = system.lower[cell][:, comp]
    return col


def check_conservation() -> bool:
    sc = build_scenario("calcium", boundary_mode="no-flux", max_steps=50)
    res = sv.run(sc, sv.TimeLoopSettings(dt=sc.dt, max_steps=50, steady_tolerance=1e-300))
    masses = np.array([r.masses for r in res.reports])
    drift = np.abs(masses - masses[0]).max(axis=0) / np.abs(masses[0])
    return bool(drift.max() <= 1e-10)


def check_entropy_monotone() -> bool:
    grid = Grid1D(40)
    params = PhysicalParams(1.0, 0.05, 2)
    species = (SpeciesSpec("p", 1.1, 1.0), SpeciesSpec("m", 0.8, -1.0))
    boundary = BoundarySpec("dirichlet", [0.1, 0.1], [0.1, 0.1])
    sc = ScenarioConfig("equilibrium", params, species, grid,
                        uniform_geometry(grid), boundary, max_steps=200)
    layout = disc.layout_of(sc)
    x = grid.centers
    conc = np.column_stack([0.1 + 0.05 * np.sin(2 * np.pi * x),
                            0.1 - 0.04 * np.sin(4 * np.pi * x)])
    state = layout.pack(conc, sv.solve_poisson(conc, sc))
    res = sv.run(sc, initial=state)
    energies = np.array([r.free_energy for r in res.reports])
    return bool(np.all(np.diff(energies) <= 1e-10))


def run_all(seed: int = 20260810) -> int:
    rng = np.random.default_rng(seed)
    checks = [
        ("gradient identity", lambda: check_identity(rng)),
        ("entropy-variable roundtrip", lambda: check_roundtrip(rng)),
        ("semimetric properties", lambda: check_semimetric(rng)),
        ("analytic jacobian vs finite differences", lambda: check_jacobian(rng)),
        ("no-flux mass conservation", check_conservation),
        ("free-energy monotonicity at equilibrium data", check_entropy_monotone),
    ]
    failures = 0
    for name, fn in checks:
        try:
            ok = fn()
        except Exception as exc:  # a crashed check is a failed check
            print(f"FAIL {name}: {type(exc).__name__}: {exc}")
            failures += 1
            continue
        print(f"{'PASS' if ok else 'FAIL'} {name}")
        failures += 0 if ok else 1
    return failures
