"""CSV and metadata writers for run results.

All files are written atomically (to a temporary sibling, then renamed)
with numbers in full round-trip precision, so identical runs produce
byte-identical files and partial runs never leave truncated output.
"""
from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from . import __version__
from . import discretization as disc
from .config import RunConfig, dump_toml, serialize_config
from .solver import RunResult


def series_columns(species_names) -> list[str]:
    cols = ["step", "time", "err", "newton_iterations", "free_energy", "relative_entropy"]
    cols += [f"l1_{n}" for n in species_names] + ["l1_potential"]
    cols += [f"mass_{n}" for n in species_names]
    cols += ["min_solvent"]
    return cols


def profile_columns(species_names) -> list[str]:
    cols = ["x"]
    cols += [f"u_{n}" for n in species_names]
    cols += [f"c_{n}_mol_l" for n in species_names]
    cols += ["u_solvent", "u_immobile", "phi", "phi_mv"]
    return cols


ANALYSIS_COLUMNS = ["name", "value"]


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    return repr(v)


def _atomic_write(path: str, write_rows) -> None:
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            write_rows(handle)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: str, header: list[str], rows) -> None:
    def writer(handle):
        out = csv.writer(handle)
        out.writerow(header)
        for row in rows:
            out.writerow([_fmt(v) for v in row])

    _atomic_write(path, writer)


def write_series(result: RunResult, path: str) -> None:
    names = [s.name for s in result.scenario.species]
    rows = [
        [r.step, r.time, r.err, r.newton_iterations, r.free_energy, r.relative_entropy]
        + list(r.l1_errors)
        + list(r.masses)
        + [r.min_solvent]
        for r in result.reports
    ]
    write_csv(path, series_columns(names), rows)


def write_profile(result: RunResult, state: np.ndarray, path: str) -> None:
    sc = result.scenario
    names = [s.name for s in sc.species]
    layout = result.layout
    conc = layout.concentrations(state)
    phi = layout.potential(state)
    solvent = disc.solvent_profile(sc, conc)
    mv = sc.thermal_voltage_mv / sc.params.beta
    rows = []
    for m, x in enumerate(sc.grid.centers):
        rows.append(
            [x]
            + list(conc[m])
            + list(conc[m] * sc.concentration_scale)
            + [solvent[m], sc.geometry.oxygen[m], phi[m], phi[m] * mv]
        )
    write_csv(path, profile_columns(names), rows)


def write_analysis(records: dict, path: str) -> None:
    write_csv(path, ANALYSIS_COLUMNS, [[k, v] for k, v in records.items()])


def write_run_meta(config: RunConfig, result: RunResult, path: str) -> None:
    sc = result.scenario
    meta = {
        "code_version": __version__,
        "termination": result.termination,
        "steps": len(result.reports),
        "provenance": sc.provenance,
        "entropy_quadrature": "cell-measure a_m * h with edge-area gradient term",
        "species": [
            {"name": s.name, "diffusivity": s.diffusivity, "valence": s.valence}
            for s in sc.species
        ],
        "beta": sc.params.beta,
        "lambda_sq": sc.params.lambda_sq,
        "boundary_mode": sc.boundary.mode,
        "phi_left": sc.boundary.phi_left,
        "phi_right": sc.boundary.phi_right,
        "u_left": list(map(float, sc.boundary.u_left)),
        "u_right": list(map(float, sc.boundary.u_right)),
    }

    def writer(handle):
        handle.write("# resolved configuration\n")
        handle.write(serialize_config(config))
        handle.write("\n# run metadata\n")
        handle.write(dump_toml({"meta": meta}) + "\n")

    _atomic_write(path, writer)


def write_outputs(result: RunResult, config: RunConfig, analysis: dict | None = None) -> list[str]:
    """Write the full output set for one run; returns the file paths."""
    out = config.out_dir
    written = []
    path = os.path.join(out, "series.csv")
    write_series(result, path)
    written.append(path)
    for step, state in result.snapshots:
        if step % config.cadence == 0:
            path = os.path.join(out, f"profile_{step:06d}.csv")
            write_profile(result, state, path)
            written.append(path)
    if result.termination == "steady":
        path = os.path.join(out, "steady_profile.csv")
        write_profile(result, result.final_state, path)
        written.append(path)
    if analysis:
        path = os.path.join(out, "analysis.csv")
        write_analysis(analysis, path)
        written.append(path)
    path = os.path.join(out, "run_meta.toml")
    write_run_meta(config, result, path)
    written.append(path)
    return written
