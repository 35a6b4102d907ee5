"""Post-processing of run records: decay rates, entropy ratios, plateaus.

All routines consume the immutable snapshot series of a completed run
and are pure; nothing here feeds back into the solver.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import discretization as disc
from .model import ReferenceState, gajewski_semimetric
from .solver import RunResult, free_energy_of_state


@dataclass(frozen=True)
class DecayFit:
    """Least-squares exponential fit of a positive series.

    ``rate`` is the positive decay constant per unit time (slope of the
    log-series against time, negated); ``rate_per_step`` rescales it by
    the sampling interval.  ``goodness`` is the R^2 of the line fit.
    """

    window: tuple[int, int]  # [start, stop) indices into the series
    rate: float
    rate_per_step: float
    goodness: float

    def __post_init__(self) -> None:
        if self.window[1] - self.window[0] < 5:
            raise ValueError("fit window must span at least five points")


@dataclass(frozen=True)
class PlateauReport:
    detected: bool
    split_index: int
    plateau_window: tuple[int, int]
    late_window: tuple[int, int]
    plateau_rate: float
    late_rate: float


@dataclass(frozen=True)
class RunComparison:
    """Distances between two runs on the same grid at matched snapshots."""

    times: np.ndarray
    l1: np.ndarray  # (n_snapshots, n_species)
    l2: np.ndarray  # (n_snapshots, n_species)
    semimetric: np.ndarray  # (n_snapshots,)


def relative_entropy_series(result: RunResult, steady: ReferenceState) -> np.ndarray:
    """Free energy of every stored snapshot relative to a steady state.

    A reference that touches the simplex boundary is handled with the
    0 log 0 convention (entries of the series may then be +inf).
    """
    strict = bool(np.all(steady.concentrations > 0.0) and np.all(steady.solvent > 0.0))
    return np.array(
        [
            free_energy_of_state(state, result.scenario, steady, strict_ref=strict)
            for _, state in result.snapshots
        ]
    )


def l1_error_series(result: RunResult, steady: ReferenceState) -> np.ndarray:
    """L1 distance of every snapshot to the steady profile.

    Columns: one per species, then the potential.  Plain grid measure by
    default; cross-section weighted when the scenario asks for it.
    """
    sc = result.scenario
    layout = result.layout
    h = sc.grid.h
    w = sc.geometry.cell_area * h if sc.area_weighted_norms else np.full(sc.grid.n_cells, h)
    rows = []
    for _, state in result.snapshots:
        du = np.abs(layout.concentrations(state) - steady.concentrations)
        dphi = np.abs(layout.potential(state) - steady.potential)
        rows.append(list((w[:, None] * du).sum(axis=0)) + [float((w * dphi).sum())])
    return np.array(rows)


def default_fit_window(n: int) -> tuple[int, int]:
    """Last 60% of the series with the final 5% (termination noise) dropped."""
    stop = max(0, n - max(1, n // 20))
    start = min(stop - 5, int(n * 0.4))
    return max(0, start), stop


def floored_fit_window(series, floor_ratio: float = 1e-12) -> tuple[int, int]:
    """Default window restricted to where the series is above its roundoff floor.

    Relative entropies against a converged steady state decay into the
    rounding noise of the free-energy quadrature; entries below
    ``floor_ratio`` times the series maximum carry no rate information.
    """
    y = np.asarray(series, dtype=float)
    mask = y > y.max() * floor_ratio
    n = len(y) if mask.all() else int(np.argmin(mask))
    return default_fit_window(n)


def fit_decay_rate(series, times, window: tuple[int, int] | None = None) -> DecayFit:
    """Fit ``log(series) = a - rate * t`` on an index window.

    The series must be strictly positive on the window.
    """
    y = np.asarray(series, dtype=float)
    t = np.asarray(times, dtype=float)
    if y.shape != t.shape:
        raise ValueError("series and time axis differ in length")
    lo, hi = window if window is not None else default_fit_window(len(y))
    ys, ts = y[lo:hi], t[lo:hi]
    if len(ys) < 5:
        raise ValueError("fit window must span at least five points")
    if np.any(ys <= 0.0):
        raise ValueError("series must be strictly positive on the fit window")
    logs = np.log(ys)
    slope, intercept = np.polyfit(ts, logs, 1)
    fitted = slope * ts + intercept
    ss_res = float(((logs - fitted) ** 2).sum())
    ss_tot = float(((logs - logs.mean()) ** 2).sum())
    goodness = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - ss_res / ss_tot)
    dt_mean = float(np.diff(ts).mean())
    return DecayFit(
        window=(lo, hi),
        rate=float(-slope),
        rate_per_step=float(-slope * dt_mean),
        goodness=goodness,
    )


def ck_ratio(entropy_fit: DecayFit, l1_fit: DecayFit) -> float:
    """Ratio of entropy to L1 decay rates; about two for exponential runs."""
    lo = max(entropy_fit.window[0], l1_fit.window[0])
    hi = min(entropy_fit.window[1], l1_fit.window[1])
    if hi <= lo:
        raise ValueError("fit windows do not overlap")
    if l1_fit.rate == 0.0:
        raise ValueError("degenerate L1 fit (zero rate)")
    return entropy_fit.rate / l1_fit.rate


def _smooth(y: np.ndarray, width: int) -> np.ndarray:
    if width <= 1:
        return y
    kernel = np.ones(width) / width
    pad = np.concatenate([np.full(width // 2, y[0]), y, np.full(width - 1 - width // 2, y[-1])])
    return np.convolve(pad, kernel, mode="valid")


def plateau_detector(series, times) -> PlateauReport:
    """Split a decay series where its log bends down hardest.

    The split sits at the maximum-curvature point of the (smoothed)
    log-series where the decay accelerates; the early-side rate is
    fitted after any initial transient (the opposite-curvature corner
    preceding the split).  A plateau is reported when the early rate is
    at most a tenth of the late rate.
    """
    y = np.asarray(series, dtype=float)
    t = np.asarray(times, dtype=float)
    keep = y > 0.0
    # Trailing terminated-to-roundoff entries would spoil the log.
    valid = len(y) if keep.all() else int(np.argmin(keep))
    y, t = y[:valid], t[:valid]
    n = len(y)
    no_plateau = PlateauReport(False, 0, (0, n), (0, n), float("nan"), float("nan"))
    if n < 20:
        return no_plateau

    logs = _smooth(np.log(y), max(3, n // 50))
    curvature = np.zeros(n)
    curvature[1:-1] = logs[2:] - 2.0 * logs[1:-1] + logs[:-2]
    margin = max(5, n // 10)
    candidates = curvature[margin : n - margin]
    split = margin + int(np.argmin(candidates))

    bend = margin + int(np.argmax(curvature[margin:split])) if split > margin + 5 else 0
    plateau_lo = bend if split - bend >= 5 else max(0, split - max(5, split // 2))
    plateau_win = (plateau_lo, split)
    late_win = (split, n)
    if plateau_win[1] - plateau_win[0] < 5 or late_win[1] - late_win[0] < 5:
        return no_plateau
    early = fit_decay_rate(y, t, plateau_win)
    late = fit_decay_rate(y, t, late_win)
    detected = late.rate > 0.0 and early.rate <= late.rate / 10.0
    return PlateauReport(
        detected=detected,
        split_index=split,
        plateau_window=plateau_win,
        late_window=late_win,
        plateau_rate=early.rate,
        late_rate=late.rate,
    )


def min_solvent_series(result: RunResult, window: tuple[float, float] = (0.4, 0.6)) -> np.ndarray:
    """Per-snapshot minimum of the solvent fraction over the channel cells."""
    sc = result.scenario
    centers = sc.grid.centers
    mask = (centers >= window[0]) & (centers <= window[1])
    if not mask.any():
        mask = np.ones_like(mask)
    layout = result.layout
    out = []
    for _, state in result.snapshots:
        solvent = disc.solvent_profile(sc, layout.concentrations(state))
        out.append(float(solvent[mask].min()))
    return np.array(out)


def standard_analysis(result: RunResult) -> dict:
    """Decay fits, entropy/L1 rate ratio, and plateau report of one run.

    Returns a flat name -> value mapping ready for ``analysis.csv``.
    Runs that did not reach a steady state get a minimal record.
    """
    from .solver import steady_reference  # local import avoids cycle at module load

    records: dict = {
        "termination": result.termination,
        "steps": len(result.reports),
    }
    if result.termination != "steady" or len(result.snapshots) < 30:
        return records
    steady = steady_reference(result)
    t = result.snapshot_times
    entropy = relative_entropy_series(result, steady)
    l1 = l1_error_series(result, steady)
    l1_species_total = l1[:, :-1].sum(axis=1)

    window = floored_fit_window(entropy)
    entropy_fit = fit_decay_rate(entropy, t, window)
    l1_fit = fit_decay_rate(l1_species_total, t, window)
    records.update(
        {
            "fit_window_start": window[0],
            "fit_window_stop": window[1],
            "entropy_rate_per_time": entropy_fit.rate,
            "entropy_rate_per_step": entropy_fit.rate_per_step,
            "entropy_fit_r2": entropy_fit.goodness,
            "l1_rate_per_time": l1_fit.rate,
            "l1_rate_per_step": l1_fit.rate_per_step,
            "l1_fit_r2": l1_fit.goodness,
            "ck_ratio": ck_ratio(entropy_fit, l1_fit),
        }
    )
    plateau = plateau_detector(entropy, t)
    records.update(
        {
            "plateau_detected": int(plateau.detected),
            "plateau_rate_per_time": plateau.plateau_rate,
            "late_rate_per_time": plateau.late_rate,
            "plateau_split_index": plateau.split_index,
        }
    )
    solvent = min_solvent_series(result, result.scenario.channel_window)
    records["min_solvent_overall"] = float(solvent.min())
    if plateau.detected:
        lo, hi = plateau.plateau_window
        records["min_solvent_plateau"] = float(solvent[lo:hi].min())
    return records


def compare_runs(a: RunResult, b: RunResult, eps: float = 0.0) -> RunComparison:
    """Distances between two runs at their common snapshot steps."""
    if a.scenario.grid.n_cells != b.scenario.grid.n_cells:
        raise ValueError("runs live on different grids")
    steps_b = {k: s for k, s in b.snapshots}
    common = [(k, s, steps_b[k]) for k, s in a.snapshots if k in steps_b]
    if not common:
        raise ValueError("no common snapshot steps")
    la, h = a.layout, a.scenario.grid.h
    weights = np.full(a.scenario.grid.n_cells, h)
    times = {r.step: r.time for r in a.reports}
    times[0] = 0.0
    l1, l2, dsem, ts = [], [], [], []
    for k, sa, sb in common:
        ua, ub = la.concentrations(sa), la.concentrations(sb)
        diff = ua - ub
        l1.append((weights[:, None] * np.abs(diff)).sum(axis=0))
        l2.append(np.sqrt((weights[:, None] * diff**2).sum(axis=0)))
        dsem.append(gajewski_semimetric(np.clip(ua, 0.0, None),
                                        np.clip(ub, 0.0, None), eps, weights))
        ts.append(times[k])
    return RunComparison(
        times=np.array(ts), l1=np.array(l1), l2=np.array(l2), semimetric=np.array(dsem)
    )
