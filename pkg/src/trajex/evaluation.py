"""Ground-truth evaluation: distance-indexed errors, bias and spread.

For a reference run ``i`` and a reference distance ``d`` the error of a
quantity ``p`` is the reference value at the moment the reference vehicle
is ``d`` meters from the setup minus the measured value interpolated at
that same moment. Bias and standard deviation are the mean and the
population standard deviation of these errors over all runs.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import (
    GridMismatch,
    MissingMode,
    MultipleCrossings,
    NoCrossing,
    OutOfRange,
)
from .postprocess import SmoothedTrajectory, wrap_angle

QUANTITIES = ("x", "y", "vx", "vy", "theta")
QUANTITY_INDEX = {q: i + 1 for i, q in enumerate(QUANTITIES)}
UNITS = {"x": "m", "y": "m", "vx": "m/s", "vy": "m/s", "theta": "deg"}
DEFAULT_INTERVAL = (35.0, 135.0)
MODES = ("camera", "radar", "fused")


def make_grid(interval=DEFAULT_INTERVAL, step=1.0):
    lo, hi = interval
    n = int(math.floor((hi - lo) / step + 1e-9))
    return lo + step * np.arange(n + 1)


def _samples(traj):
    return traj.samples if isinstance(traj, SmoothedTrajectory) else np.asarray(traj, dtype=float)


def reference_distance(samples, distance="radial"):
    s = _samples(samples)
    if distance == "radial":
        return np.hypot(s[:, 1], s[:, 2])
    if distance == "along-lane":
        return np.abs(s[:, 1])
    raise ValueError(f"unknown distance mode {distance!r}")


# --------------------------------------------------------------------------
# interpolation


def interpolate_many(traj, ts):
    """Linear interpolation of ``x, y, vx, vy, theta`` at times ``ts``.

    Heading is interpolated along the shorter arc. Times outside the
    trajectory raise :class:`OutOfRange`.
    """
    s = _samples(traj)
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    t = s[:, 0]
    if len(t) == 0 or np.any(ts < t[0]) or np.any(ts > t[-1]):
        raise OutOfRange("time outside the trajectory's range")
    k = np.clip(np.searchsorted(t, ts, side="right") - 1, 0, max(len(t) - 2, 0))
    if len(t) == 1:
        return np.repeat(s[:1, 1:6], len(ts), axis=0)
    t0, t1 = t[k], t[k + 1]
    w = np.where(t1 > t0, (ts - t0) / np.where(t1 > t0, t1 - t0, 1.0), 0.0)
    exact = ts == t1
    a, b = s[k, 1:6], s[k + 1, 1:6]
    out = a + w[:, None] * (b - a)
    dth = wrap_angle(b[:, 4] - a[:, 4])
    out[:, 4] = wrap_angle(a[:, 4] + w * dth)
    out[exact] = b[exact]
    return out


def _extrapolate(s, ts):
    """Constant-velocity extension past either end of a trajectory."""
    end = np.where(ts < s[0, 0], 0, len(s) - 1)
    dt = ts - s[end, 0]
    out = s[end, 1:6].copy()
    out[:, 0] += s[end, 3] * dt
    out[:, 1] += s[end, 4] * dt
    return out


def interpolate_measurement(traj, t):
    """``(x, y, vx, vy, theta)`` of ``traj`` at time ``t``."""
    return interpolate_many(traj, [t])[0]


def distance_to_time(ref, d, distance="radial"):
    """Time at which the reference passes distance ``d`` from the setup.

    Raises :class:`NoCrossing` if it never does and :class:`MultipleCrossings`
    (carrying all crossing times) if it does more than once.
    """
    s = _samples(ref)
    r = reference_distance(s, distance) - d
    t = s[:, 0]
    a, b = r[:-1], r[1:]
    hit = (a == 0.0) | (a * b < 0.0)
    k = np.nonzero(hit)[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        tk = np.where(a[k] == 0.0, t[k], t[k] + (t[k + 1] - t[k]) * a[k] / (a[k] - b[k]))
    times = [float(v) for v in tk]
    if len(r) and r[-1] == 0.0:
        times.append(float(t[-1]))
    # a sample exactly on d that starts a segment also ends the previous one
    times = [v for i, v in enumerate(times) if i == 0 or v != times[i - 1]]
    if not times:
        raise NoCrossing(f"reference never reaches distance {d}")
    if len(times) > 1:
        raise MultipleCrossings(d, times)
    return float(times[0])


# --------------------------------------------------------------------------
# error curves


@dataclass(eq=False)
class ReferenceRun:
    run_id: int
    reference: SmoothedTrajectory
    measured: SmoothedTrajectory
    mode: str = "fused"


@dataclass(eq=False)
class ErrorCurve:
    """Errors of one run on a distance grid.

    ``errors``, ``reference`` and ``measured`` map each quantity to an array
    aligned with ``grid``; values are NaN where the run is undefined.
    """

    run_id: int
    grid: np.ndarray
    errors: dict
    reference: dict = field(default_factory=dict)
    measured: dict = field(default_factory=dict)
    times: np.ndarray | None = None
    multiple_crossings: list = field(default_factory=list)


def error_curve(run: ReferenceRun, grid=None, distance="radial", strict=True,
                extrapolate=0.1) -> ErrorCurve:
    """Reference minus measured values at each reference distance.

    Measured states up to ``extrapolate`` seconds beyond either end of the
    measured trajectory are extended at constant velocity; a sensor that
    stops reporting at the edge of its range otherwise leaves the interval
    ends uncovered. With ``strict`` any grid point the reference does not
    cross, or where the measured trajectory has no data, raises; otherwise
    it yields NaN.
    """
    grid = make_grid() if grid is None else np.asarray(grid, dtype=float)
    ref = run.reference.samples
    meas = run.measured.samples
    n = len(grid)
    refv = np.full((n, 5), np.nan)
    measv = np.full((n, 5), np.nan)
    times = np.full(n, np.nan)
    flagged = []
    for k, d in enumerate(grid):
        try:
            tk = distance_to_time(ref, d, distance)
        except MultipleCrossings as exc:
            tk = exc.times[0]
            flagged.append(float(d))
        except NoCrossing:
            if strict:
                raise
            continue
        times[k] = tk
        refv[k] = interpolate_many(ref, [tk])[0]
        try:
            measv[k] = interpolate_many(meas, [tk])[0]
        except OutOfRange:
            if meas[0, 0] - extrapolate <= tk <= meas[-1, 0] + extrapolate:
                measv[k] = _extrapolate(meas, np.array([tk]))[0]
            elif strict:
                raise OutOfRange(
                    f"run {run.run_id}: no measurement at distance {d} (t={tk:.3f})")
    err = refv - measv
    err[:, 4] = np.where(np.isnan(err[:, 4]), np.nan, wrap_angle(np.nan_to_num(err[:, 4])))
    as_dict = lambda a: {q: a[:, i].copy() for i, q in enumerate(QUANTITIES)}
    return ErrorCurve(run.run_id, grid, as_dict(err), as_dict(refv), as_dict(measv),
                      times, flagged)


def visible_grid(run: ReferenceRun, step=1.0, distance="radial"):
    """Integer-step grid spanning every distance where both series overlap."""
    ref = run.reference.samples
    meas = run.measured.samples
    t_lo = max(ref[0, 0], meas[0, 0])
    t_hi = min(ref[-1, 0], meas[-1, 0])
    mask = (ref[:, 0] >= t_lo) & (ref[:, 0] <= t_hi)
    if not mask.any():
        return np.array([])
    r = reference_distance(ref[mask], distance)
    lo = math.ceil(r.min() / step) * step
    hi = math.floor(r.max() / step) * step
    return make_grid((lo, hi), step) if hi >= lo else np.array([])


# --------------------------------------------------------------------------
# aggregation


@dataclass(eq=False)
class BiasTable:
    """Per-quantity bias and standard deviation against reference distance."""

    grid: np.ndarray
    mean: dict
    std: dict
    n_runs: int
    interval: tuple = DEFAULT_INTERVAL

    def _in_interval(self):
        lo, hi = self.interval
        return (self.grid >= lo - 1e-9) & (self.grid <= hi + 1e-9)

    @property
    def interval_bias(self):
        m = self._in_interval()
        return {q: float(np.mean(self.mean[q][m])) for q in QUANTITIES}

    @property
    def interval_std(self):
        m = self._in_interval()
        return {q: float(np.mean(self.std[q][m])) for q in QUANTITIES}

    def bias_at(self, q, d):
        """Bias of quantity ``q`` at distance(s) ``d``; clamped at the grid ends."""
        return np.interp(d, self.grid, self.mean[q])

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["d"] + [f"{k}_{q}" for q in QUANTITIES for k in ("mean", "std")])
        for i, d in enumerate(self.grid):
            row = [f"{d:.6f}"]
            for q in QUANTITIES:
                scale = 180.0 / math.pi if q == "theta" else 1.0
                row += [f"{self.mean[q][i] * scale:.6f}", f"{self.std[q][i] * scale:.6f}"]
            w.writerow(row)
        return buf.getvalue()


def aggregate_bias_std(curves, interval=DEFAULT_INTERVAL) -> BiasTable:
    """Mean and population standard deviation (divisor ``N``) over runs."""
    curves = list(curves)
    if not curves:
        raise ValueError("need at least one error curve")
    grid = curves[0].grid
    for c in curves[1:]:
        if c.grid.shape != grid.shape or not np.array_equal(c.grid, grid):
            raise GridMismatch(f"run {c.run_id} uses a different grid")
    mean, std = {}, {}
    for q in QUANTITIES:
        e = np.array([c.errors[q] for c in curves])
        mu = e.mean(axis=0)
        if q == "theta":
            dev = wrap_angle(e - mu)
        else:
            dev = e - mu
        mean[q] = mu
        std[q] = np.sqrt((dev ** 2).sum(axis=0) / len(curves))
    return BiasTable(grid, mean, std, len(curves), tuple(interval))


def debias(traj: SmoothedTrajectory, table: BiasTable, distance="radial") -> SmoothedTrajectory:
    """Add the distance-dependent bias back onto a measured trajectory.

    Errors are reference minus measured, so the correction is
    ``measured + bias(d)`` with ``d`` the sample's own distance.
    """
    s = traj.samples.copy()
    d = reference_distance(s, distance)
    for q in QUANTITIES:
        i = QUANTITY_INDEX[q]
        s[:, i] = s[:, i] + table.bias_at(q, d)
    s[:, 5] = wrap_angle(s[:, 5])
    return replace(traj, samples=s, covariances=None)


class BiasCorrector(TransformerMixin, BaseEstimator):
    """Learn a :class:`BiasTable` from error curves and remove it from trajectories.

    ``fit`` takes a list of :class:`ErrorCurve`; ``transform`` takes one
    trajectory or a list of them.
    """

    def __init__(self, interval=DEFAULT_INTERVAL, distance="radial"):
        self.interval = interval
        self.distance = distance

    def fit(self, X, y=None):
        self.table_ = aggregate_bias_std(X, self.interval)
        return self

    def transform(self, X):
        check_is_fitted(self, "table_")
        if isinstance(X, SmoothedTrajectory):
            return debias(X, self.table_, self.distance)
        return [debias(t, self.table_, self.distance) for t in X]


# --------------------------------------------------------------------------
# sensor-mode comparison


@dataclass
class ComparisonTable:
    """Interval-mean bias and std per quantity (rows) and sensor mode (columns).

    Values are stored in report units: meters, m/s and degrees.
    """

    modes: tuple
    bias: dict  # mode -> quantity -> value
    std: dict

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["quantity", "unit"] + [f"{m}_{k}" for m in self.modes for k in ("bias", "std")])
        for q in QUANTITIES:
            row = [q, UNITS[q]]
            for m in self.modes:
                row += [f"{self.bias[m][q]:.6f}", f"{self.std[m][q]:.6f}"]
            w.writerow(row)
        return buf.getvalue()

    def to_text(self, decimals=2):
        head = ["", *(m.capitalize() for m in self.modes)]
        rows = [head]
        for q in QUANTITIES:
            cells = [f"{q} [{UNITS[q]}]"]
            for m in self.modes:
                cells.append(f"{self.bias[m][q]:.{decimals}f} ({self.std[m][q]:.{decimals}f})")
            rows.append(cells)
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        lines = ["Mean bias (mean standard deviation)"]
        for r in rows:
            lines.append("  ".join(c.rjust(wd) if i else c.ljust(wd)
                                   for i, (c, wd) in enumerate(zip(r, widths))).rstrip())
        return "\n".join(lines) + "\n"


def comparison_table(tables: dict, modes=MODES, require_all=True) -> ComparisonTable:
    """Build the camera / radar / fused comparison from per-mode bias tables."""
    present = tuple(m for m in modes if m in tables)
    missing = [m for m in modes if m not in tables]
    if missing and require_all:
        raise MissingMode(f"missing sensor modes: {missing}")
    bias, std = {}, {}
    for m in present:
        b, s = tables[m].interval_bias, tables[m].interval_std
        bias[m] = {q: b[q] * (180.0 / math.pi if q == "theta" else 1.0) for q in QUANTITIES}
        std[m] = {q: s[q] * (180.0 / math.pi if q == "theta" else 1.0) for q in QUANTITIES}
    return ComparisonTable(present, bias, std)


# --------------------------------------------------------------------------
# association and summary


def associate(references, trajectories, gate=3.0):
    """Map each reference id to the trajectory with the most samples near it.

    A sample counts when it lies within ``gate`` meters of the reference at
    the same time. References without any such sample map to ``None``.
    """
    out = {}
    for ref in references:
        rs = ref.samples
        best, best_n = None, 0
        for tr in trajectories:
            ts = tr.samples[:, 0]
            m = (ts >= rs[0, 0]) & (ts <= rs[-1, 0])
            if not m.any():
                continue
            rv = interpolate_many(rs, ts[m])
            n = int(np.sum(np.hypot(rv[:, 0] - tr.samples[m, 1],
                                    rv[:, 1] - tr.samples[m, 2]) <= gate))
            if n > best_n:
                best, best_n = tr, n
        out[ref.track_id] = best
    return out


@dataclass
class SummaryStats:
    tracks_per_minute: float = 0.0
    mean_detections_per_track: float = 0.0
    mean_confidence: float = 0.0
    mean_matched_iou: float = 0.0
    max_miss_gap: float = 0.0
    miss_gaps: dict = field(default_factory=dict)
    n_tracks: int = 0

    def to_text(self):
        return (
            f"tracks: {self.n_tracks}\n"
            f"tracks per minute: {self.tracks_per_minute:.2f}\n"
            f"mean detections per track: {self.mean_detections_per_track:.1f}\n"
            f"mean detection confidence: {self.mean_confidence:.3f}\n"
            f"mean matched IoU: {self.mean_matched_iou:.3f}\n"
            f"max consecutive-miss gap: {self.max_miss_gap:.3f} s\n"
        )


def summary_stats(tracks, duration) -> SummaryStats:
    """Track statistics over a recording of ``duration`` seconds."""
    tracks = list(tracks)
    if not tracks:
        return SummaryStats()
    conf = [c for tr in tracks for c in tr.confidences]
    ious = [v for tr in tracks for v in tr.matched_ious]
    gaps = {tr.id: tr.max_detection_gap() for tr in tracks}
    return SummaryStats(
        tracks_per_minute=len(tracks) / (duration / 60.0) if duration > 0 else 0.0,
        mean_detections_per_track=float(np.mean([tr.n_detections for tr in tracks])),
        mean_confidence=float(np.mean(conf)) if conf else 0.0,
        mean_matched_iou=float(np.mean(ious)) if ious else 0.0,
        max_miss_gap=max(gaps.values()),
        miss_gaps=gaps,
        n_tracks=len(tracks),
    )


def errors_run_csv(curve: ErrorCurve):
    """Per-run table: distance plus reference / measured / error per quantity."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["d", "t"] + [f"{k}_{q}" for q in QUANTITIES for k in ("ref", "meas", "err")])
    for i, d in enumerate(curve.grid):
        row = [f"{d:.6f}", _f(curve.times[i])]
        for q in QUANTITIES:
            s = 180.0 / math.pi if q == "theta" else 1.0
            row += [_f(curve.reference[q][i] * s), _f(curve.measured[q][i] * s),
                    _f(curve.errors[q][i] * s)]
        w.writerow(row)
    return buf.getvalue()


def _f(v):
    return "" if v is None or not np.isfinite(v) else f"{v:.6f}"
