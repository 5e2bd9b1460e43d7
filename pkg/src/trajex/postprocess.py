"""Post-processing of finished tracks: RTS smoothing, class and dimension
aggregation, heading extraction and CSV export."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import NoCameraDetections, TooShort, UnknownFrame
from .geometry import FrameTransform, TransformRegistry
from .tracker import DIMENSIONS, Track, TrackerConfig, transition

CLASS_PRIORITY = ("car", "truck", "bus", "motorcycle")
UNKNOWN_CLASS = "unknown"
CSV_COLUMNS = ("track_id", "class", "length", "width", "height",
               "t", "x", "y", "vx", "vy", "theta")
SAMPLE_COLUMNS = ("t", "x", "y", "vx", "vy", "theta")


@dataclass(eq=False)
class SmoothedTrajectory:
    """Smoothed states of one track.

    ``samples`` is an ``(n, 6)`` array with columns ``t, x, y, vx, vy,
    theta``; ``covariances`` (optional) holds the smoothed ``(n, 4, 4)``
    state covariances.
    """

    track_id: int
    cls: str
    dimensions: tuple
    samples: np.ndarray
    frame: str = "Road"
    covariances: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float).reshape(-1, 6)

    def __len__(self):
        return len(self.samples)

    @property
    def t(self):
        return self.samples[:, 0]

    def column(self, name):
        return self.samples[:, SAMPLE_COLUMNS.index(name)]

    def to_frame(self, transform: FrameTransform):
        """Express the trajectory in ``transform.target_frame``."""
        if transform.source_frame != self.frame:
            raise UnknownFrame(
                f"transform starts in {transform.source_frame}, trajectory is in {self.frame}")
        s = self.samples.copy()
        s[:, 1:3] = transform.apply(s[:, 1:3])
        s[:, 3:5] = transform.apply_vector(s[:, 3:5])
        s[:, 5] = wrap_angle(s[:, 5] + transform.rotation)
        return replace(self, samples=s, frame=transform.target_frame, covariances=None)


def wrap_angle(a):
    """Wrap angles to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    w = np.remainder(a + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


# --------------------------------------------------------------------------
# heading


def heading(vx, vy):
    """Heading of a velocity vector, ``atan2(vy, vx)``."""
    return math.atan2(vy, vx)


def headings(vx, vy, floor=0.5, initial=None):
    """Heading per sample, holding the previous value below ``floor`` m/s.

    Leading slow samples take the first valid heading (or ``initial`` / 0
    when the whole sequence is slow).
    """
    vx = np.asarray(vx, dtype=float)
    vy = np.asarray(vy, dtype=float)
    raw = np.arctan2(vy, vx)
    ok = np.hypot(vx, vy) >= floor
    out = np.empty_like(raw)
    prev = initial
    if prev is None:
        prev = float(raw[ok][0]) if ok.any() else 0.0
    for k in range(len(raw)):
        if ok[k]:
            prev = raw[k]
        out[k] = prev
    return out


# --------------------------------------------------------------------------
# RTS smoothing


def rts_smooth_arrays(times, means, covs, pred_means, pred_covs):
    """Rauch-Tung-Striebel backward pass over stored forward-pass results.

    ``pred_means[k]`` / ``pred_covs[k]`` are the one-step predictions that
    preceded the update at ``times[k]`` (entry 0 is unused). Returns the
    smoothed means ``(n, 4)`` and covariances ``(n, 4, 4)``.
    """
    n = len(times)
    xs = np.array(means, dtype=float)
    ps = np.array(covs, dtype=float)
    for k in range(n - 2, -1, -1):
        f = transition(times[k + 1] - times[k])
        pp = pred_covs[k + 1]
        gain = np.linalg.solve(pp, f @ ps[k]).T
        xs[k] = means[k] + gain @ (xs[k + 1] - pred_means[k + 1])
        pk = covs[k] + gain @ (ps[k + 1] - pp) @ gain.T
        ps[k] = 0.5 * (pk + pk.T)
    return xs, ps


def aggregate_class(track: Track | dict) -> str:
    """Class with the largest confidence-weighted vote sum.

    Ties go to the earlier entry of ``car, truck, bus, motorcycle``.
    """
    votes = track.class_votes if isinstance(track, Track) else track
    if not votes:
        raise NoCameraDetections("track has no camera detections")
    rank = {c: i for i, c in enumerate(CLASS_PRIORITY)}
    return max(votes, key=lambda c: (votes[c], -rank.get(c, len(rank))))


def weighted_trimmed_mean(samples, trim_min_count=5):
    """Mean of ``(value, distance)`` samples weighted by ``1 / (distance + 1)``.

    With at least ``trim_min_count`` samples the single smallest and largest
    values are dropped first.
    """
    if not samples:
        return None
    vals = np.array([s[0] for s in samples], dtype=float)
    dist = np.array([s[1] for s in samples], dtype=float)
    if len(vals) >= trim_min_count:
        keep = np.ones(len(vals), dtype=bool)
        keep[np.argmin(vals)] = False
        keep[np.argmax(vals)] = False
        if keep.sum() == 0:
            keep[:] = True
        vals, dist = vals[keep], dist[keep]
    w = 1.0 / (dist + 1.0)
    return float(np.sum(w * vals) / np.sum(w))


def aggregate_dimensions(track: Track | dict, trim_min_count=5):
    """``(length, width, height)``; a dimension without samples is ``None``."""
    samples = track.dimension_samples if isinstance(track, Track) else track
    return tuple(weighted_trimmed_mean(samples.get(k, []), trim_min_count)
                 for k in DIMENSIONS)


def rts_smooth(track: Track, cfg: TrackerConfig | None = None) -> SmoothedTrajectory:
    """Smooth a finished track into a :class:`SmoothedTrajectory` (Road frame)."""
    cfg = cfg or TrackerConfig()
    hist = track.history
    if len(hist) < 2:
        raise TooShort(f"track {track.id} has {len(hist)} filtered states")
    times = np.array([h.t for h in hist])
    xs, ps = rts_smooth_arrays(times, [h.mean for h in hist], [h.cov for h in hist],
                               [h.pred_mean for h in hist], [h.pred_cov for h in hist])
    theta = headings(xs[:, 2], xs[:, 3], cfg.heading_speed_floor)
    try:
        cls = aggregate_class(track)
    except NoCameraDetections:
        cls = UNKNOWN_CLASS
    samples = np.column_stack([times, xs, theta])
    return SmoothedTrajectory(track.id, cls,
                              aggregate_dimensions(track, cfg.trim_min_count),
                              samples, "Road", ps)


# --------------------------------------------------------------------------
# CSV export


def _fmt(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return f"{v:.6f}"


def dumps_trajectories(trajs, frame, config_digest="", id_column="track_id"):
    buf = io.StringIO()
    buf.write(f"# frame: {frame}\n")
    buf.write("# units: t[s] x[m] y[m] vx[m/s] vy[m/s] theta[rad] "
              "length[m] width[m] height[m]\n")
    buf.write(f"# config_digest: {config_digest}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow((id_column,) + CSV_COLUMNS[1:])
    for tr in trajs:
        if tr.frame != frame:
            raise UnknownFrame(f"trajectory {tr.track_id} is in {tr.frame}, not {frame}")
        dims = [_fmt(d) for d in tr.dimensions]
        for row in tr.samples:
            w.writerow([tr.track_id, tr.cls, *dims, *(f"{v:.6f}" for v in row)])
    return buf.getvalue()


def export_trajectories(trajs, path, target_frame="Setup",
                        registry: TransformRegistry | None = None,
                        config_digest="", id_column="track_id"):
    """Write trajectories as CSV in ``target_frame``.

    Trajectories in other frames are converted through ``registry``;
    a missing chain raises :class:`UnknownFrame`.
    """
    registry = registry or TransformRegistry()
    out = []
    for tr in trajs:
        if tr.frame != target_frame:
            tr = tr.to_frame(registry.get(tr.frame, target_frame))
        out.append(tr)
    text = dumps_trajectories(out, target_frame, config_digest, id_column)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return out


def read_trajectories(path_or_text):
    """Read a trajectory (or ground-truth) CSV back.

    Returns ``(trajectories, header)`` where ``header`` maps the comment keys
    (``frame``, ``units``, ``config_digest``) to their values.
    """
    if "\n" in str(path_or_text):
        lines = str(path_or_text).splitlines()
    else:
        with open(path_or_text) as fh:
            lines = fh.read().splitlines()
    header = {}
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            header[key.strip()] = val.strip()
        elif line.strip():
            body.append(line)
    frame = header.get("frame", "Setup")
    reader = csv.reader(body)
    cols = next(reader, None)
    if cols is None:
        return [], header
    groups = {}
    meta = {}
    for row in reader:
        rec = dict(zip(cols, row))
        tid = int(rec[cols[0]])
        dims = tuple(float(rec[k]) if rec[k] != "" else None for k in DIMENSIONS)
        meta.setdefault(tid, (rec["class"], dims))
        groups.setdefault(tid, []).append([float(rec[k]) for k in SAMPLE_COLUMNS])
    trajs = [SmoothedTrajectory(tid, meta[tid][0], meta[tid][1], np.array(rows), frame)
             for tid, rows in groups.items()]
    return trajs, header
