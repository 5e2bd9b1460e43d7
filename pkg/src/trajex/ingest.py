"""Detection logs: parsing, writing, ROI filtering and stream merging.

Camera record::

    {"t": 12.03, "box": [u1, v1, u2, v2], "class": "car", "conf": 0.93, "width": 1.8}

Radar record (position and velocity in the Setup frame)::

    {"t": 12.01, "x": 151.2, "y": -2.1, "vx": -24.9, "vy": 0.1,
     "len": 4.4, "wid": 1.9, "hgt": 1.5}
"""

from __future__ import annotations

import heapq
import io
import json
import math
import os
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .exceptions import MalformedRecord, NonMonotonicTimestamps
from .geometry import BoundingBox, apply_homography, footprint_point

CLASSES = ("car", "bus", "truck", "motorcycle")
CAMERA = "camera"
RADAR = "radar"


@dataclass(frozen=True, slots=True)
class CameraDetection:
    timestamp: float
    box: BoundingBox
    cls: str
    confidence: float
    width_estimate: float | None = None

    def to_record(self):
        return {"t": self.timestamp, "box": self.box.as_list(), "class": self.cls,
                "conf": self.confidence, "width": self.width_estimate}


@dataclass(frozen=True, slots=True)
class RadarDetection:
    timestamp: float
    x: float
    y: float
    vx: float
    vy: float
    length: float
    width: float
    height: float

    @property
    def position(self):
        return (self.x, self.y)

    @property
    def velocity(self):
        return (self.vx, self.vy)

    def to_record(self):
        return {"t": self.timestamp, "x": self.x, "y": self.y, "vx": self.vx,
                "vy": self.vy, "len": self.length, "wid": self.width,
                "hgt": self.height}


class Measurement(NamedTuple):
    """One detection tagged with the sensor it came from."""

    timestamp: float
    sensor: str
    detection: CameraDetection | RadarDetection
    sensor_id: str = ""


def _number(rec, key, *, optional=False):
    if key not in rec:
        raise ValueError(f"missing field '{key}'")
    val = rec[key]
    if val is None and optional:
        return None
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ValueError(f"field '{key}' must be a number")
    val = float(val)
    if not math.isfinite(val):
        raise ValueError(f"field '{key}' must be finite")
    return val


def camera_from_record(rec) -> CameraDetection:
    if not isinstance(rec, dict):
        raise ValueError("record must be a JSON object")
    t = _number(rec, "t")
    box = rec.get("box")
    if not isinstance(box, list) or len(box) != 4:
        raise ValueError("field 'box' must be [u1, v1, u2, v2]")
    coords = [_number({"box": b}, "box") for b in box]
    cls = rec.get("class")
    if cls not in CLASSES:
        raise ValueError(f"unknown class {cls!r}")
    conf = _number(rec, "conf")
    if not 0.0 <= conf <= 1.0:
        raise ValueError(f"confidence {conf} outside [0, 1]")
    width = _number(rec, "width", optional=True) if "width" in rec else None
    if width is not None and width <= 0.0:
        raise ValueError("width must be positive")
    return CameraDetection(t, BoundingBox(*coords), cls, conf, width)


def radar_from_record(rec) -> RadarDetection:
    if not isinstance(rec, dict):
        raise ValueError("record must be a JSON object")
    vals = [_number(rec, k) for k in ("t", "x", "y", "vx", "vy", "len", "wid", "hgt")]
    for key, v in zip(("len", "wid", "hgt"), vals[5:]):
        if v <= 0.0:
            raise ValueError(f"field '{key}' must be positive, got {v}")
    return RadarDetection(*vals)


def _lines(stream):
    if isinstance(stream, (str, os.PathLike)):
        with open(stream) as fh:
            yield from fh
    else:
        yield from stream


def _parse(stream, convert, errors):
    out = []
    for lineno, line in enumerate(_lines(stream), start=1):
        if not line.strip():
            continue
        try:
            out.append(convert(json.loads(line)))
        except (ValueError, TypeError) as exc:
            err = MalformedRecord(lineno, str(exc))
            if errors is None:
                raise err from exc
            errors.append(err)
    times = [d.timestamp for d in out]
    if any(b < a for a, b in zip(times, times[1:])):
        warnings.warn("log is not sorted by time; applying a stable sort",
                      NonMonotonicTimestamps, stacklevel=3)
        out.sort(key=lambda d: d.timestamp)
    return out


def parse_camera_log(stream, errors=None):
    """Parse a camera JSONL log into time-sorted :class:`CameraDetection` s.

    ``stream`` is a path, an open text file or any iterable of lines. When
    ``errors`` is ``None`` the first bad line raises :class:`MalformedRecord`;
    otherwise bad lines are appended to the ``errors`` list and skipped.
    """
    return _parse(stream, camera_from_record, errors)


def parse_radar_log(stream, errors=None):
    """Radar counterpart of :func:`parse_camera_log`."""
    return _parse(stream, radar_from_record, errors)


def dumps_log(detections):
    buf = io.StringIO()
    for d in detections:
        buf.write(json.dumps(d.to_record(), separators=(",", ":")))
        buf.write("\n")
    return buf.getvalue()


def write_log(path, detections):
    with open(path, "w", newline="\n") as fh:
        fh.write(dumps_log(detections))


# --------------------------------------------------------------------------
# region of interest


def _segments_cross(p1, p2, q1, q2):
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


class RegionOfInterest:
    """Simple polygon in the Road frame; boundary points count as inside."""

    def __init__(self, vertices):
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ValueError("ROI needs at least 3 (x, y) vertices")
        if not np.all(np.isfinite(v)):
            raise ValueError("ROI vertices must be finite")
        x, y = v[:, 0], v[:, 1]
        area = 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
        if abs(area) <= 0.0:
            raise ValueError("ROI polygon has zero area")
        n = len(v)
        for i in range(n):
            for j in range(i + 2, n):
                if i == 0 and j == n - 1:
                    continue
                if _segments_cross(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]):
                    raise ValueError("ROI polygon self-intersects")
        self.vertices = v
        self.area = abs(area)

    def contains(self, x, y, eps=1e-9):
        v = self.vertices
        n = len(v)
        inside = False
        for i in range(n):
            ax, ay = v[i]
            bx, by = v[(i + 1) % n]
            # on-edge test
            cross = (bx - ax) * (y - ay) - (by - ay) * (x - ax)
            if (abs(cross) <= eps * max(1.0, math.hypot(bx - ax, by - ay))
                    and min(ax, bx) - eps <= x <= max(ax, bx) + eps
                    and min(ay, by) - eps <= y <= max(ay, by) + eps):
                return True
            if (ay > y) != (by > y):
                xi = ax + (y - ay) * (bx - ax) / (by - ay)
                if x < xi:
                    inside = not inside
        return inside

    def to_list(self):
        return self.vertices.tolist()


def road_point(m: Measurement, homography=None, setup_to_road=None, heading=None,
               optical_axis=0.0):
    """Road-frame (x, y) of a measurement."""
    d = m.detection
    if m.sensor == CAMERA:
        if homography is None:
            raise ValueError("camera measurements need a homography")
        p = apply_homography(homography, footprint_point(d.box, heading, optical_axis))
        return p.x, p.y
    if setup_to_road is None:
        return d.x, d.y
    x, y = setup_to_road.apply((d.x, d.y))
    return float(x), float(y)


def filter_roi(measurements, roi: RegionOfInterest, homography=None,
               setup_to_road=None):
    """Keep measurements whose Road-frame point lies in ``roi`` (order kept)."""
    return [m for m in measurements
            if roi.contains(*road_point(m, homography, setup_to_road))]


# --------------------------------------------------------------------------
# merging


def as_measurements(detections, sensor, sensor_id=""):
    return [d if isinstance(d, Measurement) else Measurement(d.timestamp, sensor, d, sensor_id)
            for d in detections]


def merge_streams(cam, radar):
    """Merge two time-sorted streams; equal timestamps put radar first."""
    cam = as_measurements(cam, CAMERA, "camera0")
    radar = as_measurements(radar, RADAR, "radar0")
    order = {RADAR: 0, CAMERA: 1}
    return list(heapq.merge(radar, cam, key=lambda m: (m.timestamp, order[m.sensor])))


def batches(measurements):
    """Group a merged stream into lists sharing one timestamp."""
    out = []
    for m in measurements:
        if out and out[-1][0].timestamp == m.timestamp:
            out[-1].append(m)
        else:
            out.append([m])
    return out
