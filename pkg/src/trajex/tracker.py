"""Hybrid IoU / Kalman multi-object tracker for camera and radar detections.

Every track carries a constant-velocity Kalman filter over the Road-frame
state ``(x, y, vx, vy)`` plus the last camera box. Camera detections are
matched by image IoU *or* Road-frame distance, radar detections by
Road-frame distance alone. Unmatched tracks coast for ``keep_alive``
seconds before they are finished.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import NamedTuple

import numpy as np

from .exceptions import ConfigError, NumericalBreakdown, TimestampRegression
from .geometry import (
    BoundingBox,
    FrameTransform,
    Homography,
    apply_homography,
    footprint_point,
    iou,
    side_shift,
)
from .ingest import CAMERA, RADAR, CameraDetection, Measurement, RadarDetection

H_POS = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
H_FULL = np.eye(4)


@dataclass(frozen=True)
class TrackerConfig:
    keep_alive: float = 0.5
    iou_threshold: float = 0.3
    road_gate: float = 2.5
    # camera vs. radar-only track: first contact happens at the far edge of
    # the camera view, where the footprint is least accurate
    first_contact_gate: float = 5.0
    process_noise_intensity: float = 0.5
    r_cam: tuple = (1.0 ** 2, 0.15 ** 2)
    r_radar: tuple = (0.3 ** 2, 0.5 ** 2, 0.2 ** 2, 0.3 ** 2)
    init_pos_var: float = 1.0
    init_vel_var_camera: float = 100.0
    init_vel_var_radar: float = 1.0
    min_track_duration: float = 1.0
    min_track_detections: int = 10
    side_compensation: float = 0.5
    side_threshold: float = math.radians(10.0)
    heading_speed_floor: float = 0.5
    trim_min_count: int = 5

    def __post_init__(self):
        object.__setattr__(self, "r_cam", tuple(float(v) for v in self.r_cam))
        object.__setattr__(self, "r_radar", tuple(float(v) for v in self.r_radar))
        if len(self.r_cam) != 2:
            raise ConfigError("R_cam", "expected 2 variances")
        if len(self.r_radar) != 4:
            raise ConfigError("R_radar", "expected 4 variances")
        for name in ("process_noise_intensity", "init_pos_var",
                     "init_vel_var_camera", "init_vel_var_radar"):
            if not getattr(self, name) > 0.0:
                raise ConfigError(name, "must be > 0")
        if any(not v > 0.0 for v in self.r_cam):
            raise ConfigError("R_cam", "variances must be > 0")
        if any(not v > 0.0 for v in self.r_radar):
            raise ConfigError("R_radar", "variances must be > 0")
        if not self.keep_alive > 0.0:
            raise ConfigError("keep_alive", "must be > 0")
        if not 0.0 < self.iou_threshold < 1.0:
            raise ConfigError("iou_threshold", "must lie in (0, 1)")
        if not self.road_gate > 0.0:
            raise ConfigError("road_gate", "must be > 0")
        if not self.first_contact_gate >= self.road_gate:
            raise ConfigError("first_contact_gate", "must be >= road_gate")
        if self.min_track_duration < 0 or self.min_track_detections < 0:
            raise ConfigError("min_track_duration", "must be >= 0")
        if self.trim_min_count < 2:
            raise ConfigError("trim_min_count", "must be >= 2")

    # JSON keys differ from attribute names where the document groups values
    @classmethod
    def from_dict(cls, doc):
        if doc is None:
            return cls()
        if not isinstance(doc, dict):
            raise ConfigError("<root>", "tracker config must be a JSON object")
        doc = dict(doc)
        kw = {}
        if "R_cam" in doc:
            kw["r_cam"] = _float_list(doc.pop("R_cam"), "R_cam")
        if "R_radar" in doc:
            kw["r_radar"] = _float_list(doc.pop("R_radar"), "R_radar")
        if "init_vel_var" in doc:
            ivv = doc.pop("init_vel_var")
            if isinstance(ivv, dict):
                unknown = set(ivv) - {"camera", "radar"}
                if unknown:
                    raise ConfigError("init_vel_var", f"unknown keys {sorted(unknown)}")
                if "camera" in ivv:
                    kw["init_vel_var_camera"] = _float(ivv["camera"], "init_vel_var.camera")
                if "radar" in ivv:
                    kw["init_vel_var_radar"] = _float(ivv["radar"], "init_vel_var.radar")
            else:
                kw["init_vel_var_camera"] = _float(ivv, "init_vel_var")
        if "side_threshold_deg" in doc:
            kw["side_threshold"] = math.radians(
                _float(doc.pop("side_threshold_deg"), "side_threshold_deg"))
        names = {f.name for f in fields(cls)} - {"r_cam", "r_radar", "side_threshold"}
        for key, val in doc.items():
            if key not in names:
                raise ConfigError(key, "unknown tracker config field")
            if key in ("min_track_detections", "trim_min_count"):
                if isinstance(val, bool) or not isinstance(val, int):
                    raise ConfigError(key, "must be an integer")
                kw[key] = val
            else:
                kw[key] = _float(val, key)
        return cls(**kw)

    def to_dict(self):
        d = asdict(self)
        d["R_cam"] = list(d.pop("r_cam"))
        d["R_radar"] = list(d.pop("r_radar"))
        d["init_vel_var"] = {"camera": d.pop("init_vel_var_camera"),
                             "radar": d.pop("init_vel_var_radar")}
        d["side_threshold_deg"] = math.degrees(d.pop("side_threshold"))
        return d

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError("<root>", f"invalid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def digest(self):
        return config_digest(self.to_dict())


def config_digest(doc):
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _float(val, name):
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(name, "must be a number")
    return float(val)


def _float_list(val, name):
    if not isinstance(val, list):
        raise ConfigError(name, "must be a list of numbers")
    return tuple(_float(v, name) for v in val)


# --------------------------------------------------------------------------
# Kalman filter


@dataclass(frozen=True, eq=False)
class KalmanState:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def position(self):
        return self.mean[:2]

    @property
    def velocity(self):
        return self.mean[2:]


def transition(dt):
    return np.array([[1.0, 0.0, dt, 0.0],
                     [0.0, 1.0, 0.0, dt],
                     [0.0, 0.0, 1.0, 0.0],
                     [0.0, 0.0, 0.0, 1.0]])


def process_noise(dt, q):
    """Discretized continuous white-noise-acceleration covariance."""
    a, b, c = q * dt ** 3 / 3.0, q * dt ** 2 / 2.0, q * dt
    return np.array([[a, 0.0, b, 0.0],
                     [0.0, a, 0.0, b],
                     [b, 0.0, c, 0.0],
                     [0.0, b, 0.0, c]])


def _q(cfg):
    return cfg.process_noise_intensity if isinstance(cfg, TrackerConfig) else float(cfg)


def predict(s: KalmanState, dt: float, cfg) -> KalmanState:
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if dt == 0:
        return s
    f = transition(dt)
    cov = f @ s.cov @ f.T + process_noise(dt, _q(cfg))
    return KalmanState(f @ s.mean, 0.5 * (cov + cov.T))


def kalman_update(s: KalmanState, z, h, r) -> KalmanState:
    """Joseph-form measurement update."""
    p = s.cov
    ph = p @ h.T
    innov_cov = h @ ph + r
    try:
        gain = np.linalg.solve(innov_cov, ph.T).T
    except np.linalg.LinAlgError as exc:
        raise NumericalBreakdown("innovation covariance is singular") from exc
    if not np.all(np.isfinite(gain)):
        raise NumericalBreakdown("non-finite Kalman gain")
    mean = s.mean + gain @ (np.asarray(z, dtype=float) - h @ s.mean)
    a = np.eye(len(mean)) - gain @ h
    cov = a @ p @ a.T + gain @ r @ gain.T
    cov = 0.5 * (cov + cov.T)
    return KalmanState(mean, _ensure_pd(cov))


def _ensure_pd(cov):
    try:
        np.linalg.cholesky(cov)
        return cov
    except np.linalg.LinAlgError:
        w = np.linalg.eigvalsh(cov)
        jitter = max(-w.min(), 0.0) + 1e-12 * max(1.0, w.max())
        return cov + jitter * np.eye(len(cov))


def update_camera(s: KalmanState, z, cfg: TrackerConfig) -> KalmanState:
    """Update with a Road-frame footprint position ``z = (x, y)``."""
    return kalman_update(s, (z[0], z[1]), H_POS, np.diag(cfg.r_cam))


def radar_to_road(det: RadarDetection, setup_to_road: FrameTransform | None = None):
    """Road-frame ``(x, y, vx, vy)`` of a radar detection."""
    if setup_to_road is None:
        return np.array([det.x, det.y, det.vx, det.vy])
    pos = setup_to_road.apply((det.x, det.y))
    vel = setup_to_road.apply_vector((det.vx, det.vy))
    return np.array([pos[0], pos[1], vel[0], vel[1]])


def update_radar(s: KalmanState, z, cfg: TrackerConfig,
                 setup_to_road: FrameTransform | None = None) -> KalmanState:
    """Update with a radar detection (Setup frame) or a Road-frame 4-vector."""
    if isinstance(z, RadarDetection):
        z = radar_to_road(z, setup_to_road)
    return kalman_update(s, z, H_FULL, np.diag(cfg.r_radar))


# --------------------------------------------------------------------------
# tracks


class HistoryEntry(NamedTuple):
    """Forward-pass record of one filter step."""

    t: float
    sensors: tuple
    detections: tuple
    mean: np.ndarray
    cov: np.ndarray
    pred_mean: np.ndarray | None
    pred_cov: np.ndarray | None


DIMENSIONS = ("length", "width", "height")


@dataclass(eq=False)
class Track:
    id: int
    state: KalmanState
    last_update_time: float
    creation_time: float
    last_box: BoundingBox | None = None
    last_box_time: float = -math.inf
    history: list = field(default_factory=list)
    class_votes: dict = field(default_factory=dict)
    dimension_samples: dict = field(
        default_factory=lambda: {k: [] for k in DIMENSIONS})
    confidences: list = field(default_factory=list)
    matched_ious: list = field(default_factory=list)
    detection_times: list = field(default_factory=list)
    n_camera: int = 0
    n_radar: int = 0

    @property
    def n_detections(self):
        return self.n_camera + self.n_radar

    @property
    def duration(self):
        return self.last_update_time - self.creation_time

    def predicted_position(self, t):
        dt = t - self.last_update_time
        m = self.state.mean
        return m[0] + m[2] * dt, m[1] + m[3] * dt

    def heading(self, floor):
        vx, vy = self.state.mean[2], self.state.mean[3]
        if math.hypot(vx, vy) < floor:
            return None
        return math.atan2(vy, vx)

    def max_detection_gap(self):
        t = self.detection_times
        return max((b - a for a, b in zip(t, t[1:])), default=0.0)


class EventKind(enum.Enum):
    CREATED = "Created"
    UPDATED = "Updated"
    COASTED = "Coasted"
    FINISHED = "Finished"


class TrackEvent(NamedTuple):
    kind: EventKind
    track_id: int
    timestamp: float


class Assignment(NamedTuple):
    pairs: list
    unassigned_detections: list
    unassigned_tracks: list


def _assign_greedy(candidates, n_dets, n_tracks):
    """Pick candidates ``(key, det, track)`` in sorted order, one-to-one."""
    used_d, used_t, pairs = set(), set(), []
    for _, i, j in sorted(candidates):
        if i in used_d or j in used_t:
            continue
        used_d.add(i)
        used_t.add(j)
        pairs.append((i, j))
    pairs.sort()
    return Assignment(pairs,
                      [i for i in range(n_dets) if i not in used_d],
                      [j for j in range(n_tracks) if j not in used_t])


def match_radar(det_xy, track_xy, cfg: TrackerConfig) -> Assignment:
    """Greedy globally-nearest-first assignment inside ``road_gate``.

    ``det_xy`` and ``track_xy`` are Road-frame positions of the detections
    and of the tracks predicted to the detection time.
    """
    det_xy = np.asarray(det_xy, dtype=float).reshape(-1, 2)
    track_xy = np.asarray(track_xy, dtype=float).reshape(-1, 2)
    cands = []
    if len(det_xy) and len(track_xy):
        dist = np.linalg.norm(det_xy[:, None, :] - track_xy[None, :, :], axis=2)
        for i, j in zip(*np.nonzero(dist <= cfg.road_gate)):
            cands.append(((dist[i, j],), int(i), int(j)))
    return _assign_greedy(cands, len(det_xy), len(track_xy))


def match_camera(boxes, det_xy, last_boxes, track_xy, cfg: TrackerConfig, gates=None):
    """Hybrid IoU / Road-distance matching of camera detections.

    ``det_xy[i][j]`` is the Road position of detection ``i`` as seen by
    track ``j`` (the footprint depends on the track's driving direction);
    a plain ``(n, 2)`` array is broadcast over all tracks. A pair is
    admissible if its IoU reaches ``iou_threshold`` or its distance is
    within ``road_gate``; tracks without a box use distance only. Pairs
    are taken greedily by higher IoU, then smaller distance. ``gates``
    overrides ``road_gate`` per track.

    Returns the :class:`Assignment` and the IoU matrix.
    """
    n, m = len(boxes), len(last_boxes)
    ious = np.zeros((n, m))
    det_xy = np.asarray(det_xy, dtype=float)
    track_xy = np.asarray(track_xy, dtype=float).reshape(-1, 2)
    gates = np.full(m, cfg.road_gate) if gates is None else np.asarray(gates, dtype=float)
    if det_xy.ndim == 2:
        det_xy = np.broadcast_to(det_xy.reshape(n, 1, 2), (n, m, 2))
    cands = []
    if n and m:
        dist = np.linalg.norm(det_xy - track_xy[None, :, :], axis=2)
        for i in range(n):
            for j in range(m):
                lb = last_boxes[j]
                if lb is not None:
                    ious[i, j] = iou(boxes[i], lb)
                ok = dist[i, j] <= gates[j]
                if lb is not None and ious[i, j] >= cfg.iou_threshold:
                    ok = True
                if ok:
                    cands.append(((-ious[i, j], dist[i, j]), i, j))
    return _assign_greedy(cands, n, m), ious


class Tracker:
    """Stateful tracker; feed time-ordered batches through :meth:`step`.

    Parameters
    ----------
    config : TrackerConfig
    homography : Homography
        Image -> Road map; required once camera detections arrive.
    road_to_setup : FrameTransform, optional
        Road -> Setup transform; identity when omitted. Radar detections
        are converted into Road before updating, and the Setup-frame
        distance weights dimension samples.
    optical_axis : float
        Camera viewing direction in the Road frame (radians).
    """

    def __init__(self, config: TrackerConfig | None = None,
                 homography: Homography | None = None,
                 road_to_setup: FrameTransform | None = None,
                 optical_axis: float = 0.0):
        self.config = config or TrackerConfig()
        self.homography = homography
        self.road_to_setup = road_to_setup
        self.setup_to_road = road_to_setup.inverse() if road_to_setup else None
        self.optical_axis = optical_axis
        self.time = -math.inf
        self.live: list[Track] = []
        self.finished: list[Track] = []
        self.discarded: list[Track] = []
        self.duplicates: list[Track] = []
        self._next_id = 1

    # -- helpers ----------------------------------------------------------

    def _setup_distance(self, x, y):
        if self.road_to_setup is not None:
            x, y = self.road_to_setup.apply((x, y))
        return math.hypot(x, y)

    def _camera_xy(self, box, heading):
        cfg = self.config
        p = footprint_point(box, heading, self.optical_axis,
                            cfg.side_compensation, cfg.side_threshold)
        q = apply_homography(self.homography, p)
        return q.x, q.y

    def _new_track(self, t, mean, cov):
        tr = Track(self._next_id, KalmanState(mean, cov), t, t)
        self._next_id += 1
        self.live.append(tr)
        return tr

    def _record(self, tr, t, sensor, det, state, prior):
        """Append (or extend, for a second update at the same time) history."""
        if tr.history and tr.history[-1].t == t:
            last = tr.history[-1]
            tr.history[-1] = last._replace(
                sensors=last.sensors + (sensor,),
                detections=last.detections + (det,),
                mean=state.mean, cov=state.cov)
        else:
            pm, pc = (prior.mean, prior.cov) if prior is not None else (None, None)
            tr.history.append(HistoryEntry(t, (sensor,), (det,), state.mean,
                                           state.cov, pm, pc))
            tr.detection_times.append(t)
        tr.state = state
        tr.last_update_time = t

    def _note_radar(self, tr, det):
        d = math.hypot(det.x, det.y)
        tr.dimension_samples["length"].append((det.length, d))
        tr.dimension_samples["width"].append((det.width, d))
        tr.dimension_samples["height"].append((det.height, d))
        tr.n_radar += 1

    def _note_camera(self, tr, det, xy):
        tr.class_votes[det.cls] = tr.class_votes.get(det.cls, 0.0) + det.confidence
        tr.confidences.append(det.confidence)
        if det.width_estimate is not None:
            tr.dimension_samples["width"].append(
                (det.width_estimate, self._setup_distance(*xy)))
        tr.last_box = det.box
        tr.last_box_time = det.timestamp
        tr.n_camera += 1

    def _predicted(self, tr, t):
        dt = t - tr.last_update_time
        return predict(tr.state, dt, self.config) if dt > 0 else None

    # -- main loop --------------------------------------------------------

    def step(self, batch):
        """Process measurements sharing one timestamp; return the events."""
        if not batch:
            return []
        t = batch[0].timestamp
        if any(m.timestamp != t for m in batch):
            raise ValueError("batch mixes timestamps")
        if t < self.time:
            raise TimestampRegression(f"batch at {t} precedes tracker time {self.time}")
        self.time = t
        cfg = self.config
        events = []

        # expire tracks whose keep-alive window has passed
        still = []
        for tr in self.live:
            if t - tr.last_update_time > cfg.keep_alive:
                self.finished.append(tr)
                events.append(TrackEvent(EventKind.FINISHED, tr.id, t))
            else:
                still.append(tr)
        self.live = still

        touched = set()
        radar = [m.detection for m in batch if m.sensor == RADAR]
        camera = [m.detection for m in batch if m.sensor == CAMERA]

        if radar:
            z = [radar_to_road(d, self.setup_to_road) for d in radar]
            tracks = list(self.live)
            asg = match_radar([v[:2] for v in z],
                              [tr.predicted_position(t) for tr in tracks], cfg)
            for i, j in asg.pairs:
                tr = tracks[j]
                prior = self._predicted(tr, t)
                state = update_radar(prior or tr.state, z[i], cfg)
                self._record(tr, t, RADAR, radar[i], state, prior)
                self._note_radar(tr, radar[i])
                touched.add(tr.id)
                events.append(TrackEvent(EventKind.UPDATED, tr.id, t))
            for i in asg.unassigned_detections:
                vv = cfg.init_vel_var_radar
                cov = np.diag([cfg.init_pos_var, cfg.init_pos_var, vv, vv])
                tr = self._new_track(t, z[i].copy(), cov)
                self._record(tr, t, RADAR, radar[i], tr.state, None)
                self._note_radar(tr, radar[i])
                touched.add(tr.id)
                events.append(TrackEvent(EventKind.CREATED, tr.id, t))

        if camera:
            if self.homography is None:
                raise ValueError("camera detections need a homography")
            tracks = list(self.live)
            headings = [tr.heading(cfg.heading_speed_floor) for tr in tracks]
            base = [self._camera_xy(d.box, None) for d in camera]
            det_xy = np.empty((len(camera), len(tracks), 2))
            for i, d in enumerate(camera):
                for j, hd in enumerate(headings):
                    shifted = hd is not None and side_shift(
                        d.box.width, hd, self.optical_axis,
                        cfg.side_compensation, cfg.side_threshold) != 0.0
                    det_xy[i, j] = self._camera_xy(d.box, hd) if shifted else base[i]
            # a box the camera has not confirmed within keep-alive is stale
            boxes = [tr.last_box if t - tr.last_box_time <= cfg.keep_alive else None
                     for tr in tracks]
            gates = [cfg.first_contact_gate if tr.n_camera == 0 else cfg.road_gate
                     for tr in tracks]
            asg, ious = match_camera([d.box for d in camera], det_xy, boxes,
                                     [tr.predicted_position(t) for tr in tracks], cfg, gates)
            for i, j in asg.pairs:
                tr = tracks[j]
                xy = det_xy[i, j]
                if boxes[j] is not None:
                    tr.matched_ious.append(float(ious[i, j]))
                prior = self._predicted(tr, t)
                state = update_camera(prior or tr.state, xy, cfg)
                self._record(tr, t, CAMERA, camera[i], state, prior)
                self._note_camera(tr, camera[i], xy)
                if tr.id not in touched:
                    events.append(TrackEvent(EventKind.UPDATED, tr.id, t))
                touched.add(tr.id)
            for i in asg.unassigned_detections:
                x, y = base[i]
                vv = cfg.init_vel_var_camera
                cov = np.diag([cfg.init_pos_var, cfg.init_pos_var, vv, vv])
                tr = self._new_track(t, np.array([x, y, 0.0, 0.0]), cov)
                self._record(tr, t, CAMERA, camera[i], tr.state, None)
                self._note_camera(tr, camera[i], (x, y))
                touched.add(tr.id)
                events.append(TrackEvent(EventKind.CREATED, tr.id, t))

        events.extend(self._drop_duplicates(t, touched))
        for tr in self.live:
            if tr.id not in touched:
                events.append(TrackEvent(EventKind.COASTED, tr.id, t))
        return events

    def _drop_duplicates(self, t, touched):
        """Retire younger tracks that sit within the gate of an older one.

        Targets are assumed to stay more than the gate apart, so two tracks
        this close follow one vehicle; typically a camera false positive or
        a missed first contact started a second track next to a radar one.
        """
        if len(self.live) < 2 or not touched:
            return []
        pos = np.array([tr.predicted_position(t) for tr in self.live])
        gone = set()
        for j, tr in enumerate(self.live):
            if tr.id not in touched:
                continue
            d = np.linalg.norm(pos - pos[j], axis=1)
            for i in np.nonzero(d <= self.config.road_gate)[0]:
                a, b = self.live[i], tr
                if a is b or a.id in gone or b.id in gone:
                    continue
                gone.add(max(a.id, b.id))
        if not gone:
            return []
        self.duplicates.extend(tr for tr in self.live if tr.id in gone)
        self.live = [tr for tr in self.live if tr.id not in gone]
        touched.difference_update(gone)
        return [TrackEvent(EventKind.FINISHED, i, t) for i in sorted(gone)]

    def run(self, measurements):
        """Feed a merged, time-sorted measurement stream; return all events."""
        from .ingest import batches

        events = []
        for b in batches(measurements):
            events.extend(self.step(b))
        return events

    def finalize(self):
        """Finish all live tracks and drop the ones that are too short.

        Returns the kept tracks ordered by id; the rejected ones, including
        retired duplicates, are available as :attr:`discarded`.
        """
        cfg = self.config
        self.finished.extend(self.live)
        self.live = []
        kept, dropped = [], []
        for tr in sorted(self.finished, key=lambda tr: tr.id):
            if (tr.duration < cfg.min_track_duration
                    or tr.n_detections < cfg.min_track_detections):
                dropped.append(tr)
            else:
                kept.append(tr)
        self.finished = kept
        self.discarded = sorted(dropped + self.duplicates, key=lambda tr: tr.id)
        return kept

    def finish_events(self, t=None):
        """Finished events for the still-live tracks at the end of input."""
        t = self.time if t is None else t
        return [TrackEvent(EventKind.FINISHED, tr.id, t) for tr in self.live]
