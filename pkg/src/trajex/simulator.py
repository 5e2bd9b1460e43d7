"""Synthetic highway scenarios: ground truth plus camera and radar logs.

The simulator stands in for the real sensors and the dGPS reference
vehicle. It writes exactly the log formats :mod:`trajex.ingest` reads.

Randomness comes from numpy's counter-based ``Philox`` generator, one
independent stream per purpose (traffic, camera, radar) derived from the
scenario seed, so a seed fully determines every output byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .exceptions import ConfigError, InvalidLaneGeometry
from .geometry import (
    BoundingBox,
    Calibration,
    FrameTransform,
    Homography,
    TransformRegistry,
    correspondences_to_dict,
    side_shift,
)
from .ingest import CLASSES, CameraDetection, RadarDetection
from .postprocess import SmoothedTrajectory, dumps_trajectories
from .tracker import config_digest

RNG_ALGORITHM = "philox4x64-10"
GT_RATE = 100.0

# length, width, height in meters
CLASS_DIMENSIONS = {
    "car": (4.5, 1.8, 1.5),
    "truck": (12.0, 2.5, 3.5),
    "bus": (12.0, 2.55, 3.2),
    "motorcycle": (2.2, 0.8, 1.4),
}


def _merge_lane(x_start=260.0, x_end=10.0, y_ramp=-12.5, y_join=-5.75,
                x_begin=190.0, x_done=90.0, step=0.5):
    xs = np.arange(x_start, x_end - 1e-9, -step)
    if xs[-1] != x_end:
        xs = np.append(xs, x_end)
    frac = np.clip((x_begin - xs) / (x_begin - x_done), 0.0, 1.0)
    # quintic smoothstep: curvature vanishes where the ramp meets straight road
    ys = y_ramp + (y_join - y_ramp) * frac ** 3 * (10.0 - 15.0 * frac + 6.0 * frac ** 2)
    return [[float(x), float(y)] for x, y in zip(xs, ys)]


def default_lanes():
    return [
        {"name": "through_1", "points": [[260.0, -2.0], [10.0, -2.0]], "rate": 8.0},
        {"name": "through_2", "points": [[260.0, -5.75], [10.0, -5.75]], "rate": 8.0},
        {"name": "merge", "points": _merge_lane(), "rate": 4.0},
    ]


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera at the Setup origin looking along +x, pitched down."""

    focal_px: float = 4000.0
    mount_height: float = 12.0
    pitch_deg: float = 11.5
    image_width: int = 1920
    image_height: int = 1080

    def setup_to_image_matrix(self):
        p = math.radians(self.pitch_deg)
        k = np.array([[self.focal_px, 0.0, self.image_width / 2.0],
                      [0.0, self.focal_px, self.image_height / 2.0],
                      [0.0, 0.0, 1.0]])
        hc = self.mount_height
        rt = np.array([[0.0, -1.0, 0.0],
                       [-math.sin(p), 0.0, hc * math.cos(p)],
                       [math.cos(p), 0.0, hc * math.sin(p)]])
        return k @ rt


def _similarity_matrix(t: FrameTransform):
    m = np.eye(3)
    m[:2, :2] = t.matrix
    m[:2, 2] = t.translation
    return m


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    duration: float = 60.0
    lanes: tuple = field(default_factory=lambda: tuple(default_lanes()))
    vehicles: tuple = ()
    class_mix: tuple = (("car", 0.8), ("truck", 0.1), ("bus", 0.05), ("motorcycle", 0.05))
    speed_range: tuple = (20.0, 28.0)
    speed_limits: tuple = (8.0, 38.0)
    accel_range: tuple = (-1.5, 1.5)
    segment_duration_range: tuple = (2.0, 5.0)
    min_headway: float = 2.0
    min_gap: float = 12.0
    camera_rate: float = 30.0
    radar_rate: float = 15.0
    radar_phase: float = 0.011
    camera: CameraModel = field(default_factory=CameraModel)
    camera_sigma_u: float = 2.0
    camera_sigma_v: float = 2.0
    camera_fn_prob: float = 0.05
    camera_fp_rate: float = 0.1
    camera_width_sigma: float = 0.1
    camera_misclass_prob: float = 0.02
    confidence_mean: float = 0.91
    confidence_concentration: float = 20.0
    fp_confidence_mean: float = 0.5
    camera_appear: float = 135.0
    camera_disappear: float = 35.0
    side_compensation: float = 0.5
    side_threshold_deg: float = 10.0
    radar_sigma_x: float = 0.25
    radar_sigma_y: float = 0.4
    radar_sigma_v: float = 0.15
    radar_dim_sigma: tuple = (0.3, 0.1, 0.1)
    radar_max_range: float = 200.0
    radar_fn_prob: float = 0.0
    radar_offset_x: tuple = ()
    clock_offset: float = 0.0
    forced_dropout: float = 0.0
    road_to_setup: tuple = (0.01, 2.0, -1.0)
    setup_to_map: tuple = (0.35, 1000.0, 2000.0)

    def __post_init__(self):
        positive = ("duration", "camera_rate", "radar_rate")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(name, "must be > 0")
        nonneg = ("camera_sigma_u", "camera_sigma_v", "camera_width_sigma",
                  "radar_sigma_x", "radar_sigma_y", "radar_sigma_v",
                  "camera_fp_rate", "radar_max_range", "forced_dropout",
                  "min_headway", "min_gap")
        for name in nonneg:
            if not getattr(self, name) >= 0:
                raise ConfigError(name, "must be >= 0")
        for name in ("camera_fn_prob", "radar_fn_prob", "camera_misclass_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(name, "must lie in [0, 1]")
        for name in ("confidence_mean", "fp_confidence_mean"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigError(name, "must lie in (0, 1)")
        if not self.camera_disappear < self.camera_appear:
            raise ConfigError("camera_disappear", "must be below camera_appear")
        if any(s < 0 for s in self.radar_dim_sigma) or len(self.radar_dim_sigma) != 3:
            raise ConfigError("radar_dim_sigma", "expected 3 non-negative values")
        lo, hi = self.speed_range
        if not 0 < lo <= hi:
            raise ConfigError("speed_range", "expected 0 < low <= high")
        for name, cls in self.class_mix:
            if name not in CLASSES:
                raise ConfigError("class_mix", f"unknown class {name!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed", "must be an integer")
        for i, lane in enumerate(self.lanes):
            if "points" not in lane:
                raise ConfigError(f"lanes[{i}].points", "missing")
            if lane.get("rate", 0.0) < 0:
                raise ConfigError(f"lanes[{i}].rate", "must be >= 0")

    # -- JSON -------------------------------------------------------------

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("<root>", "scenario config must be a JSON object")
        names = {f.name: f for f in fields(cls)}
        kw = {}
        for key, val in doc.items():
            if key not in names:
                raise ConfigError(key, "unknown scenario field")
            if key == "camera":
                if not isinstance(val, dict):
                    raise ConfigError("camera", "must be an object")
                cam_names = {f.name for f in fields(CameraModel)}
                bad = set(val) - cam_names
                if bad:
                    raise ConfigError(f"camera.{sorted(bad)[0]}", "unknown camera field")
                kw[key] = CameraModel(**{k: _num(v, f"camera.{k}") for k, v in val.items()})
            elif key == "lanes":
                if not isinstance(val, list):
                    raise ConfigError("lanes", "must be a list")
                kw[key] = tuple(_lane(v, i) for i, v in enumerate(val))
            elif key == "vehicles":
                if not isinstance(val, list):
                    raise ConfigError("vehicles", "must be a list")
                kw[key] = tuple(dict(v) for v in val)
            elif key == "class_mix":
                if not isinstance(val, dict):
                    raise ConfigError("class_mix", "must map class -> weight")
                kw[key] = tuple((k, _num(v, f"class_mix.{k}")) for k, v in val.items())
            elif key == "radar_offset_x":
                kw[key] = tuple(tuple(_num(x, key) for x in pair) for pair in val)
            elif key in ("speed_range", "speed_limits", "accel_range",
                         "segment_duration_range", "radar_dim_sigma",
                         "road_to_setup", "setup_to_map"):
                if not isinstance(val, list):
                    raise ConfigError(key, "must be a list of numbers")
                kw[key] = tuple(_num(x, key) for x in val)
            elif key == "seed":
                if isinstance(val, bool) or not isinstance(val, int):
                    raise ConfigError("seed", "must be an integer")
                kw[key] = val
            else:
                kw[key] = _num(val, key)
        return cls(**kw)

    def to_dict(self):
        d = asdict(self)
        d["lanes"] = [dict(l) for l in self.lanes]
        d["vehicles"] = [dict(v) for v in self.vehicles]
        d["class_mix"] = dict(self.class_mix)
        d["radar_offset_x"] = [list(p) for p in self.radar_offset_x]
        for key in ("speed_range", "speed_limits", "accel_range",
                    "segment_duration_range", "radar_dim_sigma",
                    "road_to_setup", "setup_to_map"):
            d[key] = list(d[key])
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
        return config_digest({"rng": RNG_ALGORITHM, **self.to_dict()})

    def with_(self, **kw):
        return replace(self, **kw)

    def noise_free(self):
        """Copy with every noise, dropout, clutter and clock offset removed."""
        return replace(self, camera_sigma_u=0.0, camera_sigma_v=0.0,
                       camera_fn_prob=0.0, camera_fp_rate=0.0,
                       camera_width_sigma=0.0, camera_misclass_prob=0.0,
                       radar_sigma_x=0.0, radar_sigma_y=0.0, radar_sigma_v=0.0,
                       radar_dim_sigma=(0.0, 0.0, 0.0), radar_fn_prob=0.0,
                       radar_offset_x=(), clock_offset=0.0, forced_dropout=0.0)

    # -- derived geometry --------------------------------------------------

    @property
    def road_to_setup_transform(self):
        rot, tx, ty = self.road_to_setup
        return FrameTransform(rot, (tx, ty), 1.0, "Road", "Setup")

    @property
    def setup_to_map_transform(self):
        rot, tx, ty = self.setup_to_map
        return FrameTransform(rot, (tx, ty), 1.0, "Setup", "Map")

    def setup_to_image(self):
        return self.camera.setup_to_image_matrix()

    def homography(self) -> Homography:
        """Image -> Road homography implied by the camera model."""
        s2r = _similarity_matrix(self.road_to_setup_transform.inverse())
        return Homography(s2r @ np.linalg.inv(self.setup_to_image()))

    @property
    def optical_axis_road(self):
        return -self.road_to_setup_transform.rotation

    def calibration_dict(self):
        """Calibration document: homography, correspondences and frames."""
        h = self.homography()
        road_pts = np.array([[x, y] for y in (0.0, -8.0) for x in (40.0, 70.0, 100.0, 130.0)])
        setup_pts = self.road_to_setup_transform.apply(road_pts)
        img = _project(self.setup_to_image(), setup_pts)
        doc = correspondences_to_dict(img, road_pts, "Image", "Road")
        doc["h"] = h.h.tolist()
        doc["optical_axis"] = self.optical_axis_road
        doc["transforms"] = [self.road_to_setup_transform.to_dict(),
                             self.setup_to_map_transform.to_dict()]
        return doc

    def calibration(self):
        return Calibration(self.homography(),
                           TransformRegistry([self.road_to_setup_transform,
                                              self.setup_to_map_transform]),
                           self.optical_axis_road)


def _num(val, name):
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(name, "must be a number")
    return val


def _lane(doc, i):
    if not isinstance(doc, dict):
        raise ConfigError(f"lanes[{i}]", "must be an object")
    out = {"name": str(doc.get("name", f"lane{i}")), "points": doc.get("points"),
           "rate": _num(doc.get("rate", 0.0), f"lanes[{i}].rate")}
    if not isinstance(out["points"], list):
        raise ConfigError(f"lanes[{i}].points", "must be a list of [x, y]")
    return out


def _project(m, pts):
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    hom = np.column_stack([pts, np.ones(len(pts))]) @ m.T
    return hom[:, :2] / hom[:, 2:3]


# --------------------------------------------------------------------------
# lane geometry and kinematics


class Lane:
    def __init__(self, points, name="lane"):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise InvalidLaneGeometry(f"lane {name!r} needs >= 2 points")
        if not np.all(np.isfinite(pts)):
            raise InvalidLaneGeometry(f"lane {name!r} has non-finite points")
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= 1e-9):
            raise InvalidLaneGeometry(f"lane {name!r} has zero-length segments")
        self.name = name
        self.points = pts
        self.tangents = seg / seg_len[:, None]
        self.arc = np.concatenate([[0.0], np.cumsum(seg_len)])
        self.length = float(self.arc[-1])
        turns = np.abs(np.diff(np.unwrap(np.arctan2(seg[:, 1], seg[:, 0]))))
        self.max_turn = float(turns.max()) if len(turns) else 0.0

    def locate(self, s):
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.length)
        k = np.clip(np.searchsorted(self.arc, s, side="right") - 1, 0, len(self.tangents) - 1)
        pos = self.points[k] + (s - self.arc[k])[..., None] * self.tangents[k]
        return pos, self.tangents[k]


@dataclass
class VehicleMotion:
    """Arc-length motion along a lane with piecewise-constant acceleration."""

    lane: Lane
    t0: float
    v0: float
    segments: tuple  # ((duration, accel), ...)

    def __post_init__(self):
        # knots: times, s, v at the start of each segment
        t, s, v = self.t0, 0.0, self.v0
        kt, ks, kv, ka = [], [], [], []
        for dur, acc in self.segments:
            kt.append(t), ks.append(s), kv.append(v), ka.append(acc)
            s += v * dur + 0.5 * acc * dur * dur
            v += acc * dur
            t += dur
        kt.append(t), ks.append(s), kv.append(v), ka.append(0.0)
        self._kt, self._ks = np.array(kt), np.array(ks)
        self._kv, self._ka = np.array(kv), np.array(ka)
        if v <= 0:
            raise InvalidLaneGeometry("vehicle speed profile stops the vehicle")
        if s >= self.lane.length:
            # lane end reached inside the segments
            self.t_end = self._time_at(self.lane.length)
        else:
            self.t_end = t + (self.lane.length - s) / v

    def _time_at(self, target):
        k = int(np.searchsorted(self._ks, target, side="right")) - 1
        s0, v0, a = self._ks[k], self._kv[k], self._ka[k]
        rem = target - s0
        if abs(a) < 1e-12:
            return float(self._kt[k] + rem / v0)
        disc = max(v0 * v0 + 2.0 * a * rem, 0.0)
        return float(self._kt[k] + (math.sqrt(disc) - v0) / a)

    def kinematics(self, t):
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(self._kt, t, side="right") - 1, 0, len(self._kt) - 1)
        dt = t - self._kt[k]
        a = self._ka[k]
        return self._ks[k] + self._kv[k] * dt + 0.5 * a * dt * dt, self._kv[k] + a * dt, a

    def state(self, t):
        """``(n, 4)`` Setup-frame ``x, y, vx, vy`` at times ``t``."""
        s, v, _ = self.kinematics(t)
        pos, tan = self.lane.locate(s)
        vel = tan * np.asarray(v)[..., None]
        return np.concatenate([pos, vel], axis=-1)

    def active(self, t):
        return self.t0 <= t <= self.t_end


@dataclass(eq=False)
class GroundTruthTrajectory:
    vehicle_id: int
    cls: str
    dimensions: tuple
    samples: np.ndarray
    motion: VehicleMotion = field(repr=False)
    lane_index: int = 0
    dropout: tuple | None = None

    def as_trajectory(self):
        return SmoothedTrajectory(self.vehicle_id, self.cls, self.dimensions,
                                  self.samples, "Setup")


def _grid(t):
    return round(t * GT_RATE) / GT_RATE


def _random_segments(rng, cfg, v0, total):
    lo, hi = cfg.speed_limits
    segs, v, elapsed = [], v0, 0.0
    while elapsed < total:
        dur = _grid(rng.uniform(*cfg.segment_duration_range))
        acc = float(rng.uniform(*cfg.accel_range))
        if not lo <= v + acc * dur <= hi:
            acc = -acc
        segs.append((dur, acc))
        v += acc * dur
        elapsed += dur
    return tuple(segs)


def _pick_class(rng, cfg):
    names = [c for c, _ in cfg.class_mix]
    w = np.array([p for _, p in cfg.class_mix], dtype=float)
    return names[int(rng.choice(len(names), p=w / w.sum()))]


def _conflicts(new, others, cfg):
    t_lo, t_hi = new.t0, new.t_end
    ts = np.arange(math.ceil(t_lo * 10) / 10, t_hi, 0.1)
    if len(ts) == 0:
        return False
    a = new.state(ts)
    for o in others:
        mask = (ts >= o.t0) & (ts <= o.t_end)
        if not mask.any():
            continue
        b = o.state(ts[mask])
        d = a[mask, :2] - b[:, :2]
        if np.any((np.abs(d[:, 0]) < cfg.min_gap) & (np.abs(d[:, 1]) < 2.0)):
            return True
    return False


def _rngs(seed):
    seqs = np.random.SeedSequence(seed).spawn(3)
    return [np.random.Generator(np.random.Philox(s)) for s in seqs]


def generate_ground_truth(cfg: ScenarioConfig):
    """Ground-truth trajectories at 100 Hz in the Setup frame.

    Explicit ``cfg.vehicles`` are used as given; otherwise each lane spawns
    vehicles as a Poisson process at ``rate`` vehicles/minute, rejecting
    arrivals that would come closer than ``min_gap`` to another vehicle in
    the same lane. Only vehicles that finish their lane before ``duration``
    are generated.
    """
    rng = _rngs(cfg.seed)[0]
    lanes = [Lane(l["points"], l.get("name", f"lane{i}")) for i, l in enumerate(cfg.lanes)]
    plans = []  # (t0, lane_index, cls, motion)
    if cfg.vehicles:
        for i, v in enumerate(cfg.vehicles):
            li = int(v.get("lane", 0))
            if not 0 <= li < len(lanes):
                raise ConfigError(f"vehicles[{i}].lane", "no such lane")
            segs = tuple((_grid(float(d)), float(a)) for d, a in v.get("segments", ()))
            motion = VehicleMotion(lanes[li], _grid(float(v.get("t0", 0.0))),
                                   float(v.get("speed", 25.0)), segs)
            plans.append((motion.t0, li, v.get("class", "car"), motion))
    else:
        placed = []
        for li, (lane, spec) in enumerate(zip(lanes, cfg.lanes)):
            rate = float(spec.get("rate", 0.0)) / 60.0
            if rate <= 0:
                continue
            t = 0.0
            last_t0 = -math.inf
            while True:
                t += rng.exponential(1.0 / rate)
                if t >= cfg.duration:
                    break
                t0 = _grid(t)
                v0 = float(rng.uniform(*cfg.speed_range))
                segs = _random_segments(rng, cfg, v0, lane.length / cfg.speed_limits[0])
                cls = _pick_class(rng, cfg)
                motion = VehicleMotion(lane, t0, v0, segs)
                if motion.t_end > cfg.duration or t0 - last_t0 < cfg.min_headway:
                    continue
                if _conflicts(motion, placed, cfg):
                    continue
                placed.append(motion)
                last_t0 = t0
                plans.append((t0, li, cls, motion))
    plans.sort(key=lambda p: (p[0], p[1]))
    out = []
    for vid, (t0, li, cls, motion) in enumerate(plans, start=1):
        k0 = math.ceil(round(motion.t0 * GT_RATE, 6))
        k1 = math.floor(round(motion.t_end * GT_RATE, 6))
        ts = np.arange(k0, k1 + 1) / GT_RATE
        st = motion.state(ts)
        theta = np.arctan2(st[:, 3], st[:, 2])
        samples = np.column_stack([ts, st, theta])
        out.append(GroundTruthTrajectory(vid, cls, CLASS_DIMENSIONS[cls], samples,
                                         motion, li))
    _assign_dropouts(out, cfg, rng)
    return out


def _assign_dropouts(gts, cfg, rng):
    if cfg.forced_dropout <= 0:
        return
    for gt in gts:
        rho = np.hypot(gt.samples[:, 1], gt.samples[:, 2])
        vis = gt.samples[(rho >= cfg.camera_disappear) & (rho <= cfg.camera_appear), 0]
        if len(vis) == 0:
            continue
        lo, hi = vis[0], vis[-1] - cfg.forced_dropout
        if hi <= lo:
            continue
        start = float(rng.uniform(lo, hi))
        gt.dropout = (start, start + cfg.forced_dropout)


def _in_dropout(gt, t):
    return gt.dropout is not None and gt.dropout[0] <= t <= gt.dropout[1]


def _ticks(rate, duration, phase=0.0):
    n = int(math.floor((duration - phase) * rate)) + 1
    return phase + np.arange(n) / rate


class _Active:
    """Fast lookup of the vehicles on the road at a given time."""

    def __init__(self, gts):
        self.gts = gts
        self.t0 = np.array([g.motion.t0 for g in gts])
        self.t1 = np.array([g.motion.t_end for g in gts])

    def __call__(self, t):
        idx = np.nonzero((self.t0 <= t) & (self.t1 >= t))[0]
        return [(self.gts[i], self.gts[i].motion.state(np.array([t]))[0]) for i in idx]


def simulate_camera(gts, cfg: ScenarioConfig, homography: Homography | None = None):
    """Camera detections for every visible vehicle at every camera tick.

    Each box is built around the projected front-center point, widened by
    the side-visibility shift the tracker will remove, and scaled by
    ``1 / distance``. Pixel noise, misses, false positives and the
    confidence model follow ``cfg``.
    """
    rng = _rngs(cfg.seed)[1]
    if homography is None:
        to_image = cfg.setup_to_image()
    else:
        r2s = _similarity_matrix(cfg.road_to_setup_transform)
        to_image = np.linalg.inv(r2s @ homography.h)
    s2r = cfg.road_to_setup_transform.inverse()
    f = cfg.camera.focal_px
    wmax, hmax = cfg.camera.image_width, cfg.camera.image_height
    a_conf = cfg.confidence_mean * cfg.confidence_concentration
    b_conf = (1.0 - cfg.confidence_mean) * cfg.confidence_concentration
    thr = math.radians(cfg.side_threshold_deg)
    axis = cfg.optical_axis_road
    active = _Active(gts)
    dets = []
    for t in _ticks(cfg.camera_rate, cfg.duration):
        t = float(t)
        for gt, st in active(t):
            rho = math.hypot(st[0], st[1])
            if not cfg.camera_disappear <= rho <= cfg.camera_appear:
                continue
            if _in_dropout(gt, t):
                continue
            if cfg.camera_fn_prob > 0 and rng.random() < cfg.camera_fn_prob:
                continue
            u, v = _project(to_image, st[:2])[0]
            length, width, height = gt.dimensions
            w_px, h_px = f * width / rho, f * height / rho
            vel_road = s2r.apply_vector(st[2:4])
            hd = math.atan2(vel_road[1], vel_road[0])
            u_c = u - side_shift(w_px, hd, axis, cfg.side_compensation, thr)
            if cfg.camera_sigma_u > 0:
                u_c += rng.normal(0.0, cfg.camera_sigma_u)
            if cfg.camera_sigma_v > 0:
                v += rng.normal(0.0, cfg.camera_sigma_v)
            if not (0.0 <= u_c <= wmax and 0.0 <= v <= hmax):
                continue
            cls = gt.cls
            if cfg.camera_misclass_prob > 0 and rng.random() < cfg.camera_misclass_prob:
                others = [c for c in CLASSES if c != cls]
                cls = others[int(rng.integers(len(others)))]
            conf = float(rng.beta(a_conf, b_conf))
            west = width
            if cfg.camera_width_sigma > 0:
                west = max(0.1, width + rng.normal(0.0, cfg.camera_width_sigma))
            box = BoundingBox(u_c - w_px / 2, v - h_px, u_c + w_px / 2, v)
            dets.append(CameraDetection(t, box, cls, conf, west))
        if cfg.camera_fp_rate > 0:
            for _ in range(int(rng.poisson(cfg.camera_fp_rate / cfg.camera_rate))):
                x = rng.uniform(cfg.camera_disappear, cfg.camera_appear)
                y = rng.uniform(-15.0, 2.0)
                u, v = _project(to_image, [x, y])[0]
                rho = math.hypot(x, y)
                w_px, h_px = f * 1.8 / rho, f * 1.5 / rho
                if not (0.0 <= u <= wmax and 0.0 <= v <= hmax):
                    continue
                conf = float(rng.beta(cfg.fp_confidence_mean * 10,
                                      (1 - cfg.fp_confidence_mean) * 10))
                box = BoundingBox(u - w_px / 2, v - h_px, u + w_px / 2, v)
                dets.append(CameraDetection(t, box, CLASSES[int(rng.integers(4))], conf, None))
    return dets


def radar_offset(cfg, distance):
    """Injected systematic x offset at a radial distance (0 when unset)."""
    if not cfg.radar_offset_x:
        return 0.0
    pts = np.array(cfg.radar_offset_x, dtype=float)
    return float(np.interp(distance, pts[:, 0], pts[:, 1]))


def simulate_radar(gts, cfg: ScenarioConfig):
    """Radar object list per radar tick for vehicles within ``radar_max_range``.

    Logged timestamps are the true tick times plus ``clock_offset``.
    """
    rng = _rngs(cfg.seed)[2]
    sl, sw, sh = cfg.radar_dim_sigma
    active = _Active(gts)
    dets = []
    for t in _ticks(cfg.radar_rate, cfg.duration, cfg.radar_phase):
        t = float(t)
        for gt, st in active(t):
            rho = math.hypot(st[0], st[1])
            if rho > cfg.radar_max_range:
                continue
            if _in_dropout(gt, t):
                continue
            if cfg.radar_fn_prob > 0 and rng.random() < cfg.radar_fn_prob:
                continue
            x, y, vx, vy = (float(c) for c in st)
            if cfg.radar_sigma_x > 0:
                x += rng.normal(0.0, cfg.radar_sigma_x)
            if cfg.radar_sigma_y > 0:
                y += rng.normal(0.0, cfg.radar_sigma_y)
            if cfg.radar_sigma_v > 0:
                vx += rng.normal(0.0, cfg.radar_sigma_v)
                vy += rng.normal(0.0, cfg.radar_sigma_v)
            x += radar_offset(cfg, rho)
            length, width, height = gt.dimensions
            if sl > 0:
                length = max(0.1, length + rng.normal(0.0, sl))
            if sw > 0:
                width = max(0.1, width + rng.normal(0.0, sw))
            if sh > 0:
                height = max(0.1, height + rng.normal(0.0, sh))
            dets.append(RadarDetection(t + cfg.clock_offset, x, y, vx, vy,
                                       length, width, height))
    return dets


def dumps_ground_truth(gts):
    return dumps_trajectories([g.as_trajectory() for g in gts], "Setup",
                              id_column="vehicle_id")


@dataclass
class Scenario:
    config: ScenarioConfig
    ground_truth: list
    camera: list
    radar: list

    @property
    def calibration(self):
        return self.config.calibration()


def simulate(cfg: ScenarioConfig) -> Scenario:
    gts = generate_ground_truth(cfg)
    return Scenario(cfg, gts, simulate_camera(gts, cfg), simulate_radar(gts, cfg))


def reference_runs(n=10, seed=2020, **overrides):
    """Single-vehicle scenarios mirroring an instrumented test drive.

    Roughly 70 % of the runs use the merge lane, the rest the through lanes;
    every run accelerates and brakes. Returns a list of
    :class:`ScenarioConfig`.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    n_merge = int(round(0.7 * n))
    out = []
    for i in range(n):
        lane = 2 if i < n_merge else int(rng.integers(0, 2))
        v0 = float(rng.uniform(22.0, 27.0))
        segs = []
        for _ in range(3):
            a = float(rng.uniform(0.8, 1.8))
            segs.append([round(float(rng.uniform(2.0, 3.5)), 2), a])
            segs.append([round(float(rng.uniform(2.0, 3.5)), 2), -a])
        vehicle = {"lane": lane, "t0": 0.5, "speed": v0, "class": "car", "segments": segs}
        kw = {"camera_fp_rate": 0.0, "duration": 18.0, **overrides}
        cfg = ScenarioConfig(seed=seed * 1000 + i, vehicles=(vehicle,), **kw)
        out.append(cfg)
    return out
