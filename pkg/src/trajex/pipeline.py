"""End-to-end extraction: detections in, smoothed trajectories out."""

from __future__ import annotations

from sklearn.base import BaseEstimator

from .exceptions import TooShort
from .geometry import Calibration
from .ingest import filter_roi, merge_streams
from .postprocess import rts_smooth
from .tracker import Tracker, TrackerConfig, config_digest

MODES = ("camera", "radar", "fused")


class TrajectoryExtractor(BaseEstimator):
    """Track, smooth and export trajectories from camera and radar logs.

    Parameters
    ----------
    config : TrackerConfig or dict, optional
        Tracker configuration; a dict is parsed with
        :meth:`TrackerConfig.from_dict`.
    mode : {"fused", "camera", "radar"}
        Which sensors feed the tracker. The unused log is ignored.
    calibration : Calibration
        Homography and frame transforms. Needed whenever camera detections
        are used; without a ``Road -> Setup`` transform the two frames are
        taken as identical.
    output_frame : str
        Frame of :attr:`trajectories_`.
    roi : RegionOfInterest, optional
        Road-frame polygon; detections outside are dropped before tracking.

    Attributes
    ----------
    trajectories_ : list of SmoothedTrajectory
    tracks_ : list of Track
        Finished tracks that passed the length filter.
    discarded_ : list of Track
    config_digest_ : str
    """

    def __init__(self, config=None, mode="fused", calibration=None,
                 output_frame="Setup", roi=None):
        self.config = config
        self.mode = mode
        self.calibration = calibration
        self.output_frame = output_frame
        self.roi = roi

    def _tracker_config(self):
        if isinstance(self.config, TrackerConfig):
            return self.config
        return TrackerConfig.from_dict(self.config)

    def _road_to_setup(self, cal):
        if cal is None or "Setup" not in cal.transforms.frames:
            return None
        return cal.road_to("Setup")

    def fit(self, camera=(), radar=()):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        cfg = self._tracker_config()
        cal: Calibration | None = self.calibration
        camera = list(camera) if self.mode != "radar" else []
        radar = list(radar) if self.mode != "camera" else []
        if camera and cal is None:
            raise ValueError("camera detections need a calibration")
        r2s = self._road_to_setup(cal)
        stream = merge_streams(camera, radar)
        if self.roi is not None:
            stream = filter_roi(stream, self.roi, cal.homography if cal else None,
                                r2s.inverse() if r2s else None)
        tracker = Tracker(cfg, cal.homography if cal else None, r2s,
                          cal.optical_axis if cal else 0.0)
        tracker.run(stream)
        kept = tracker.finalize()
        trajs, tracks = [], []
        for tr in kept:
            try:
                trajs.append(rts_smooth(tr, cfg))
                tracks.append(tr)
            except TooShort:
                tracker.discarded.append(tr)
        if self.output_frame != "Road":
            if cal is None and self.output_frame == "Setup":
                trajs = [_relabel(t, "Setup") for t in trajs]
            else:
                if cal is None:
                    raise ValueError("output frame conversion needs a calibration")
                tf = cal.transforms.get("Road", self.output_frame) \
                    if r2s is not None or self.output_frame not in ("Setup",) \
                    else None
                trajs = [t.to_frame(tf) if tf is not None else _relabel(t, "Setup")
                         for t in trajs]
        self.tracks_ = tracks
        self.discarded_ = sorted(tracker.discarded, key=lambda t: t.id)
        self.trajectories_ = trajs
        self.n_measurements_ = len(stream)
        self.config_digest_ = config_digest({"tracker": cfg.to_dict(), "mode": self.mode})
        return self

    def extract(self, camera=(), radar=()):
        """Fit and return :attr:`trajectories_`."""
        return self.fit(camera, radar).trajectories_


def _relabel(traj, frame):
    from dataclasses import replace

    return replace(traj, frame=frame)
