import io
import json
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trajex.exceptions import MalformedRecord, NonMonotonicTimestamps
from trajex.geometry import BoundingBox, Homography
from trajex.ingest import (
    CAMERA,
    RADAR,
    CameraDetection,
    RadarDetection,
    RegionOfInterest,
    batches,
    dumps_log,
    filter_roi,
    merge_streams,
    parse_camera_log,
    parse_radar_log,
)
from trajex.simulator import ScenarioConfig, simulate


def cam_line(t, conf=0.9, cls="car"):
    return json.dumps({"t": t, "box": [10, 10, 20, 30], "class": cls, "conf": conf,
                       "width": 1.8})


def radar(t, x=50.0, y=0.0):
    return RadarDetection(t, x, y, -20.0, 0.0, 4.5, 1.8, 1.5)


def camera(t):
    return CameraDetection(t, BoundingBox(10, 10, 20, 30), "car", 0.9, None)


def test_empty_logs():
    assert parse_camera_log(io.StringIO("")) == []
    assert parse_radar_log([]) == []


def test_three_camera_lines_sorted():
    dets = parse_camera_log([cam_line(0.1), cam_line(0.2), "\n", cam_line(0.3)])
    assert [d.timestamp for d in dets] == [0.1, 0.2, 0.3]
    assert dets[0].box == BoundingBox(10, 10, 20, 30)


def test_confidence_out_of_range_is_malformed():
    with pytest.raises(MalformedRecord) as exc:
        parse_camera_log([cam_line(0.1), cam_line(0.2, conf=1.7)])
    assert exc.value.line == 2


def test_bad_class_and_bad_json_are_reported():
    errors = []
    dets = parse_camera_log([cam_line(0.1, cls="tram"), "{not json", cam_line(0.3)], errors)
    assert len(dets) == 1
    assert [e.line for e in errors] == [1, 2]


def test_negative_radar_height_is_malformed():
    rec = radar(0.0).to_record() | {"hgt": -1}
    with pytest.raises(MalformedRecord):
        parse_radar_log([json.dumps(rec)])


def test_unsorted_log_warns_and_sorts():
    with pytest.warns(NonMonotonicTimestamps):
        dets = parse_camera_log([cam_line(0.3), cam_line(0.1), cam_line(0.2)])
    assert [d.timestamp for d in dets] == [0.1, 0.2, 0.3]


def test_simulated_logs_round_trip():
    sc = simulate(ScenarioConfig(seed=4, duration=15.0))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        cam = parse_camera_log(io.StringIO(dumps_log(sc.camera)))
        rad = parse_radar_log(io.StringIO(dumps_log(sc.radar)))
    assert cam == sc.camera
    assert rad == sc.radar


lines = st.one_of(
    st.builds(cam_line, st.floats(0, 100), st.floats(-1, 2)),
    st.text(max_size=20),
)


@given(st.lists(lines, max_size=15))
def test_parsing_is_total(ls):
    ls = [l.replace("\n", " ") for l in ls]
    errors = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        dets = parse_camera_log(ls, errors)
    assert len(dets) + len(errors) == sum(1 for l in ls if l.strip())


# -- region of interest -------------------------------------------------------


def test_roi_square_keeps_inside_radar_point():
    roi = RegionOfInterest([(0, 0), (10, 0), (10, 10), (0, 10)])
    kept = filter_roi(merge_streams([], [radar(0.0, 5, 5), radar(0.0, 15, 5)]), roi)
    assert [(m.detection.x, m.detection.y) for m in kept] == [(5, 5)]
    assert roi.contains(10, 5)


def test_roi_whole_plane_and_empty_intersection():
    ms = merge_streams([], [radar(0.1 * k, 10 * k, 0) for k in range(5)])
    big = RegionOfInterest([(-1e6, -1e6), (1e6, -1e6), (1e6, 1e6), (-1e6, 1e6)])
    assert filter_roi(ms, big) == ms
    far = RegionOfInterest([(500, 500), (510, 500), (505, 510)])
    assert filter_roi(ms, far) == []


def test_roi_camera_uses_homography():
    h = Homography(np.diag([2.0, 2.0, 1.0]))
    roi = RegionOfInterest([(0, 0), (100, 0), (100, 100), (0, 100)])
    ms = merge_streams([camera(0.0)], [])
    assert filter_roi(ms, roi, h) == ms  # footprint (15, 30) -> (30, 60)


def test_roi_rejects_bad_polygons():
    with pytest.raises(ValueError):
        RegionOfInterest([(0, 0), (1, 1)])
    with pytest.raises(ValueError):
        RegionOfInterest([(0, 0), (1, 1), (2, 2)])
    with pytest.raises(ValueError):
        RegionOfInterest([(0, 0), (1, 1), (1, 0), (0, 1)])


@given(st.lists(st.tuples(st.floats(-20, 20), st.floats(-20, 20)), max_size=20))
def test_filter_roi_idempotent(pts):
    roi = RegionOfInterest([(0, 0), (10, -3), (12, 8), (1, 6)])
    ms = merge_streams([], [radar(0.0, x, y) for x, y in pts])
    once = filter_roi(ms, roi)
    assert filter_roi(once, roi) == once


# -- merging ----------------------------------------------------------------


def test_merge_with_one_empty_input():
    cams = [camera(0.1), camera(0.2)]
    assert [m.detection for m in merge_streams(cams, [])] == cams


def test_merge_orders_by_time():
    ms = merge_streams([camera(0.1), camera(0.3)], [radar(0.2)])
    assert [m.timestamp for m in ms] == [0.1, 0.2, 0.3]


def test_merge_tie_puts_radar_first():
    ms = merge_streams([camera(1.0)], [radar(1.0)])
    assert [m.sensor for m in ms] == [RADAR, CAMERA]
    assert len(batches(ms)) == 1


sorted_times = st.lists(st.floats(0, 10), max_size=20).map(sorted)


@given(sorted_times, sorted_times)
def test_merge_preserves_elements_and_order(tc, tr):
    cams = [camera(t) for t in tc]
    rads = [radar(t) for t in tr]
    ms = merge_streams(cams, rads)
    assert len(ms) == len(cams) + len(rads)
    ts = [m.timestamp for m in ms]
    assert ts == sorted(ts)
    assert sorted(map(id, (m.detection for m in ms))) == sorted(map(id, cams + rads))
