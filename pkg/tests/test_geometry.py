import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from trajex.exceptions import (
    DegenerateConfiguration,
    PointAtInfinity,
    TooFewCorrespondences,
    UnknownFrame,
)
from trajex.geometry import (
    BoundingBox,
    Calibration,
    FrameTransform,
    Homography,
    HomographyEstimator,
    SimilarityTransformEstimator,
    TransformRegistry,
    apply_homography,
    correspondences_to_dict,
    estimate_frame_transform,
    estimate_homography,
    footprint_point,
    iou,
    side_shift,
)


def random_homography(rng):
    h = np.eye(3) + 0.3 * rng.normal(size=(3, 3))
    h[2, :2] = rng.normal(scale=1e-3, size=2)
    return Homography(h)


def project(h, pts):
    p = np.column_stack([pts, np.ones(len(pts))]) @ h.T
    return p[:, :2] / p[:, 2:]


# -- boxes ------------------------------------------------------------------


def test_box_rejects_inverted_corners():
    with pytest.raises(ValueError):
        BoundingBox(5, 0, 1, 10)
    with pytest.raises(ValueError):
        BoundingBox(0, 5, 10, 5)


def test_iou_examples():
    a = BoundingBox(0, 0, 2, 2)
    assert iou(a, a) == 1.0
    assert iou(a, BoundingBox(5, 5, 6, 6)) == 0.0
    assert iou(a, BoundingBox(1, 0, 3, 2)) == pytest.approx(2 / 6)


boxes = st.tuples(st.floats(-100, 100), st.floats(-100, 100),
                  st.floats(0.5, 50), st.floats(0.5, 50)).map(
    lambda t: BoundingBox(t[0], t[1], t[0] + t[2], t[1] + t[3]))


@given(boxes, boxes)
def test_iou_symmetric_and_bounded(a, b):
    assert iou(a, b) == pytest.approx(iou(b, a))
    assert 0.0 <= iou(a, b) <= 1.0
    assert iou(a, a) == pytest.approx(1.0)


@given(boxes, st.floats(0.1, 5.0))
def test_iou_decreases_when_boxes_move_apart(a, step):
    vals = []
    for k in range(6):
        b = BoundingBox(a.u1 + k * step, a.v1, a.u2 + k * step, a.v2)
        vals.append(iou(a, b))
    assert all(x >= y for x, y in zip(vals, vals[1:]))


def test_footprint_default_is_lower_edge_center():
    assert tuple(footprint_point(BoundingBox(10, 10, 20, 30))) == (15, 30)


def test_footprint_aligned_heading_has_no_shift():
    b = BoundingBox(10, 10, 20, 30)
    assert tuple(footprint_point(b, heading=0.3, optical_axis=0.3)) == (15, 30)


def test_footprint_shift_at_thirty_degrees():
    b = BoundingBox(10, 10, 20, 30)
    p = footprint_point(b, heading=math.radians(30), optical_axis=0.0)
    assert abs(p.u - 15) == pytest.approx(0.5 * 10 * math.sin(math.radians(30)))
    assert side_shift(10, math.radians(5)) == 0.0


# -- homography -------------------------------------------------------------


def test_homography_pure_scaling():
    src = [(0, 0), (1, 0), (0, 1), (1, 1)]
    dst = [(0, 0), (2, 0), (0, 2), (2, 2)]
    h = estimate_homography(src, dst)
    np.testing.assert_allclose(h.h, np.diag([2.0, 2.0, 1.0]), atol=1e-12)
    assert tuple(apply_homography(h, (3, 4))[:2]) == pytest.approx((6, 8))


def test_homography_identity():
    pts = [(0, 0), (3, 0), (0, 2), (5, 7), (1, 4)]
    h = estimate_homography(pts, pts)
    np.testing.assert_allclose(h.h, np.eye(3), atol=1e-12)
    assert tuple(apply_homography(Homography(np.eye(3)), (5, 7))[:2]) == (5, 7)


def test_homography_errors():
    with pytest.raises(TooFewCorrespondences):
        estimate_homography([(0, 0), (1, 0), (0, 1)], [(0, 0), (1, 0), (0, 1)])
    with pytest.raises(DegenerateConfiguration):
        estimate_homography([(0, 0), (1, 0), (0, 0), (1, 1)], [(0, 0), (1, 0), (0, 1), (1, 1)])
    with pytest.raises(DegenerateConfiguration):
        estimate_homography([(0, 0), (1, 0), (2, 0), (1, 1)], [(0, 0), (1, 0), (2, 0), (1, 1)])
    with pytest.raises(PointAtInfinity):
        Homography(np.array([[1, 0, 0], [0, 1, 0], [1, 0, 1.0]])).apply([(-1.0, 5.0)])
    with pytest.raises(DegenerateConfiguration):
        Homography(np.zeros((3, 3)) + np.diag([1, 0, 1.0]))


def test_homography_generate_and_recover(rng):
    done = 0
    while done < 20:
        h = random_homography(rng)
        src = rng.uniform(0, 1000, size=(12, 2))
        # keep instances whose points stay well away from the horizon line
        if np.abs(src @ h.h[2, :2] + h.h[2, 2]).min() < 0.2:
            continue
        done += 1
        dst = project(h.h, src)
        est = estimate_homography(src, dst)
        err = np.abs(est.apply(src) - dst).max()
        assert err < 1e-9


@given(st.integers(0, 10_000))
def test_four_exact_points_reproduced(seed):
    rng = np.random.default_rng(seed)
    h = random_homography(rng)
    src = np.array([[0, 0], [640, 0], [640, 480], [0, 480]]) + rng.uniform(-50, 50, (4, 2))
    assume(np.abs(src @ h.h[2, :2] + h.h[2, 2]).min() >= 0.2)
    dst = project(h.h, src)
    est = estimate_homography(src, dst)
    assert np.abs(est.apply(src) - dst).max() < 1e-9


@given(st.integers(0, 10_000))
def test_homography_round_trip(seed):
    rng = np.random.default_rng(seed)
    h = random_homography(rng)
    p = rng.uniform(0, 500, size=(5, 2))
    back = h.inverse().apply(h.apply(p))
    np.testing.assert_allclose(back, p, atol=1e-9)


def test_homography_estimator_api(rng):
    h = random_homography(rng)
    src = rng.uniform(0, 100, size=(8, 2))
    est = HomographyEstimator().fit(src, project(h.h, src))
    assert est.reprojection_error_ < 1e-9
    np.testing.assert_allclose(est.inverse_transform(est.transform(src)), src, atol=1e-9)
    assert est.get_params() == {}


# -- similarity transforms ----------------------------------------------------


def test_frame_transform_examples():
    t = estimate_frame_transform([(0, 0), (1, 0)], [(1, 1), (2, 1)])
    assert (t.rotation, *t.translation, t.scale) == pytest.approx((0, 1, 1, 1), abs=1e-12)
    t = estimate_frame_transform([(0, 0), (1, 0)], [(0, 0), (0, 1)])
    assert t.rotation == pytest.approx(math.pi / 2)
    assert t.scale == pytest.approx(1.0)
    np.testing.assert_allclose(t.translation, (0, 0), atol=1e-12)
    with pytest.raises(DegenerateConfiguration):
        estimate_frame_transform([(1, 1), (1, 1)], [(0, 0), (1, 0)])


def test_frame_transform_recovery(rng):
    true = FrameTransform(0.7, (12.0, -3.0), 1.3)
    src = rng.uniform(-50, 50, size=(20, 2))
    est = estimate_frame_transform(src, true.apply(src))
    assert est.rotation == pytest.approx(true.rotation, abs=1e-6)
    assert est.scale == pytest.approx(true.scale, abs=1e-6)
    np.testing.assert_allclose(est.translation, true.translation, atol=1e-6)
    sk = SimilarityTransformEstimator().fit(src, true.apply(src))
    np.testing.assert_allclose(sk.transform(src), true.apply(src), atol=1e-9)


angles = st.floats(-math.pi, math.pi)
coords = st.floats(-1000, 1000)


@given(angles, coords, coords, st.floats(0.1, 10))
def test_transform_inverse_composes_to_identity(rot, tx, ty, scale):
    t = FrameTransform(rot, (tx, ty), scale)
    ident = t.inverse().compose(t)
    p = np.array([[3.0, -4.0], [100.0, 20.0]])
    np.testing.assert_allclose(ident.apply(p), p, atol=1e-9)


def test_composition_matches_direct_estimate(rng):
    r2s = FrameTransform(0.01, (2.0, -1.0), 1.0, "Road", "Setup")
    s2m = FrameTransform(0.35, (1000.0, 2000.0), 1.0, "Setup", "Map")
    road = rng.uniform(0, 150, size=(10, 2))
    direct = estimate_frame_transform(road, s2m.apply(r2s.apply(road)), "Road", "Map")
    reg = TransformRegistry([r2s, s2m])
    chained = reg.get("Road", "Map")
    np.testing.assert_allclose(chained.apply(road), direct.apply(road), atol=1e-6)
    np.testing.assert_allclose(reg.get("Map", "Road").apply(chained.apply(road)), road,
                               atol=1e-9)
    with pytest.raises(UnknownFrame):
        reg.get("Road", "Image")


def test_calibration_from_pairs_and_transforms(rng):
    h = random_homography(rng)
    img = rng.uniform(0, 1000, size=(6, 2))
    doc = correspondences_to_dict(img, project(h.h, img), "Image", "Road")
    doc["transforms"] = [FrameTransform(0.1, (1, 2), 1.0, "Road", "Setup").to_dict()]
    doc["optical_axis"] = 3.0
    cal = Calibration.from_dict(doc)
    np.testing.assert_allclose(cal.homography.apply(img), project(h.h, img), atol=1e-8)
    assert cal.road_to("Setup").rotation == pytest.approx(0.1)
    assert cal.optical_axis == 3.0
