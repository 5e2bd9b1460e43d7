import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trajex.evaluation import (
    QUANTITIES,
    BiasCorrector,
    BiasTable,
    ComparisonTable,
    ReferenceRun,
    aggregate_bias_std,
    associate,
    comparison_table,
    debias,
    distance_to_time,
    error_curve,
    interpolate_measurement,
    make_grid,
    summary_stats,
)
from trajex.exceptions import GridMismatch, MissingMode, MultipleCrossings, NoCrossing, OutOfRange
from trajex.pipeline import TrajectoryExtractor
from trajex.postprocess import SmoothedTrajectory
from trajex.simulator import ScenarioConfig, reference_runs, simulate

FIXTURES = Path(__file__).parent / "fixtures"


def approach(v=20.0, x0=200.0, y=-2.0, dt=0.01, n=1000):
    t = np.arange(n) * dt
    x = x0 - v * t
    s = np.column_stack([t, x, np.full_like(t, y), np.full_like(t, -v), 0 * t,
                         np.full_like(t, math.pi)])
    return SmoothedTrajectory(1, "car", (4.5, 1.8, 1.5), s, "Setup")


def shifted(traj, col, c):
    s = traj.samples.copy()
    s[:, col] += c
    return SmoothedTrajectory(traj.track_id, traj.cls, traj.dimensions, s, traj.frame)


def curve_from_errors(values, run_id=0, grid=(50.0,)):
    from trajex.evaluation import ErrorCurve

    g = np.asarray(grid)
    errs = {q: np.full(len(g), float(values)) for q in QUANTITIES}
    return ErrorCurve(run_id, g, errs)


# -- interpolation ----------------------------------------------------------


def test_interpolation_examples():
    s = np.array([[0, 0, 0, 0, 0, math.radians(179)], [1, 10, 0, 0, 0, math.radians(-179)]])
    assert interpolate_measurement(s, 0.0).tolist() == s[0, 1:].tolist()
    assert interpolate_measurement(s, 1.0).tolist() == s[1, 1:].tolist()
    out = interpolate_measurement(s, 0.4)
    assert out[0] == pytest.approx(4.0)
    mid = interpolate_measurement(s, 0.5)[4]
    assert abs(abs(mid) - math.pi) < 1e-12
    with pytest.raises(OutOfRange):
        interpolate_measurement(s, 1.5)


def test_distance_to_time_examples():
    ref = approach(y=0.0)
    assert distance_to_time(ref, 135.0) == pytest.approx(3.25, abs=1e-9)
    with pytest.raises(NoCrossing):
        distance_to_time(ref, 500.0)
    s = ref.samples.copy()
    s[:, 1] = 100 + 10 * np.sin(s[:, 0])
    with pytest.raises(MultipleCrossings) as exc:
        distance_to_time(s, 100.0)
    assert len(exc.value.times) > 1


@given(st.integers(0, 100_000), st.floats(40, 130))
def test_distance_to_time_plug_back(seed, d):
    rng = np.random.default_rng(seed)
    t = np.cumsum(rng.uniform(0.005, 0.02, 3000))
    speed = rng.uniform(5, 35, len(t))
    x = 200 - np.concatenate([[0], np.cumsum(speed[:-1] * np.diff(t))])
    s = np.column_stack([t, x, np.full_like(t, rng.uniform(-10, 0)), -speed, 0 * t, 0 * t])
    s = s[s[:, 1] > 0]  # monotone approach only
    if np.hypot(s[:, 1], s[:, 2]).min() > d:
        return
    tc = distance_to_time(s, d)
    p = interpolate_measurement(s, tc)
    assert math.hypot(p[0], p[1]) == pytest.approx(d, abs=1e-3)


# -- error curves -----------------------------------------------------------


def test_identical_measurement_has_zero_error():
    ref = approach()
    c = error_curve(ReferenceRun(1, ref, ref))
    for q in QUANTITIES:
        np.testing.assert_array_equal(c.errors[q], 0.0)


def test_constant_offset_sign():
    ref = approach()
    c = error_curve(ReferenceRun(1, ref, shifted(ref, 1, 0.3)))
    np.testing.assert_allclose(c.errors["x"], -0.3, atol=1e-12)


@given(st.floats(-5, 5), st.sampled_from([1, 2, 3, 4]))
def test_error_curve_equivariance(c, col):
    ref = approach()
    meas = shifted(approach(v=20.5), 2, 0.1)
    base = error_curve(ReferenceRun(1, ref, meas))
    moved = error_curve(ReferenceRun(1, ref, shifted(meas, col, c)))
    q = QUANTITIES[col - 1]
    np.testing.assert_allclose(moved.errors[q], base.errors[q] - c, atol=1e-9)


def direct_errors(ref, meas, grid):
    """Reference-minus-measured per distance using numpy interpolation only."""
    r = np.hypot(ref[:, 1], ref[:, 2])
    t_at = np.interp(grid, r[::-1], ref[::-1, 0])
    out = {}
    for i, q in enumerate(QUANTITIES[:4], start=1):
        out[q] = np.interp(t_at, ref[:, 0], ref[:, i]) - np.interp(t_at, meas[:, 0], meas[:, i])
    return out


def test_error_curve_matches_direct_formula():
    cfg = reference_runs(3)[2]
    sc = simulate(cfg)
    ref = sc.ground_truth[0].as_trajectory()
    meas = TrajectoryExtractor(calibration=sc.calibration).extract(sc.camera, sc.radar)[0]
    grid = make_grid()
    c = error_curve(ReferenceRun(1, ref, meas), grid)
    expect = direct_errors(ref.samples, meas.samples, grid)
    for q, v in expect.items():
        np.testing.assert_allclose(c.errors[q], v, atol=1e-9)


def test_error_curve_outside_measurement():
    ref = approach()
    short = SmoothedTrajectory(1, "car", (), ref.samples[300:400], "Setup")
    with pytest.raises(OutOfRange):
        error_curve(ReferenceRun(1, ref, short))
    c = error_curve(ReferenceRun(1, ref, short), strict=False)
    assert np.isnan(c.errors["x"]).any() and np.isfinite(c.errors["x"]).any()


# -- aggregation ------------------------------------------------------------


def test_population_divisor():
    table = aggregate_bias_std([curve_from_errors(1.0, 0), curve_from_errors(3.0, 1)])
    assert table.mean["x"][0] == 2.0
    assert table.std["x"][0] == 1.0


def test_identical_runs_have_zero_spread():
    table = aggregate_bias_std([curve_from_errors(0.7, i) for i in range(5)])
    assert table.mean["y"][0] == pytest.approx(0.7)
    assert table.std["y"][0] == 0.0


def test_grid_mismatch():
    with pytest.raises(GridMismatch):
        aggregate_bias_std([curve_from_errors(1, 0, (1.0, 2.0)), curve_from_errors(1, 1, (1.0, 3.0))])


def welford(xs):
    n, mean, m2 = 0, 0.0, 0.0
    for x in xs:
        n += 1
        d = x - mean
        mean += d / n
        m2 += d * (x - mean)
    return mean, math.sqrt(m2 / n)


@pytest.fixture(scope="module")
def seeded_curves():
    curves, runs = [], []
    for i, cfg in enumerate(reference_runs(10)):
        sc = simulate(cfg)
        ref = sc.ground_truth[0].as_trajectory()
        tracks = TrajectoryExtractor(calibration=sc.calibration).extract(sc.camera, sc.radar)
        run = ReferenceRun(i, ref, associate([ref], tracks)[ref.track_id])
        runs.append(run)
        curves.append(error_curve(run))
    return runs, curves


def test_aggregation_matches_streaming_oracle(seeded_curves):
    _, curves = seeded_curves
    table = aggregate_bias_std(curves)
    for q in ("x", "y", "vx", "vy"):
        for k in range(len(table.grid)):
            mu, sd = welford(c.errors[q][k] for c in curves)
            assert table.mean[q][k] == pytest.approx(mu, abs=1e-12)
            assert table.std[q][k] == pytest.approx(sd, abs=1e-12)
            sq = np.mean([c.errors[q][k] ** 2 for c in curves])
            assert table.std[q][k] ** 2 + table.mean[q][k] ** 2 == pytest.approx(sq, abs=1e-12)
    assert all((table.std[q] >= 0).all() for q in QUANTITIES)


def test_debias_drives_bias_to_zero(seeded_curves):
    runs, curves = seeded_curves
    corr = BiasCorrector().fit(curves)
    after = [error_curve(ReferenceRun(r.run_id, r.reference, corr.transform(r.measured)))
             for r in runs]
    bias = aggregate_bias_std(after).interval_bias
    assert abs(bias["x"]) < 0.01 and abs(bias["y"]) < 0.01


# -- debias -----------------------------------------------------------------


def table_with(bias_x):
    grid = make_grid()
    zero = {q: np.zeros(len(grid)) for q in QUANTITIES}
    mean = dict(zero, x=np.full(len(grid), bias_x))
    return BiasTable(grid, mean, zero, 1)


def test_debias_examples():
    traj = approach()
    same = debias(traj, table_with(0.0))
    np.testing.assert_array_equal(same.samples, traj.samples)
    moved = debias(traj, table_with(-0.3))
    np.testing.assert_allclose(moved.samples[:, 1], traj.samples[:, 1] - 0.3, atol=1e-12)


def test_bias_corrector_accepts_lists():
    corr = BiasCorrector().fit([curve_from_errors(0.2, 0, make_grid())])
    out = corr.transform([approach(), approach()])
    np.testing.assert_allclose(out[1].samples[:, 1], approach().samples[:, 1] + 0.2)
    assert corr.get_params()["distance"] == "radial"


# -- comparison -------------------------------------------------------------


PAPER_TABLE = {  # camera, radar, fused as (bias, std)
    "x": [(-0.56, 0.50), (0.08, 0.29), (-0.06, 0.29)],
    "y": [(0.04, 0.10), (-0.11, 0.24), (-0.06, 0.11)],
    "vx": [(0.04, 0.51), (0.06, 0.11), (0.08, 0.13)],
    "vy": [(0.07, 0.10), (0.09, 0.14), (0.09, 0.14)],
    "theta": [(0.10, 0.49), (0.33, 0.70), (0.33, 0.66)],
}


def test_published_table_formatting():
    modes = ("camera", "radar", "fused")
    bias = {m: {q: PAPER_TABLE[q][i][0] for q in QUANTITIES} for i, m in enumerate(modes)}
    std = {m: {q: PAPER_TABLE[q][i][1] for q in QUANTITIES} for i, m in enumerate(modes)}
    t = ComparisonTable(modes, bias, std)
    assert t.to_text() == (FIXTURES / "table1.txt").read_text()
    assert t.to_csv() == (FIXTURES / "table1.csv").read_text()
    # the qualitative pattern the published numbers show
    assert std["fused"]["x"] <= std["camera"]["x"] and std["fused"]["y"] < std["radar"]["y"]


def test_identical_modes_give_identical_rows():
    t = table_with(0.1)
    comp = comparison_table({"camera": t, "radar": t, "fused": t})
    assert comp.bias["camera"] == comp.bias["radar"] == comp.bias["fused"]
    assert comp.bias["fused"]["x"] == pytest.approx(0.1)


def test_missing_mode():
    t = table_with(0.0)
    with pytest.raises(MissingMode):
        comparison_table({"camera": t})
    assert comparison_table({"camera": t}, require_all=False).modes == ("camera",)


def test_theta_reported_in_degrees():
    grid = make_grid()
    zero = {q: np.zeros(len(grid)) for q in QUANTITIES}
    t = BiasTable(grid, dict(zero, theta=np.full(len(grid), math.radians(0.5))), zero, 1)
    comp = comparison_table({m: t for m in ("camera", "radar", "fused")})
    assert comp.bias["radar"]["theta"] == pytest.approx(0.5)


# -- summary ----------------------------------------------------------------


class FakeTrack:
    def __init__(self, n=300):
        self.id = 1
        self.n_detections = n
        self.confidences = [0.9]
        self.matched_ious = [0.8]

    def max_detection_gap(self):
        return 0.1


def test_summary_examples():
    s = summary_stats([FakeTrack() for _ in range(10)], 30.0)
    assert s.tracks_per_minute == 20.0 and s.mean_detections_per_track == 300
    empty = summary_stats([], 30.0)
    assert empty.tracks_per_minute == 0 and empty.mean_confidence == 0 and empty.max_miss_gap == 0


def test_summary_confidence_round_trip():
    sc = simulate(ScenarioConfig(seed=21, duration=40.0, camera_fp_rate=0.0))
    ex = TrajectoryExtractor(calibration=sc.calibration).fit(sc.camera, sc.radar)
    s = summary_stats(ex.tracks_, 40.0)
    assert s.mean_confidence == pytest.approx(sc.config.confidence_mean, abs=0.02)
    assert 0.5 < s.mean_matched_iou <= 1.0
