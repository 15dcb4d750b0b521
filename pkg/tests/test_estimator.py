import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spiketrigger.estimator import (DepthMapState, EstimatorConfig, MapNotInitializedError, TrackResult,
                                    UnderConstrainedError, count_events, fim_trace, map_update,
                                    residuals_and_jacobian, track, triangulate)
from spiketrigger.events import EventArray
from spiketrigger.simworld import Landmark, PoseSE2, StereoRig, Trajectory, synthesize_events

RIG = StereoRig()
FB = RIG.focal * RIG.baseline


def test_triangulate_depth_is_disparity_identity():
    d = np.array([4.0, 10.0, 40.0])
    pts, z = triangulate(np.array([100, 160, 200]), d, PoseSE2(0, 0, 0), RIG)
    np.testing.assert_allclose(z, FB / d)
    # with heading 0 the optical axis is +x, so depth lands on x
    np.testing.assert_allclose(pts[:, 0], FB / d)


def test_map_update_empty_windows():
    st0 = DepthMapState()
    out, n_new, n_fused = map_update(st0, EventArray.empty(), EventArray.empty(), PoseSE2(0, 0, 0), RIG)
    assert (n_new, n_fused) == (0, 0) and out is st0


def stereo_pass(lm, speed=0.4):
    t = np.arange(0.0, 0.301, 0.001)
    poses = np.column_stack([np.zeros_like(t), speed * t, np.zeros_like(t)])
    return Trajectory(t, poses), synthesize_events(RIG, Trajectory(t, poses), [lm])


def test_single_landmark_depth_and_refusion():
    lm = Landmark(0, (4.0, 0.3))
    traj, (left, right) = stereo_pass(lm)
    pose = lambda t: PoseSE2.from_array(traj.sample_poses(np.array([t]))[0])
    state, n_new, n_fused = map_update(DepthMapState(), left, right, pose, RIG)
    assert n_new >= 1
    # one pixel of disparity quantisation at depth 4 m is about 8 cm
    assert np.min(np.linalg.norm(state.positions - lm.position, axis=1)) < FB / (FB / 4.0 - 1) - 4.0
    again, n_new2, n_fused2 = map_update(state, left, right, pose, RIG)
    assert n_new2 == 0 and n_fused2 >= 1


def scene(seed, pose=PoseSE2(1.0, -0.5, 0.3)):
    """Landmarks back-projected from every 20th column centre, so events are exact."""
    rng = np.random.default_rng(seed)
    cols = np.arange(10, 310, 20)
    z = rng.uniform(3.0, 8.0, len(cols))
    pts, _ = triangulate(cols, FB / z, pose, RIG)
    ev = EventArray(np.linspace(0.0, 0.01, len(cols)), cols, np.zeros(len(cols), int), np.ones(len(cols), int))
    return DepthMapState.from_landmarks(pts, counts=np.full(len(pts), 5)), ev, pts


def test_track_fixed_point_at_ground_truth():
    gt = PoseSE2(1.0, -0.5, 0.3)
    m, ev, _ = scene(0, gt)
    res = track(m, ev, gt, RIG)
    assert np.linalg.norm(res.residuals) < RIG.event_threshold * math.sqrt(len(res.residuals))
    np.testing.assert_allclose(res.pose.as_array(), gt.as_array(), atol=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_track_recovers_from_perturbed_start(seed):
    gt = PoseSE2(1.0 + seed, -0.5, 0.3 - 0.1 * seed)
    m, ev, _ = scene(seed, gt)
    start = PoseSE2(gt.x + 0.05, gt.y + 0.05, gt.theta + 0.02)
    # the perturbation moves near landmarks ~9 px, so widen the association gate
    res = track(m, ev, start, RIG, EstimatorConfig(assoc_gate=8.0), gap=1.0)
    err = np.abs(res.pose.as_array() - gt.as_array())
    assert err[:2].max() < 1e-3 and err[2] < 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_jacobian_matches_finite_differences(seed):
    gt = PoseSE2(0.3, 0.2, -0.4)
    _, _, pts = scene(seed, gt)
    rng = np.random.default_rng(seed)
    pose = gt.as_array() + rng.normal(scale=0.01, size=3)
    obs = rng.uniform(0, 320, len(pts))
    sides = rng.choice([-1, 1], len(pts))
    _, J = residuals_and_jacobian(pose, obs, pts, RIG, sides)
    h = 1e-6
    for k in range(3):
        dp = np.zeros(3)
        dp[k] = h
        fd = (residuals_and_jacobian(pose + dp, obs, pts, RIG, sides)[0]
              - residuals_and_jacobian(pose - dp, obs, pts, RIG, sides)[0]) / (2 * h)
        np.testing.assert_allclose(J[:, k], fd, rtol=1e-5, atol=1e-5 * np.abs(fd).max())


def test_track_needs_initialized_map_and_enough_measurements():
    m, ev, _ = scene(1)
    with pytest.raises(MapNotInitializedError):
        track(DepthMapState(), ev, PoseSE2(0, 0, 0), RIG)
    sparse = EventArray(ev.t[:2], ev.x[:2], ev.y[:2], ev.p[:2])
    with pytest.raises(UnderConstrainedError):
        track(m, sparse, PoseSE2(1.0, -0.5, 0.3), RIG)


def result(J, r):
    return TrackResult(PoseSE2(0, 0, 0), np.asarray(J, float), np.asarray(r, float), True, 1)


def test_fim_trace_examples():
    assert fim_trace(result(np.eye(2, 3), [1.0, 1.0])) == 1.0
    assert fim_trace(result(np.eye(2, 3), [0.0, 0.0]), i_max=123.0) == 123.0


@given(st.integers(0, 10_000), st.floats(0.1, 10))
def test_fim_trace_dense_oracle_and_scaling(seed, c):
    rng = np.random.default_rng(seed)
    J, r = rng.normal(size=(20, 3)), rng.normal(size=20)
    dense = np.trace(J.T @ J) / np.sum(r ** 2)
    assert fim_trace(result(J, r)) == pytest.approx(dense, rel=1e-10)
    assert fim_trace(result(J, c * r)) == pytest.approx(dense / c ** 2, rel=1e-10)


def events(n, t0=0.0):
    return EventArray(t0 + np.arange(n) * 1e-3, np.zeros(n, int), np.zeros(n, int), np.ones(n, int))


def test_count_events():
    assert count_events(EventArray.empty()) == 0
    assert count_events(events(7)) == 7
    whole = events(12)
    assert count_events(whole.slice_time(0, 0.0055)) + count_events(whole.slice_time(0.0055, 1, False)) == 12


def test_map_csv(tmp_path):
    m = DepthMapState.from_landmarks([[1.0, 2.0], [3.5, -1.25]], counts=[4, 0])
    m.write_csv(tmp_path / "map.csv")
    rows = list(csv.DictReader(open(tmp_path / "map.csv")))
    assert [(r["id"], float(r["x"]), float(r["y"]), r["fusion_count"]) for r in rows] == \
        [("0", 1.0, 2.0, "4"), ("1", 3.5, -1.25, "0")]
