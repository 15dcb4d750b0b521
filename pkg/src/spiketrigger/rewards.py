"""Trigger rewards computed from the toy estimator.

Three pure reward functions (initialization, mapping, tracking) share a tiny
per-channel ledger that remembers the information gained at the last trigger.
:class:`EstimatorRewardSource` wires them to a running estimator and is what the
decision loop calls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .estimator import (DepthMapState, EstimatorConfig, MapNotInitializedError, UnderConstrainedError,
                        adaptive_window, fim_trace, map_update, track)
from .events import EventArray
from .simworld import PoseSE2, StereoRig, Trajectory, sample_pose


class RewardError(ValueError):
    """A trigger reward was requested without the triggered computation's result."""


@dataclass
class RewardConfig:
    alpha: float = 5.0
    gamma_map: float = 0.9
    gamma_track: float = 0.9
    lambda_e_map: float = 0.01
    lambda_e_track: float = 0.01
    r_idle_map: float = 0.0
    r_idle_track: float = 0.0
    n_e_interval: float = 0.030
    compounding: bool = False
    # Positive rescaling of each channel's reward. Argmax-invariant; keeps TD
    # targets at unit scale for the fixed learning rate.
    scale_map: float = 1.0
    scale_track: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        for name in ("gamma_map", "gamma_track"):
            g = getattr(self, name)
            if not 0.0 < g < 1.0:
                raise ValueError(f"{name} must lie strictly inside (0, 1), got {g}")
        for name in ("lambda_e_map", "lambda_e_track", "n_e_interval", "scale_map", "scale_track"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class RewardLedger:
    """Per-channel memory of the last valid trigger."""

    last_trigger_time: float | None = None
    last_info: float = 0.0
    idle_steps: int = 0
    now: float = -math.inf

    def advance(self, t: float | None):
        if t is None:
            return
        if t < self.now:
            raise ValueError(f"time went backwards: {t} < {self.now}")
        self.now = t

    def record_trigger(self, info: float, t: float | None = None):
        self.advance(t)
        self.last_trigger_time = self.now if t is not None else self.last_trigger_time
        self.last_info = float(info)
        self.idle_steps = 0


def reward_init(n_sgm_now: int, n_sgm_prev: int, action: int, cfg: RewardConfig) -> float:
    if n_sgm_now < 0 or n_sgm_prev < 0:
        raise ValueError("point counts must be non-negative")
    if action == 1:
        return float(n_sgm_now - n_sgm_prev)
    return -float(cfg.alpha)


def _channel_reward(info_now, ledger: RewardLedger, n_e: int, action: int, gamma: float,
                    lambda_e: float, r_idle: float, compounding: bool, t: float | None) -> float:
    if action == 1:
        if info_now is None:
            raise RewardError("trigger reward needs the estimator result")
        ledger.record_trigger(info_now, t)
        return float(info_now) + lambda_e * n_e
    ledger.advance(t)
    ledger.idle_steps += 1
    decay = gamma ** ledger.idle_steps if compounding else gamma
    return decay * ledger.last_info - lambda_e * n_e + r_idle


def reward_map(n_bm_now, ledger: RewardLedger, n_e: int, action: int, cfg: RewardConfig,
               t: float | None = None) -> float:
    """Mapping reward; a trigger stores ``n_bm_now`` in the ledger."""
    return _channel_reward(n_bm_now, ledger, n_e, action, cfg.gamma_map, cfg.lambda_e_map,
                           cfg.r_idle_map, cfg.compounding, t)


def reward_track(i_track_now, ledger: RewardLedger, n_e: int, action: int, cfg: RewardConfig,
                 t: float | None = None) -> float:
    """Tracking reward; a trigger stores ``i_track_now`` in the ledger."""
    return _channel_reward(i_track_now, ledger, n_e, action, cfg.gamma_track, cfg.lambda_e_track,
                           cfg.r_idle_track, cfg.compounding, t)


@dataclass
class DecisionStats:
    """Raw per-decision quantities, kept for calibration and reports."""

    t: list = field(default_factory=list)
    action: list = field(default_factory=list)
    info: list = field(default_factory=list)      # NaN while idle
    n_e: list = field(default_factory=list)
    phase: list = field(default_factory=list)     # "init" / "map" / "track"


class EstimatorRewardSource:
    """Runs the toy estimator on triggers and turns its outputs into rewards.

    Mapping is fed ground-truth poses unless ``map_pose_source="tracked"``.
    Tracking starts from a constant-velocity prediction off the last two
    estimates (ground truth before the first success) and its successful
    estimates form the estimated trajectory.
    """

    def __init__(self, rig: StereoRig, traj: Trajectory, left: EventArray, right: EventArray,
                 est_cfg: EstimatorConfig = EstimatorConfig(), reward_cfg: RewardConfig = RewardConfig(),
                 map_pose_source: str = "gt", max_extrapolation: float = 0.1, relocalize_after: float = 0.5,
                 velocity_baseline: float = 0.1):
        if map_pose_source not in ("gt", "tracked"):
            raise ValueError("map_pose_source must be 'gt' or 'tracked'")
        self.rig, self.traj = rig, traj
        self.left, self.right = left, right
        self.est_cfg, self.cfg = est_cfg, reward_cfg
        self.map_pose_source = map_pose_source
        self.map = DepthMapState(init_threshold=est_cfg.init_threshold)
        self.map_ledger = RewardLedger()
        self.track_ledger = RewardLedger()
        self.n_sgm = 0
        self.estimates: list[tuple[float, PoseSE2]] = []
        self.track_failures = 0
        self.relocalizations = 0
        self._recent: list[tuple[float, PoseSE2]] = []   # motion-model memory, cleared on relocalization
        self.max_extrapolation = max_extrapolation
        self.relocalize_after = relocalize_after
        self.velocity_baseline = velocity_baseline
        self.map_stats = DecisionStats()
        self.track_stats = DecisionStats()
        self.init_time: float | None = None

    @property
    def initialized(self) -> bool:
        return self.map.initialized

    def n_e(self, t: float) -> int:
        t0 = t - self.cfg.n_e_interval
        return self.left.count_between(t0, t) + self.right.count_between(t0, t)

    def _window(self, stream: EventArray, t: float, length: float) -> EventArray:
        return stream.slice_time(max(0.0, t - length), t)

    def _map_pose(self, t: float):
        """Pose source for a mapping call at ``t``: a callable of event time, or a fixed pose."""
        if self.map_pose_source == "tracked" and self._recent:
            return self.predict_pose(t)
        return lambda tm: sample_pose(self.traj, max(tm, self.traj.t_start))

    def predict_pose(self, t: float) -> PoseSE2:
        recent = self._recent
        if not recent:
            return sample_pose(self.traj, t)
        t1, p1 = recent[-1]
        if len(recent) < 2 or t <= t1:
            return p1
        t0, p0 = recent[0]
        dt = t1 - t0
        if dt <= 0:
            return p1
        a0, a1 = p0.as_array(), p1.as_array()
        vel = (a1 - a0) / dt
        vel[2] = math.remainder(a1[2] - a0[2], 2 * math.pi) / dt
        return PoseSE2.from_array(a1 + vel * min(t - t1, self.max_extrapolation))

    def map_reward(self, t: float, action: int) -> float:
        n_e = self.n_e(t)
        st = self.map_stats
        if not self.map.initialized:
            info = math.nan
            if action == 1:
                w = self.est_cfg.map_window
                self.map, n_new, _ = map_update(self.map, self._window(self.left, t, w),
                                                self._window(self.right, t, w), self._map_pose(t),
                                                self.rig, self.est_cfg)
                prev, self.n_sgm = self.n_sgm, self.n_sgm + n_new
                r = reward_init(self.n_sgm, prev, 1, self.cfg)
                info = float(n_new)
                if self.map.initialized:
                    self.init_time = t
            else:
                r = reward_init(self.n_sgm, self.n_sgm, 0, self.cfg)
            self.map_ledger.advance(t)
            phase = "init"
        else:
            info = None
            if action == 1:
                w = self.est_cfg.map_window
                self.map, _, n_fused = map_update(self.map, self._window(self.left, t, w),
                                                  self._window(self.right, t, w), self._map_pose(t),
                                                  self.rig, self.est_cfg)
                info = float(n_fused)
            r = reward_map(info, self.map_ledger, n_e, action, self.cfg, t)
            info = math.nan if info is None else info
            phase = "map"
        st.t.append(t)
        st.action.append(action)
        st.info.append(info)
        st.n_e.append(n_e)
        st.phase.append(phase)
        return r * self.cfg.scale_map

    def run_tracker(self, t: float) -> float:
        """Track at ``t``; returns the information (0 when tracking is impossible)."""
        if not self.map.initialized:
            return 0.0
        c = self.est_cfg
        window = adaptive_window(self.left, t, c.track_events, c.track_window_min, c.track_window)
        if self._recent and t - self._recent[-1][0] > self.relocalize_after:
            # stand-in for a relocalization module: restart from ground truth
            self.relocalizations += 1
            guess = sample_pose(self.traj, t)
            self._recent.clear()
        else:
            guess = self.predict_pose(t)
        gap = t - self._recent[-1][0] if self._recent else 0.0
        sigma = (c.prior_xy + c.prior_xy_rate * gap, c.prior_theta + c.prior_theta_rate * gap)
        try:
            right = adaptive_window(self.right, t, c.track_events, c.track_window_min, c.track_window)
            res = track(self.map, window, guess, self.rig, c, prior_sigma=sigma, gap=gap, right=right)
        except (UnderConstrainedError, MapNotInitializedError):
            self.track_failures += 1
            return 0.0
        self.estimates.append((t, res.pose))
        self._recent = [x for x in self._recent if t - x[0] <= self.velocity_baseline] + [(t, res.pose)]
        return fim_trace(res, self.est_cfg.i_max)

    def track_reward(self, t: float, action: int) -> float:
        n_e = self.n_e(t)
        info = self.run_tracker(t) if action == 1 else None
        r = reward_track(info, self.track_ledger, n_e, action, self.cfg, t)
        st = self.track_stats
        st.t.append(t)
        st.action.append(action)
        st.info.append(math.nan if info is None else info)
        st.n_e.append(n_e)
        st.phase.append("track")
        return r * self.cfg.scale_track

    def estimated_trajectory(self) -> tuple[np.ndarray, np.ndarray]:
        """``(times, poses (N, 3))`` of successful tracking results."""
        if not self.estimates:
            return np.zeros(0), np.zeros((0, 3))
        ts = np.array([t for t, _ in self.estimates])
        ps = np.array([p.as_array() for _, p in self.estimates])
        return ts, ps
