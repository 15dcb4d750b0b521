"""Planar stereo event world: SE(2) rig over point landmarks.

Each camera of the rig sees a 1-D image line. A landmark's projected column
fires an event every time it has moved ``event_threshold`` pixels since its
previous event (polarity 1 when the column increases).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .events import EventArray

TWO_PI = 2.0 * math.pi


def wrap_angle(theta):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(theta, dtype=np.float64) + math.pi, TWO_PI) - math.pi
    w = np.where(w == -math.pi, math.pi, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class PoseSE2:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @classmethod
    def from_array(cls, a) -> "PoseSE2":
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def compose(self, other: "PoseSE2") -> "PoseSE2":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return PoseSE2(self.x + c * other.x - s * other.y,
                       self.y + s * other.x + c * other.y,
                       self.theta + other.theta)

    def inverse(self) -> "PoseSE2":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return PoseSE2(-c * self.x - s * self.y, s * self.x - c * self.y, -self.theta)

    def __matmul__(self, other: "PoseSE2") -> "PoseSE2":
        return self.compose(other)


@dataclass(frozen=True)
class Landmark:
    id: int
    position: tuple[float, float]


@dataclass(frozen=True)
class StereoRig:
    baseline: float = 0.2
    focal: float = 200.0
    image_width: int = 320
    event_threshold: float = 0.5
    min_depth: float = 0.1

    def __post_init__(self):
        if not (self.baseline > 0 and self.focal > 0):
            raise ValueError("baseline and focal must be positive")

    @property
    def cx(self) -> float:
        return self.image_width / 2.0

    @property
    def sensor_dims(self) -> tuple[int, int]:
        return (self.image_width, 1)


@dataclass
class Trajectory:
    """Densely sampled planar trajectory with linear/shortest-arc interpolation."""

    times: np.ndarray
    poses: np.ndarray  # (N, 3) of x, y, theta
    generator: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.poses = np.asarray(self.poses, dtype=np.float64).reshape(-1, 3)
        if len(self.times) != len(self.poses) or len(self.times) < 1:
            raise ValueError("times and poses must be non-empty and aligned")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory samples must be strictly increasing in t")
        self.poses[:, 2] = wrap_angle(self.poses[:, 2])

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def sample_poses(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
        if np.any(ts < self.times[0] - 1e-12) or np.any(ts > self.times[-1] + 1e-12):
            raise ValueError(f"t outside trajectory span [{self.t_start}, {self.t_end}]")
        if len(self.times) == 1:
            return np.repeat(self.poses, len(ts), axis=0)
        i = np.clip(np.searchsorted(self.times, ts, side="right") - 1, 0, len(self.times) - 2)
        t0, t1 = self.times[i], self.times[i + 1]
        a = np.clip((ts - t0) / (t1 - t0), 0.0, 1.0)
        p0, p1 = self.poses[i], self.poses[i + 1]
        out = np.empty((len(ts), 3))
        out[:, :2] = p0[:, :2] + a[:, None] * (p1[:, :2] - p0[:, :2])
        dth = wrap_angle(p1[:, 2] - p0[:, 2])
        out[:, 2] = wrap_angle(p0[:, 2] + a * dth)
        # exact hits return the stored sample untouched
        exact = a == 0.0
        out[exact] = p0[exact]
        exact1 = a == 1.0
        out[exact1] = p1[exact1]
        return out

    def speeds(self, ts) -> np.ndarray:
        """Translational speed (m/s) by finite difference of the dense samples."""
        v = np.linalg.norm(np.diff(self.poses[:, :2], axis=0), axis=1) / np.diff(self.times)
        v = np.append(v, v[-1] if len(v) else 0.0)
        i = np.clip(np.searchsorted(self.times, np.asarray(ts), side="right") - 1, 0, len(v) - 1)
        return v[i]

    def reversed(self) -> "Trajectory":
        """Same path traversed backwards over the same time span."""
        t = self.times
        return Trajectory(t[0] + t[-1] - t[::-1], self.poses[::-1].copy(), dict(self.generator, reversed=True))


def sample_pose(traj: Trajectory, t: float) -> PoseSE2:
    return PoseSE2.from_array(traj.sample_poses([t])[0])


def project_many(rig: StereoRig, poses: np.ndarray, points: np.ndarray, side: int):
    """Project points into one camera for a batch of poses.

    ``poses`` is (T, 3), ``points`` is (L, 2); ``side`` is +1 for the left
    camera, -1 for the right. Returns ``(u, depth)`` each of shape (T, L).
    """
    poses = np.atleast_2d(poses)
    points = np.atleast_2d(points)
    c, s = np.cos(poses[:, 2])[:, None], np.sin(poses[:, 2])[:, None]
    off = side * rig.baseline / 2.0
    cam_x = poses[:, 0:1] - s * off
    cam_y = poses[:, 1:2] + c * off
    rx = points[None, :, 0] - cam_x
    ry = points[None, :, 1] - cam_y
    z = c * rx + s * ry
    lat = -s * rx + c * ry
    with np.errstate(divide="ignore", invalid="ignore"):
        u = rig.cx - rig.focal * lat / z
    return u, z


def visible_mask(rig: StereoRig, u: np.ndarray, z: np.ndarray) -> np.ndarray:
    return (z > rig.min_depth) & (u >= 0) & (u < rig.image_width)


def project(rig: StereoRig, pose: PoseSE2, lm: Landmark):
    """Pinhole projection into both cameras; ``None`` when not visible in either."""
    pts = np.array([lm.position], dtype=np.float64)
    pa = pose.as_array()[None]
    ul, zl = project_many(rig, pa, pts, +1)
    ur, zr = project_many(rig, pa, pts, -1)
    if not (visible_mask(rig, ul, zl)[0, 0] and visible_mask(rig, ur, zr)[0, 0]):
        return None
    return float(ul[0, 0]), float(ur[0, 0])


def _events_one_camera(rig: StereoRig, times: np.ndarray, poses: np.ndarray, points: np.ndarray, side: int):
    u_all, z_all = project_many(rig, poses, points, side)
    vis_all = visible_mask(rig, u_all, z_all)
    thr = rig.event_threshold
    n_lm = points.shape[0]
    with np.errstate(invalid="ignore"):
        return _fire_loop(times, u_all, vis_all, thr, n_lm, rig)


def _fire_loop(times, u_all, vis_all, thr, n_lm, rig):
    ref = np.where(vis_all[0], u_all[0], 0.0)
    active = vis_all[0].copy()
    out_t, out_x, out_p, out_id = [], [], [], []
    lm_ids = np.arange(n_lm)
    for k in range(1, len(times)):
        u = u_all[k]
        vis = vis_all[k]
        fresh = vis & ~active
        ref[fresh] = u[fresh]
        active = vis
        d = np.where(active, u - ref, 0.0)
        n = np.floor(np.abs(d) / thr).astype(np.int64)
        fire = np.nonzero(n)[0]
        if fire.size == 0:
            continue
        cnt = n[fire]
        sign = np.sign(d[fire])
        rep = np.repeat(np.arange(fire.size), cnt)
        step_no = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt) + 1
        levels = ref[fire][rep] + sign[rep] * thr * step_no
        u_prev = u_all[k - 1, fire][rep]
        du = u[fire][rep] - u_prev
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(du != 0, (levels - u_prev) / du, 1.0)
        frac = np.clip(frac, 0.0, 1.0)
        ts = times[k - 1] + frac * (times[k] - times[k - 1])
        out_t.append(ts)
        out_x.append(np.clip(np.floor(levels), 0, rig.image_width - 1).astype(np.int64))
        out_p.append((sign[rep] > 0).astype(np.int8))
        out_id.append(lm_ids[fire][rep])
        ref[fire] += sign * cnt * thr
    if not out_t:
        return EventArray.empty(), np.zeros(0, dtype=np.int64)
    t = np.concatenate(out_t)
    x = np.concatenate(out_x)
    p = np.concatenate(out_p)
    ids = np.concatenate(out_id)
    order = np.lexsort((ids, t))
    ev = EventArray(t[order], x[order], np.zeros(len(t), dtype=np.int64), p[order])
    return ev, ids[order]


def synthesize_events(rig: StereoRig, traj: Trajectory, landmarks: Sequence[Landmark],
                      t_span: tuple[float, float] | None = None, step: float = 0.001,
                      return_ids: bool = False):
    """Generate left and right event streams for a trajectory.

    Crossing times are interpolated linearly inside each integration step.
    With ``return_ids`` the source landmark id of every event is returned as
    well (ground-truth provenance, useful for diagnostics only).
    """
    if step > 0.001 + 1e-12:
        raise ValueError("integration step must be <= 1 ms")
    t0, t1 = t_span if t_span is not None else (traj.t_start, traj.t_end)
    n = int(round((t1 - t0) / step))
    times = t0 + step * np.arange(n + 1)
    times[-1] = min(times[-1], t1)
    poses = traj.sample_poses(times)
    points = np.array([lm.position for lm in landmarks], dtype=np.float64).reshape(-1, 2)
    ids = np.array([lm.id for lm in landmarks], dtype=np.int64)
    left, lid = _events_one_camera(rig, times, poses, points, +1)
    right, rid = _events_one_camera(rig, times, poses, points, -1)
    if return_ids:
        return left, right, ids[lid] if len(lid) else lid, ids[rid] if len(rid) else rid
    return left, right


# ---------------------------------------------------------------------------
# scene generation

@dataclass(frozen=True)
class SceneConfig:
    n_landmarks: int = 40
    box_x: tuple[float, float] = (0.0, 10.0)
    box_y: tuple[float, float] = (0.5, 6.5)
    path_x: tuple[float, float] = (2.0, 8.0)
    path_y: float = -1.0
    heading: float = math.pi / 2
    yaw_amplitude: float = 0.05
    yaw_period: float = 7.0
    speeds: tuple[float, ...] = (0.1, 1.0, 0.3, 1.5, 0.05, 0.6)
    segment_duration: float = 2.5
    ramp: float = 0.3
    sample_dt: float = 0.001


def make_landmarks(cfg: SceneConfig, rng: np.random.Generator) -> list[Landmark]:
    xs = rng.uniform(cfg.box_x[0], cfg.box_x[1], cfg.n_landmarks)
    ys = rng.uniform(cfg.box_y[0], cfg.box_y[1], cfg.n_landmarks)
    return [Landmark(i, (float(x), float(y))) for i, (x, y) in enumerate(zip(xs, ys))]


def speed_profile(cfg: SceneConfig, t: np.ndarray, phase: int = 0) -> np.ndarray:
    """Piecewise-constant speed levels joined by linear ramps of length ``cfg.ramp``."""
    seg = np.floor(t / cfg.segment_duration).astype(np.int64)
    levels = np.asarray(cfg.speeds)
    cur = levels[(seg + phase) % len(levels)]
    prev = levels[(seg + phase - 1) % len(levels)]
    into = t - seg * cfg.segment_duration
    if cfg.ramp > 0:
        a = np.clip(into / cfg.ramp, 0.0, 1.0)
        a = np.where(seg == 0, 1.0, a)
    else:
        a = np.ones_like(t)
    return prev + a * (cur - prev)


def make_trajectory(cfg: SceneConfig, duration: float, rng: np.random.Generator | None = None) -> Trajectory:
    """Ping-pong lateral sweep with a piecewise slow/fast speed profile and mild yaw wobble."""
    phase = int(rng.integers(len(cfg.speeds))) if rng is not None else 0
    x_start = float(rng.uniform(*cfg.path_x)) if rng is not None else cfg.path_x[0]
    yaw_phase = float(rng.uniform(0, TWO_PI)) if rng is not None else 0.0
    t = np.arange(0.0, duration + cfg.sample_dt / 2, cfg.sample_dt)
    v = speed_profile(cfg, t, phase)
    # arc length along a ping-pong path
    s = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(t))])
    span = cfg.path_x[1] - cfg.path_x[0]
    s = s + (x_start - cfg.path_x[0])
    m = np.mod(s, 2 * span)
    x = cfg.path_x[0] + np.where(m <= span, m, 2 * span - m)
    theta = cfg.heading + cfg.yaw_amplitude * np.sin(TWO_PI * t / cfg.yaw_period + yaw_phase)
    poses = np.column_stack([x, np.full_like(x, cfg.path_y), theta])
    gen = {"kind": "pingpong", "speeds": list(cfg.speeds), "segment_duration": cfg.segment_duration,
           "phase": phase, "x_start": x_start, "yaw_phase": yaw_phase}
    return Trajectory(t, poses, gen)
