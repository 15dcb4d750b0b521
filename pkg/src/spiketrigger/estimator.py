"""Miniature stereo event odometry over the planar world.

Mapping matches left/right 1-D time surfaces inside a disparity gate,
triangulates, and fuses points into a landmark map. Tracking aligns the left
time surface against the map with Gauss-Newton over SE(2). Both exist to
produce the quantities the trigger rewards consume: new and fused depth point
counts, and the Jacobian/residuals behind the information score.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .events import EventArray, EventWindow
from .simworld import PoseSE2, StereoRig, project_many, visible_mask, wrap_angle


class UnderConstrainedError(RuntimeError):
    """Fewer than three measurements associated to the map."""


class TrackingLostError(UnderConstrainedError):
    """Gauss-Newton converged somewhere implausible."""


class MapNotInitializedError(RuntimeError):
    pass


@dataclass(frozen=True)
class EstimatorConfig:
    min_depth: float = 1.0
    max_depth: float = 15.0
    patch_radius: int = 2
    match_gate: float = 0.004          # seconds, mean time-surface disagreement
    mismatch_penalty: float = 0.030    # seconds, cost of a column active on one side only
    min_support: int = 1
    uniqueness_ratio: float = 1.0     # keep if best <= ratio * runner-up
    fusion_distance: float = 0.1       # metres
    fusion_gate: float = 9.21          # squared Mahalanobis distance (chi2, 2 dof, 99%)
    column_sigma: float = 0.5          # pixels
    disparity_sigma: float = 0.5       # pixels
    init_threshold: int = 10
    prune_after: int = 40              # mapping calls an unconfirmed point survives
    track_min_fusions: int = 3
    trust_bad_fraction: float = 0.1    # share of inconsistent fusions a landmark may have and still be tracked
    prune_bad_fraction: float = 0.5    # ... and beyond which (after 5 fusions) it is dropped
    assoc_gate: float = 2.0            # pixels
    outlier_px: float = 1.5
    max_iterations: int = 10
    max_halvings: int = 5
    max_rounds: int = 3
    i_max: float = 1e6
    map_window: float = 0.15
    track_window: float = 0.2          # upper bound on the adaptive tracking window
    track_window_min: float = 0.01
    track_events: int = 60             # left events the adaptive window aims to hold
    max_rms_px: float = 0.55           # final residual RMS above this counts as lost
    min_assoc_fraction: float = 0.4    # associated / visible trusted landmarks
    min_right_support: float = 0.75
    min_associations: int = 5          # three would fit the pose exactly; demand redundancy
    min_left_associations: int = 7     # sparse left support is where aliased solutions live
    max_jump: float = 0.05             # metres from the prediction ...
    max_jump_rate: float = 2.0         # ... plus this much per second of prediction gap
    max_turn: float = 0.05
    max_turn_rate: float = 0.5
    prior_xy: float = 0.01             # motion-prior width right after an estimate (metres)
    prior_xy_rate: float = 1.0         # ... growing per second since it (m/s)
    prior_theta: float = 0.005
    prior_theta_rate: float = 0.1
    n_e_interval: float = 0.03


def time_surface(events: EventArray, width: int):
    """Latest timestamp and polarity per column; ``-inf`` where silent."""
    ts = np.full(width, -np.inf)
    pol = np.full(width, -1, dtype=np.int8)
    if len(events):
        x = events.x[::-1]
        cols, first = np.unique(x, return_index=True)
        last = len(events) - 1 - first
        ts[cols] = events.t[last]
        pol[cols] = events.p[last]
    return ts, pol


def _window_events(w: EventWindow | EventArray) -> EventArray:
    return w.events if isinstance(w, EventWindow) else w


@dataclass
class DepthMapState:
    """Landmark map. ``counts[k]`` is how many later observations fused into landmark k."""

    ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    info: np.ndarray = field(default_factory=lambda: np.zeros((0, 2, 2)))   # inverse position covariances
    n_bad: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))   # inconsistent fusions
    born: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    initialized: bool = False
    init_threshold: int = 10
    n_calls: int = 0
    next_id: int = 0
    n_inserted: int = 0

    def copy(self) -> "DepthMapState":
        return DepthMapState(self.ids.copy(), self.positions.copy(), self.counts.copy(), self.info.copy(), self.n_bad.copy(),
                             self.born.copy(), self.initialized, self.init_threshold, self.n_calls,
                             self.next_id, self.n_inserted)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_confirmed(self) -> int:
        return int(np.sum(self.counts >= 1))

    def trusted(self, min_fusions: int = 1, bad_fraction: float = 1.0) -> np.ndarray:
        """Landmarks fused at least ``min_fusions`` times, at most ``bad_fraction`` of them inconsistently."""
        return (self.counts >= min_fusions) & (self.n_bad <= bad_fraction * self.counts)

    @property
    def table(self) -> dict[int, tuple[tuple[float, float], int]]:
        return {int(i): ((float(p[0]), float(p[1])), int(c)) for i, p, c in zip(self.ids, self.positions, self.counts)}

    @classmethod
    def from_landmarks(cls, positions, counts=None, init_threshold: int = 10) -> "DepthMapState":
        """A ready map from known positions (used for tests and oracle runs)."""
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
        n = len(positions)
        counts = np.full(n, 1, dtype=np.int64) if counts is None else np.asarray(counts, dtype=np.int64)
        st = cls(np.arange(n), positions.copy(), counts, np.tile(np.eye(2) * 1e4, (n, 1, 1)), np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64),
                 False, init_threshold, 0, n, n)
        st.initialized = st.n_confirmed >= init_threshold
        return st

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "x", "y", "fusion_count"])
            for i, p, c in zip(self.ids, self.positions, self.counts):
                w.writerow([int(i), f"{p[0]:.6f}", f"{p[1]:.6f}", int(c)])


def stereo_matches(left: EventArray, right: EventArray, rig: StereoRig, cfg: EstimatorConfig,
                   return_times: bool = False):
    """Left/right column matches by 1-D time-surface patch comparison.

    Returns ``(u_left, disparity, cost)`` arrays of the accepted matches, plus
    the left timestamps when ``return_times`` is set. A
    match must pass the disparity gate, agree in polarity at the centre,
    score below ``cfg.match_gate`` and survive a left-right consistency check.
    """
    width = rig.image_width
    ts_l, pol_l = time_surface(left, width)
    ts_r, pol_r = time_surface(right, width)
    act_l = np.isfinite(ts_l)
    act_r = np.isfinite(ts_r)
    fb = rig.focal * rig.baseline
    d_min = max(1, int(math.floor(fb / cfg.max_depth)))
    d_max = int(math.ceil(fb / cfg.min_depth))
    disp = np.arange(d_min, d_max + 1)
    cols = np.arange(width)
    rad = cfg.patch_radius
    offs = np.arange(-rad, rad + 1)
    ul = cols[:, None, None] + offs[None, None, :]             # (W, 1, P)
    ur = ul - disp[None, :, None]                               # (W, D, P)
    ul = np.broadcast_to(ul, ur.shape)
    in_l = (ul >= 0) & (ul < width)
    in_r = (ur >= 0) & (ur < width)
    tl = np.where(in_l, ts_l[np.clip(ul, 0, width - 1)], -np.inf)
    tr = np.where(in_r, ts_r[np.clip(ur, 0, width - 1)], -np.inf)
    al, ar = np.isfinite(tl), np.isfinite(tr)
    both = al & ar
    with np.errstate(invalid="ignore"):
        diff = np.where(both, np.abs(np.where(both, tl, 0) - np.where(both, tr, 0)), 0.0)
    cost_sum = diff.sum(axis=2) + cfg.mismatch_penalty * (al ^ ar).sum(axis=2)
    n_any = (al | ar).sum(axis=2)
    cost = np.where(n_any > 0, cost_sum / np.maximum(n_any, 1), np.inf)
    cost = np.where(both.sum(axis=2) >= cfg.min_support, cost, np.inf)
    r_center = cols[:, None] - disp[None, :]
    centre_ok = (act_l[:, None] & (r_center >= 0)
                 & act_r[np.clip(r_center, 0, width - 1)]
                 & (pol_l[:, None] == pol_r[np.clip(r_center, 0, width - 1)]))
    cost = np.where(centre_ok, cost, np.inf)
    best = np.argmin(cost, axis=1)
    best_cost = cost[cols, best]
    # right-to-left best disparity for every right column
    rl_cost = np.full((width, len(disp)), np.inf)
    u_of = cols[:, None] + disp[None, :]
    ok = u_of < width
    rl_cost[ok] = cost[u_of[ok], np.nonzero(ok)[1]]
    rl_best = np.argmin(rl_cost, axis=1)
    keep = np.isfinite(best_cost) & (best_cost < cfg.match_gate)
    # uniqueness: the runner-up (outside +-1 px of the best) must be clearly worse
    masked = cost.copy()
    for k in (-1, 0, 1):
        j = np.clip(best + k, 0, len(disp) - 1)
        masked[cols, j] = np.inf
    second = masked.min(axis=1)
    keep &= best_cost <= cfg.uniqueness_ratio * second
    r_cols = cols - disp[best]
    keep &= r_cols >= 0
    keep &= rl_best[np.clip(r_cols, 0, width - 1)] == best
    u = cols[keep]
    if return_times:
        return u, disp[best[keep]].astype(np.float64), best_cost[keep], ts_l[u]
    return u, disp[best[keep]].astype(np.float64), best_cost[keep]


def triangulate(u_left, disparity, pose, rig: StereoRig) -> tuple[np.ndarray, np.ndarray]:
    """World points and depths from left column indices and integer disparities.

    ``pose`` is one :class:`PoseSE2` or an (N, 3) array giving each match its own pose.
    """
    u_c = np.asarray(u_left, dtype=np.float64) + 0.5
    z = rig.focal * rig.baseline / np.asarray(disparity, dtype=np.float64)
    lat = -(u_c - rig.cx) * z / rig.focal
    pa = np.broadcast_to(pose.as_array() if isinstance(pose, PoseSE2) else np.asarray(pose, dtype=np.float64),
                         (len(z), 3))
    c, s = np.cos(pa[:, 2]), np.sin(pa[:, 2])
    hb = rig.baseline / 2
    cam_x, cam_y = pa[:, 0] - s * hb, pa[:, 1] + c * hb
    pts = np.column_stack([cam_x + z * c - lat * s, cam_y + z * s + lat * c])
    return pts, z


def point_covariances(u_left, disparity, thetas, rig: StereoRig, cfg: EstimatorConfig) -> np.ndarray:
    """World-frame 2x2 covariances of triangulated points from column and disparity noise."""
    u_c = np.asarray(u_left, dtype=np.float64) + 0.5 - rig.cx
    d = np.asarray(disparity, dtype=np.float64)
    b, f = rig.baseline, rig.focal
    # camera frame (depth, lateral) = (f b / d, -u b / d)
    j = np.zeros((len(d), 2, 2))
    j[:, 0, 0] = -f * b / d ** 2
    j[:, 1, 0] = u_c * b / d ** 2
    j[:, 1, 1] = -b / d
    noise = np.diag([cfg.disparity_sigma ** 2, cfg.column_sigma ** 2])
    cam = j @ noise @ j.transpose(0, 2, 1)
    c, s = np.cos(thetas), np.sin(thetas)
    rot = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)   # columns: forward, left
    return rot @ cam @ rot.transpose(0, 2, 1)


def map_update(state: DepthMapState, left: EventWindow | EventArray, right: EventWindow | EventArray,
               pose: PoseSE2, rig: StereoRig, cfg: EstimatorConfig = EstimatorConfig()):
    """Stereo-match, triangulate and fuse. Returns ``(new_state, n_new, n_fused)``.

    ``pose`` is either a fixed :class:`PoseSE2` or a callable mapping an event
    timestamp to the pose at that time; each match is triangulated from the
    pose at its left timestamp.

    Points are fused against landmarks that existed before this call; the
    remaining points are clustered greedily and each cluster becomes one new
    landmark.
    """
    left, right = _window_events(left), _window_events(right)
    if len(left) == 0 or len(right) == 0:
        return state, 0, 0
    st = state.copy()
    st.init_threshold = cfg.init_threshold
    st.n_calls += 1
    u, d, _, t_match = stereo_matches(left, right, rig, cfg, return_times=True)
    n_new = n_fused = 0
    if len(u):
        poses = (np.array([pose(float(tm)).as_array() for tm in t_match]) if callable(pose)
                 else np.broadcast_to(pose.as_array(), (len(u), 3)))
        pts, _ = triangulate(u, d, poses, rig)
        covs = point_covariances(u, d, poses[:, 2], rig, cfg)
        n_old = len(st.ids)
        fresh: list[list] = []      # [info, info @ position] per new cluster
        floor = cfg.fusion_distance ** 2 * np.eye(2)
        for p, cov in zip(pts, covs):
            if n_old:
                diff = st.positions[:n_old] - p
                gate_cov = np.linalg.inv(st.info[:n_old]) + cov + floor
                m2 = np.einsum("ni,nij,nj->n", diff, np.linalg.inv(gate_cov), diff)
                k = int(np.argmin(m2))
                if m2[k] <= cfg.fusion_gate:
                    if diff[k] @ np.linalg.solve(np.linalg.inv(st.info[k]) + cov, diff[k]) > cfg.fusion_gate:
                        st.n_bad[k] += 1
                    lam = np.linalg.inv(cov)
                    tot = st.info[k] + lam
                    st.positions[k] = np.linalg.solve(tot, st.info[k] @ st.positions[k] + lam @ p)
                    st.info[k] = tot
                    st.counts[k] += 1
                    n_fused += 1
                    continue
            lam = np.linalg.inv(cov)
            for cl in fresh:
                q = np.linalg.solve(cl[0], cl[1])
                g = np.linalg.inv(cl[0]) + cov + floor
                if (q - p) @ np.linalg.solve(g, q - p) <= cfg.fusion_gate:
                    cl[0] = cl[0] + lam
                    cl[1] = cl[1] + lam @ p
                    break
            else:
                fresh.append([lam, lam @ p])
        n_new = len(fresh)
        if n_new:
            infos = np.array([cl[0] for cl in fresh])
            pos = np.array([np.linalg.solve(cl[0], cl[1]) for cl in fresh])
            st.ids = np.concatenate([st.ids, st.next_id + np.arange(n_new)])
            st.positions = np.vstack([st.positions, pos])
            st.counts = np.concatenate([st.counts, np.zeros(n_new, dtype=np.int64)])
            st.info = np.concatenate([st.info, infos])
            st.n_bad = np.concatenate([st.n_bad, np.zeros(n_new, dtype=np.int64)])
            st.born = np.concatenate([st.born, np.full(n_new, st.n_calls, dtype=np.int64)])
            st.next_id += n_new
            st.n_inserted += n_new
    stale = (st.counts == 0) & (st.n_calls - st.born > cfg.prune_after)
    stale |= (st.counts >= 5) & (st.n_bad > cfg.prune_bad_fraction * st.counts)
    if np.any(stale):
        keep = ~stale
        st.ids, st.positions, st.counts = st.ids[keep], st.positions[keep], st.counts[keep]
        st.info, st.n_bad, st.born = st.info[keep], st.n_bad[keep], st.born[keep]
    if not st.initialized and st.n_confirmed >= st.init_threshold:
        st.initialized = True
    return st, n_new, n_fused


# ---------------------------------------------------------------------------
# tracking

@dataclass
class TrackResult:
    pose: PoseSE2
    jacobian: np.ndarray
    residuals: np.ndarray
    converged: bool
    iterations: int
    landmark_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    sides: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))   # +1 left, -1 right


def predict_columns(pose, points: np.ndarray, rig: StereoRig, side=1):
    """Columns of ``points`` in one camera and d(column)/d(x, y, theta).

    ``side`` is +1 (left), -1 (right) or a per-point array of those.
    """
    x, y, th = pose
    c, s = math.cos(th), math.sin(th)
    hb = np.broadcast_to(np.asarray(side, dtype=np.float64) * (rig.baseline / 2), (len(points),))
    rx = points[:, 0] - (x - s * hb)
    ry = points[:, 1] - (y + c * hb)
    z = c * rx + s * ry
    lat = -s * rx + c * ry
    u = rig.cx - rig.focal * lat / z
    dz = np.column_stack([np.full_like(z, -c), np.full_like(z, -s), lat + hb])
    dl = np.column_stack([np.full_like(z, s), np.full_like(z, -c), -z])
    du = -rig.focal * (dl * z[:, None] - lat[:, None] * dz) / (z ** 2)[:, None]
    return u, z, du


def residuals_and_jacobian(pose, obs_u: np.ndarray, points: np.ndarray, rig: StereoRig, sides=1):
    """Residuals ``obs - predicted`` and their Jacobian w.r.t. the pose (M x 3)."""
    u, _, du = predict_columns(pose, points, rig, sides)
    return obs_u - u, -du


def trail_heads(cols: np.ndarray, ts: np.ndarray) -> np.ndarray:
    """Newest column of every run of adjacent active columns."""
    if len(cols) == 0:
        return np.zeros(0, dtype=np.int64)
    breaks = np.nonzero(np.diff(cols) > 1)[0] + 1
    return np.array([run[np.argmax(t)] for run, t in zip(np.split(cols, breaks), np.split(ts, breaks))],
                    dtype=np.int64)


def observed_columns(events: EventArray, rig: StereoRig) -> np.ndarray:
    """Column centres of the trail heads in one camera's window."""
    ts, _ = time_surface(events, rig.image_width)
    active = np.nonzero(np.isfinite(ts))[0]
    return trail_heads(active, ts[active]) + 0.5


def _associate(pose, obs_u: np.ndarray, points: np.ndarray, rig: StereoRig, gate: float, side: int = 1):
    """Pair predicted landmark columns with observed columns, keeping only unambiguous pairs.

    A pair is kept when each side is the other's only candidate inside the gate.
    """
    u, z, _ = predict_columns(pose, points, rig, side)
    vis = (z > rig.min_depth) & (u >= -gate) & (u < rig.image_width + gate)
    lm_idx = np.nonzero(vis)[0]
    if len(lm_idx) == 0 or len(obs_u) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    inside = np.abs(obs_u[None, :] - u[lm_idx, None]) <= gate
    unique = (inside.sum(axis=1) == 1)[:, None] & (inside.sum(axis=0) == 1)[None, :] & inside
    rows, cols = np.nonzero(unique)
    return lm_idx[rows], obs_u[cols]


def _stacked(pose, meas, pts, rig, prior):
    lm, obs, sides = meas
    r, J = residuals_and_jacobian(pose, obs, pts[lm], rig, sides)
    if prior is None:
        return r, J
    p0, sw = prior
    dp = p0 - pose
    dp[2] = math.remainder(dp[2], 2 * math.pi)
    return np.concatenate([r, sw * dp]), np.vstack([J, -np.diag(sw)])


def _gauss_newton(pose: np.ndarray, meas, pts, rig, cfg: EstimatorConfig, budget: int, prior=None):
    """Damped Gauss-Newton. ``prior=(pose0, sqrt_weights)`` appends pose-prior rows to the cost."""
    r, J = _stacked(pose, meas, pts, rig, prior)
    cost = float(r @ r)
    its = 0
    converged = False
    while its < budget:
        its += 1
        H = J.T @ J
        g = J.T @ r
        try:
            delta = -np.linalg.solve(H + 1e-12 * np.eye(3) * max(np.trace(H), 1.0), g)
        except np.linalg.LinAlgError:
            break
        step = delta
        accepted = False
        for _ in range(cfg.max_halvings + 1):
            cand = pose + step
            r_c, J_c = _stacked(cand, meas, pts, rig, prior)
            c_c = float(r_c @ r_c)
            if np.isfinite(c_c) and c_c <= cost:
                accepted = True
                break
            step = step * 0.5
        if not accepted:
            converged = bool(np.linalg.norm(delta) < 1e-6)
            break
        small = np.linalg.norm(step) < 1e-10 or cost - c_c <= 1e-14 * max(cost, 1e-300)
        pose, r, J, cost = cand, r_c, J_c, c_c
        if small:
            converged = True
            break
    return pose, its, converged


def _measurements(pose, obs_l, obs_r, pts, rig, gate):
    lm_l, u_l = _associate(pose, obs_l, pts, rig, gate, 1)
    if obs_r is None:
        return lm_l, u_l, np.ones(len(lm_l), dtype=np.int64)
    lm_r, u_r = _associate(pose, obs_r, pts, rig, gate, -1)
    sides = np.concatenate([np.ones(len(lm_l), dtype=np.int64), -np.ones(len(lm_r), dtype=np.int64)])
    return np.concatenate([lm_l, lm_r]), np.concatenate([u_l, u_r]), sides


def track(map_state: DepthMapState, window: EventWindow | EventArray, init_pose: PoseSE2, rig: StereoRig,
          cfg: EstimatorConfig = EstimatorConfig(), require_initialized: bool = True,
          prior_sigma: tuple[float, float] | None = None, gap: float = 0.0,
          right: EventWindow | EventArray | None = None) -> TrackResult:
    """Align event windows with the map by Gauss-Newton over (x, y, theta).

    Observations are the newest column of each run of active columns in the
    left window, and in the ``right`` window when one is given. Each round
    pairs visible landmarks with them (unambiguous pairs only), then iterates
    Gauss-Newton with step halving when the cost rises. Rounds repeat while
    the association changes; gross outliers are dropped before the last solve.

    ``prior_sigma=(metres, radians)`` adds a Gaussian prior centred on
    ``init_pose``; it pins the lateral/yaw direction that same-depth landmarks
    leave nearly unobservable. ``gap`` (seconds since the pose the guess was
    predicted from) widens the plausibility check on the result. The returned
    Jacobian and residuals cover the measurements only.
    """
    if require_initialized and not map_state.initialized:
        raise MapNotInitializedError("depth map not initialized")
    obs_l = observed_columns(_window_events(window), rig)
    obs_r = observed_columns(_window_events(right), rig) if right is not None else None
    usable = map_state.trusted(cfg.track_min_fusions, cfg.trust_bad_fraction)
    pts = map_state.positions[usable]
    ids = map_state.ids[usable]
    pose = init_pose.as_array()
    prior = None
    if prior_sigma is not None:
        sxy, sth = prior_sigma
        prior = (pose.copy(), cfg.column_sigma / np.array([sxy, sxy, sth]))
    total_its = 0
    prev_key = None
    converged = False
    meas = None
    for _ in range(cfg.max_rounds):
        meas = _measurements(pose, obs_l, obs_r, pts, rig, cfg.assoc_gate)
        if len(meas[0]) < cfg.min_associations:
            raise UnderConstrainedError(f"only {len(meas[0])} associated measurements")
        key = (tuple(meas[0].tolist()), tuple(meas[2].tolist()))
        if key == prev_key:
            break
        prev_key = key
        pose, its, converged = _gauss_newton(pose, meas, pts, rig, cfg, cfg.max_iterations, prior)
        total_its += its
    r, J = _stacked(pose, meas, pts, rig, None)
    mad = 1.4826 * np.median(np.abs(r - np.median(r)))
    inlier = np.abs(r) <= max(cfg.outlier_px, 3.0 * mad)
    if not np.all(inlier):
        if inlier.sum() < cfg.min_associations:
            raise UnderConstrainedError(f"only {int(inlier.sum())} inliers")
        meas = tuple(m[inlier] for m in meas)
        pose, its, converged = _gauss_newton(pose, meas, pts, rig, cfg, cfg.max_iterations, prior)
        total_its += its
        r, J = _stacked(pose, meas, pts, rig, None)
    pose[2] = wrap_angle(pose[2])
    lm, _, sides = meas
    left_lm = lm[sides == 1]
    u_vis, z_vis, _ = predict_columns(pose, pts, rig)
    n_vis = int(np.sum((z_vis > rig.min_depth) & (u_vis >= 0) & (u_vis < rig.image_width)))
    if len(left_lm) < max(cfg.min_left_associations, cfg.min_assoc_fraction * n_vis):
        raise TrackingLostError(f"{len(left_lm)} of {n_vis} visible landmarks associated")
    if right is not None:
        support = right_support(pose, pts[left_lm], _window_events(right), rig, cfg.assoc_gate)
        if support < cfg.min_right_support:
            raise TrackingLostError(f"right camera supports {support:.0%} of associations")
    rms = math.sqrt(float(r @ r) / len(r))
    jump = math.hypot(pose[0] - init_pose.x, pose[1] - init_pose.y)
    turn = abs(wrap_angle(pose[2] - init_pose.theta))
    if rms > cfg.max_rms_px or jump > cfg.max_jump + cfg.max_jump_rate * gap \
            or turn > cfg.max_turn + cfg.max_turn_rate * gap:
        raise TrackingLostError(f"implausible solution: rms {rms:.2f}px, jump {jump:.3f}m, turn {turn:.3f}rad")
    return TrackResult(PoseSE2.from_array(pose), J, r, converged, total_its, ids[lm], sides)


def right_support(pose, points: np.ndarray, right: EventArray, rig: StereoRig, gate: float) -> float:
    """Share of ``points`` whose right-camera projection has an active column within ``gate``."""
    if len(points) == 0:
        return 0.0
    ts, _ = time_surface(right, rig.image_width)
    act = np.nonzero(np.isfinite(ts))[0] + 0.5
    if len(act) == 0:
        return 0.0
    u_r, _ = project_many(rig, np.asarray(pose, dtype=np.float64)[None], points, -1)
    return float(np.mean(np.min(np.abs(u_r[0][:, None] - act[None, :]), axis=1) <= gate))


def fim_trace(result: TrackResult, i_max: float = 1e6) -> float:
    """Information score trace(J^T J) / sum(res^2); ``i_max`` for an exact fit."""
    J = np.asarray(result.jacobian, dtype=np.float64)
    r = np.asarray(result.residuals, dtype=np.float64)
    if r.size == 0:
        raise ValueError("no residuals")
    ss = float(r @ r)
    tr = float(np.sum(J * J))
    if ss <= 0.0:
        return i_max
    return tr / ss


def adaptive_window(stream: EventArray, t: float, n_events: int, t_min: float, t_max: float) -> EventArray:
    """Events in ``[t - span, t]`` where span covers the last ``n_events`` events, clipped to ``[t_min, t_max]``."""
    hi = int(np.searchsorted(stream.t, t, side="right"))
    lo = max(0, hi - n_events)
    span = t - stream.t[lo] if hi > lo else t_max
    span = min(max(span, t_min), t_max)
    return stream.slice_time(t - span, t)


def count_events(window: EventWindow | EventArray) -> int:
    return len(_window_events(window))
