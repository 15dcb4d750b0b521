"""Accuracy, triggering-rate and energy metrics over trigger logs and trajectories."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.stats import spearmanr

from .policy import TriggerLog
from .simworld import PoseSE2, wrap_angle


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class TriggerLogView:
    """Per-channel action sequences plus the decision frequency of each channel."""

    map_actions: np.ndarray
    track_actions: np.ndarray
    map_rate: float = 20.0
    track_rate: float = 100.0

    @classmethod
    def from_log(cls, log: TriggerLog, map_rate: float = 20.0, track_rate: float = 100.0,
                 t_min: float | None = None, t_max: float | None = None) -> "TriggerLogView":
        """Build a view, optionally restricted to decisions with ``t_min < t <= t_max``."""
        def pick(ch):
            acts = [r.action for r in log.channel(ch)
                    if (t_min is None or r.t > t_min) and (t_max is None or r.t <= t_max)]
            return np.asarray(acts, dtype=np.int64)
        return cls(pick("map"), pick("track"), map_rate, track_rate)

    @classmethod
    def from_actions(cls, map_actions=(), track_actions=(), **rates) -> "TriggerLogView":
        return cls(np.asarray(map_actions, dtype=np.int64), np.asarray(track_actions, dtype=np.int64), **rates)


def _as_view(log) -> TriggerLogView:
    return log if isinstance(log, TriggerLogView) else TriggerLogView.from_log(log)


def _rate(actions: np.ndarray, freq: float, name: str) -> tuple[float, float]:
    if len(actions) == 0:
        raise MetricsError(f"{name} channel is empty")
    frac = float(np.mean(actions))
    return frac, frac * freq


def ttr(log) -> tuple[float, float]:
    """Tracking trigger rate as ``(fraction, Hz)``."""
    v = _as_view(log)
    return _rate(v.track_actions, v.track_rate, "tracking")


def mtr(log) -> tuple[float, float]:
    """Mapping trigger rate as ``(fraction, Hz)``."""
    v = _as_view(log)
    return _rate(v.map_actions, v.map_rate, "mapping")


@dataclass(frozen=True)
class EnergyModel:
    """Operation counts charged per triggered computation."""

    e_map: float = 2600e6
    e_track: float = 1800e6

    def __post_init__(self):
        if not (self.e_map > 0 and self.e_track > 0):
            raise ValueError("operation counts must be positive")


def energy(log, model: EnergyModel = EnergyModel()) -> float:
    v = _as_view(log)
    return float(np.sum(v.map_actions)) * model.e_map + float(np.sum(v.track_actions)) * model.e_track


def mean_energy(log, model: EnergyModel = EnergyModel()) -> float:
    """Energy per decision instant (the finer, tracking schedule)."""
    v = _as_view(log)
    n = max(len(v.track_actions), len(v.map_actions))
    return energy(v, model) / n if n else 0.0


# ---------------------------------------------------------------------------
# trajectory accuracy

def _traj_arrays(traj) -> tuple[np.ndarray, np.ndarray]:
    """Accept ``(times, poses (N, 3))`` or a sequence of ``(t, PoseSE2)``."""
    if isinstance(traj, tuple) and len(traj) == 2 and np.ndim(traj[0]) == 1 and np.ndim(traj[1]) == 2:
        ts, ps = traj
        return np.asarray(ts, dtype=float), np.asarray(ps, dtype=float).reshape(-1, 3)
    items = list(traj)
    if not items:
        return np.zeros(0), np.zeros((0, 3))
    ts = np.array([t for t, _ in items], dtype=float)
    ps = np.array([p.as_array() if isinstance(p, PoseSE2) else np.asarray(p, float) for _, p in items])
    return ts, ps


def match_nearest(est_t: np.ndarray, gt_t: np.ndarray, max_dt: float = 0.005) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs ``(i_est, i_gt)`` of nearest timestamps within ``max_dt``."""
    if len(est_t) == 0 or len(gt_t) == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    order = np.argsort(gt_t, kind="stable")
    g = gt_t[order]
    j = np.clip(np.searchsorted(g, est_t), 1, len(g) - 1) if len(g) > 1 else np.zeros(len(est_t), dtype=int)
    left = np.maximum(j - 1, 0)
    pick = np.where(np.abs(g[left] - est_t) <= np.abs(g[j] - est_t), left, j)
    ok = np.abs(g[pick] - est_t) <= max_dt
    return np.nonzero(ok)[0], order[pick[ok]]


def _relative_translation(gt: np.ndarray, est: np.ndarray) -> np.ndarray:
    # translation part of gt^-1 * est, row-wise
    d = est[:, :2] - gt[:, :2]
    c, s = np.cos(gt[:, 2]), np.sin(gt[:, 2])
    return np.stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1]], axis=1)


def align_se2(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Rigid planar transform ``(x, y, theta)`` minimising ``|T·src - dst|`` over positions."""
    mu_s, mu_d = src[:, :2].mean(0), dst[:, :2].mean(0)
    a, b = src[:, :2] - mu_s, dst[:, :2] - mu_d
    h = a.T @ b
    theta = math.atan2(h[0, 1] - h[1, 0], h[0, 0] + h[1, 1])
    c, s = math.cos(theta), math.sin(theta)
    t = mu_d - np.array([[c, -s], [s, c]]) @ mu_s
    return np.array([t[0], t[1], theta])


def _apply_se2(T: np.ndarray, poses: np.ndarray) -> np.ndarray:
    c, s = math.cos(T[2]), math.sin(T[2])
    out = poses.copy()
    out[:, 0] = T[0] + c * poses[:, 0] - s * poses[:, 1]
    out[:, 1] = T[1] + s * poses[:, 0] + c * poses[:, 1]
    out[:, 2] = wrap_angle(poses[:, 2] + T[2])
    return out


def pose_errors(est, gt, max_dt: float = 0.005, align: bool = False) -> np.ndarray:
    """Per-pair translation error in metres after nearest-timestamp matching."""
    et, ep = _traj_arrays(est)
    gtt, gp = _traj_arrays(gt)
    ie, ig = match_nearest(et, gtt, max_dt)
    if len(ie) < 2:
        raise MetricsError(f"need at least 2 matched pose pairs, found {len(ie)}")
    e, g = ep[ie], gp[ig]
    if align:
        e = _apply_se2(align_se2(e, g), e)
    return np.linalg.norm(_relative_translation(g, e), axis=1)


def ape(est, gt, max_dt: float = 0.005, align: bool = False) -> tuple[float, float]:
    """Absolute pose error ``(rms, std)`` in centimetres."""
    err = pose_errors(est, gt, max_dt, align) * 100.0
    return float(np.sqrt(np.mean(err ** 2))), float(np.std(err))


def objective(log, est, gt, model: EnergyModel = EnergyModel(), lambda_e: float = 1.0,
              lambda_p: float = 1.0, max_dt: float = 0.005) -> float:
    """``lambda_e * mean energy per decision + lambda_p * mean pose-error norm (m)``."""
    e_term = lambda_e * mean_energy(log, model) if lambda_e else 0.0
    p_term = lambda_p * float(np.mean(pose_errors(est, gt, max_dt))) if lambda_p else 0.0
    return e_term + p_term


# ---------------------------------------------------------------------------
# reporting helpers

def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Rank correlation; 0 when either series is constant (no ordering to correlate)."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if len(x) != len(y):
        raise MetricsError("series lengths differ")
    if len(x) < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0
    return float(spearmanr(x, y).statistic)


def format_delta(baseline: float, value: float) -> str:
    """Relative change in the ``(↓38%)`` / ``(↑5%)`` style; ``(0%)`` when unchanged."""
    if not (math.isfinite(baseline) and math.isfinite(value)):
        return "(n/a)"
    if baseline == 0:
        return "(0%)" if value == 0 else "(n/a)"
    pct = (value - baseline) / abs(baseline) * 100.0
    if round(pct) == 0:
        return "(0%)"
    return f"({'↑' if pct > 0 else '↓'}{abs(pct):.0f}%)"


@dataclass
class Metrics:
    ape_rms: float
    ape_std: float
    ttr_fraction: float
    ttr_hz: float
    mtr_fraction: float
    mtr_hz: float
    energy_ops: float
    objective: float

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(log: TriggerLog, est, gt, model: EnergyModel = EnergyModel(), lambda_e: float = 1e-9,
                    lambda_p: float = 1.0, view: TriggerLogView | None = None) -> Metrics:
    """All headline metrics; APE fields are NaN when too few estimates exist."""
    v = view or TriggerLogView.from_log(log)
    tf, th = ttr(v)
    mf, mh = mtr(v)
    try:
        rms, std = ape(est, gt)
        obj = objective(v, est, gt, model, lambda_e, lambda_p)
    except MetricsError:
        rms = std = obj = math.nan
    return Metrics(rms, std, tf, th, mf, mh, energy(v, model), obj)


def metrics_json(metrics: Metrics, config: dict | None = None) -> str:
    body = {"metrics": metrics.to_dict()}
    if config is not None:
        body["config"] = config
    return json.dumps(body, indent=2, sort_keys=True, allow_nan=True)


def metrics_csv(rows: dict[str, Metrics]) -> str:
    """One row per named run."""
    buf = io.StringIO()
    names = list(Metrics.__dataclass_fields__)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run", *names])
    for run, m in rows.items():
        w.writerow([run, *(f"{getattr(m, k):.9g}" for k in names)])
    return buf.getvalue()
