"""Experiment orchestration: configs, calibration, seeded episodes and comparisons.

An :class:`ExperimentConfig` is a tree of small dataclasses that flattens to
dotted keys (``trainer.learning_rate = 0.2``). That flat text form is what
config files, CLI overrides and the report echo all use, so every constant a
run depended on is visible in its output.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .estimator import EstimatorConfig
from .events import EncoderConfig, EventArray, encode_stream, load_events, write_events
from .metrics import (EnergyModel, Metrics, TriggerLogView, compute_metrics, format_delta, metrics_csv,
                      spearman)
from .policy import DualPolicy, FixedAgent, QAgent, TrainerConfig, TriggerLog, run_decision_loop
from .rewards import EstimatorRewardSource, RewardConfig
from .simworld import (Landmark, SceneConfig, StereoRig, Trajectory, make_landmarks, make_trajectory,
                       synthesize_events)
from .snn import NeuronParams, SeanConfig, load_checkpoint, save_checkpoint


class ConfigError(ValueError):
    pass


class CalibrationError(RuntimeError):
    pass


POLICIES = ("sean", "always", "never", "random", "sean-map", "sean-track")


@dataclass(frozen=True)
class EncoderSettings:
    # the simulated sensor is one pixel row, so the grid is a row of column bins
    grid_w: int = 16
    grid_h: int = 1
    split_polarity: bool = True


@dataclass(frozen=True)
class SnnSettings:
    n_hidden: int = 128
    lif: NeuronParams = field(default_factory=NeuronParams)
    li: NeuronParams = field(default_factory=NeuronParams)
    input_gain: float = 2.0
    surrogate_slope: float = 4.0
    activation: str = "identity"
    shared_row: bool = False
    detach_reset: bool = False

    def network(self, n_in: int) -> SeanConfig:
        return SeanConfig(n_in=n_in, n_hidden=self.n_hidden, lif=self.lif, li=self.li,
                          input_gain=self.input_gain, surrogate_slope=self.surrogate_slope,
                          activation=self.activation, shared_row=self.shared_row,
                          detach_reset=self.detach_reset)


@dataclass(frozen=True)
class CalibrationSettings:
    """Reward calibration episodes run on the experiment's own scene before learning.

    ``enabled`` sets lambda_e (``energy_ratio`` of the median information per
    median event count) and rescales each channel to unit median information.
    ``idle`` additionally sets R_idle to the mean trigger-minus-idle reward gap
    seen under a random ``probe_p`` policy, so that the learned trigger
    threshold sits mid-distribution.
    """

    enabled: bool = True
    idle: bool = False
    duration: float = 30.0
    energy_ratio: float = 0.2
    probe_p: float = 0.5
    settle: float = 1.0


@dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    duration: float = 60.0
    policy: str = "sean"
    random_p: float = 0.5
    freeze_after: float | None = None
    eval_fraction: float = 1.0 / 3.0
    map_pose_source: str = "gt"
    speed_bin: float = 0.5
    relocalize_after: float = 0.5


@dataclass(frozen=True)
class ExperimentConfig:
    run: RunSettings = field(default_factory=RunSettings)
    scene: SceneConfig = field(default_factory=SceneConfig)
    rig: StereoRig = field(default_factory=StereoRig)
    encoder: EncoderSettings = field(default_factory=EncoderSettings)
    snn: SnnSettings = field(default_factory=SnnSettings)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    calibration: CalibrationSettings = field(default_factory=CalibrationSettings)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    energy: EnergyModel = field(default_factory=EnergyModel)

    def __post_init__(self):
        r = self.run
        if r.policy not in POLICIES:
            raise ConfigError(f"unknown policy {r.policy!r}; choose from {', '.join(POLICIES)}")
        if not r.duration > 0:
            raise ConfigError("run.duration must be positive")
        if not 0 < r.eval_fraction <= 1:
            raise ConfigError("run.eval_fraction must lie in (0, 1]")
        if not 0 <= r.random_p <= 1:
            raise ConfigError("run.random_p must lie in [0, 1]")
        if self.rig.image_width % self.encoder.grid_w or self.encoder.grid_h != 1:
            raise ConfigError("encoder grid must divide the sensor (image_width x 1)")

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(sensor_width=self.rig.image_width, sensor_height=1, grid_w=self.encoder.grid_w,
                             grid_h=self.encoder.grid_h, split_polarity=self.encoder.split_polarity)

    @property
    def eval_start(self) -> float:
        return self.run.duration * (1.0 - self.run.eval_fraction)

    def to_flat(self) -> dict[str, object]:
        return flatten(self)

    def to_text(self) -> str:
        return "".join(f"{k} = {format_value(v)}\n" for k, v in self.to_flat().items())

    def with_overrides(self, overrides: dict[str, str] | Sequence[str]) -> "ExperimentConfig":
        return apply_overrides(self, overrides)


# Settings used for the closed-loop learning experiments. Library defaults
# keep the published hyperparameters; these adapt them to the tiny simulated
# sensor (see README, "Experiment presets").
PRESETS: dict[str, dict[str, str]] = {
    "defaults": {},
    "desk-scale": {
        "snn.li.tau": "16",
        "trainer.learning_rate": "0.02",
        "trainer.buffer_capacity": "1000",
        "reward.compounding": "true",
        "calibration.idle": "true",
        "run.duration": "150",
        "run.freeze_after": "100",
    },
}


# ---------------------------------------------------------------------------
# flat key-value form

def flatten(obj, prefix: str = "") -> dict[str, object]:
    out: dict[str, object] = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if is_dataclass(v):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_like(text: str, default, key: str):
    s = text.strip()
    if s.lower() == "none":
        return None
    try:
        if isinstance(default, bool):
            if s.lower() in ("true", "1", "yes", "on"):
                return True
            if s.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(s)
        if isinstance(default, int):
            return int(s)
        if isinstance(default, float) or default is None:
            return float(s)
        if isinstance(default, tuple):
            return tuple(float(x) for x in s.split(",") if x.strip())
        return s
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r}") from None


def _rebuild(obj, values: dict[str, object], prefix: str = ""):
    kwargs = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        kwargs[f.name] = _rebuild(v, values, key + ".") if is_dataclass(v) else values[key]
    try:
        return type(obj)(**kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: {exc}") from exc


def parse_assignments(lines: Sequence[str]) -> dict[str, str]:
    """``key = value`` lines (``#`` comments, blank lines ignored) to a dict."""
    out: dict[str, str] = {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {raw.strip()!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def apply_overrides(cfg: ExperimentConfig, overrides: dict[str, str] | Sequence[str]) -> ExperimentConfig:
    if not isinstance(overrides, dict):
        overrides = parse_assignments(overrides)
    flat = cfg.to_flat()
    for k, text in overrides.items():
        if k not in flat:
            raise ConfigError(f"unknown config key {k!r}")
        flat[k] = _parse_like(text, flat[k], k)
    return _rebuild(cfg, flat)


def load_config(path=None, preset: str = "defaults", overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Preset, then file, then ``key=value`` overrides, each layered on the last."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    cfg = apply_overrides(ExperimentConfig(), PRESETS[preset])
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        cfg = apply_overrides(cfg, text.splitlines())
    return apply_overrides(cfg, list(overrides))


# ---------------------------------------------------------------------------
# worlds

@dataclass
class World:
    """Everything the episode consumes from the simulator."""

    trajectory: Trajectory
    landmarks: list[Landmark]
    left: EventArray
    right: EventArray

    def stream_hash(self) -> str:
        h = hashlib.sha256()
        for ev in (self.left, self.right):
            for a in (ev.t, ev.x, ev.y, ev.p):
                h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


def build_world(cfg: ExperimentConfig) -> World:
    rng = np.random.default_rng(cfg.run.seed)
    lms = make_landmarks(cfg.scene, rng)
    traj = make_trajectory(cfg.scene, cfg.run.duration, rng)
    left, right = synthesize_events(cfg.rig, traj, lms)
    return World(traj, lms, left, right)


def save_world(world: World, cfg: ExperimentConfig, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_events(out / "left.txt", world.left)
    write_events(out / "right.txt", world.right)
    with open(out / "trajectory.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "y", "theta"])
        for t, p in zip(world.trajectory.times, world.trajectory.poses):
            w.writerow([repr(float(t)), *(repr(float(x)) for x in p)])
    with open(out / "landmarks.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "x", "y"])
        for lm in world.landmarks:
            w.writerow([lm.id, repr(float(lm.position[0])), repr(float(lm.position[1]))])
    (out / "scene.cfg").write_text(cfg.to_text())
    (out / "generator.json").write_text(json.dumps(world.trajectory.generator, indent=2, sort_keys=True))


def load_world(scene_dir, rig: StereoRig) -> World:
    d = Path(scene_dir)
    dims = rig.sensor_dims
    left = load_events(d / "left.txt", dims)
    right = load_events(d / "right.txt", dims)
    with open(d / "trajectory.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    traj = Trajectory(np.array([float(r["t"]) for r in rows]),
                      np.array([[float(r["x"]), float(r["y"]), float(r["theta"])] for r in rows]))
    with open(d / "landmarks.csv", newline="") as fh:
        lms = [Landmark(int(r["id"]), (float(r["x"]), float(r["y"]))) for r in csv.DictReader(fh)]
    return World(traj, lms, left, right)


# ---------------------------------------------------------------------------
# episodes

def make_policy(cfg: ExperimentConfig, checkpoints: dict | None = None) -> DualPolicy:
    name, seed = cfg.run.policy, cfg.run.seed
    if name == "always":
        return DualPolicy(FixedAgent(1.0), FixedAgent(1.0))
    if name == "never":
        return DualPolicy(FixedAgent(0.0), FixedAgent(0.0))
    if name == "random":
        ss = np.random.SeedSequence(seed)
        a, b = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
        return DualPolicy(FixedAgent(cfg.run.random_p, a), FixedAgent(cfg.run.random_p, b))
    net_cfg = cfg.snn.network(cfg.encoder_config().size)
    pol = DualPolicy.create(net_cfg, cfg.trainer, seed=seed, learn_map=name in ("sean", "sean-map"),
                            learn_track=name in ("sean", "sean-track"))
    for ch, net in (checkpoints or {}).items():
        agent = pol.agent(ch)
        if not isinstance(agent, QAgent):
            continue
        if net.cfg != net_cfg:
            raise ConfigError(f"{ch} checkpoint network config does not match the experiment")
        agent.net = net
        agent.target = net.copy()
    return pol


def _reward_source(cfg: ExperimentConfig, world: World, reward_cfg: RewardConfig) -> EstimatorRewardSource:
    return EstimatorRewardSource(cfg.rig, world.trajectory, world.left, world.right, cfg.estimator, reward_cfg,
                                 map_pose_source=cfg.run.map_pose_source,
                                 relocalize_after=cfg.run.relocalize_after)


def _loop(cfg: ExperimentConfig, world: World, reward_cfg: RewardConfig, policy: DualPolicy, duration: float,
          frames: np.ndarray, freeze_after: float | None = None):
    src = _reward_source(cfg, world, reward_cfg)
    log, policy = run_decision_loop(policy, frames[: int(round(duration / 0.001))], src, duration,
                                    freeze_after=freeze_after)
    return src, log, policy


def calibrate_rewards(cfg: ExperimentConfig, world: World, frames: np.ndarray | None = None
                      ) -> tuple[RewardConfig, dict]:
    """Fit lambda_e, channel scales and (optionally) R_idle on calibration episodes."""
    c = cfg.calibration
    base = cfg.reward
    if not c.enabled:
        return base, {}
    dur = min(c.duration, cfg.run.duration)
    if frames is None:
        frames = encode_stream(world.left, cfg.encoder_config(), int(round(dur / 0.001)))
    src, _, _ = _loop(cfg, world, base, DualPolicy(FixedAgent(1.0), FixedAgent(1.0)), dur, frames)
    ms, ts = src.map_stats, src.track_stats
    in_map = np.array(ms.phase) == "map"
    map_info = np.array(ms.info)[in_map]
    track_info = np.array(ts.info)
    if len(map_info) == 0:
        raise CalibrationError(f"depth map did not initialize within the {dur:g} s calibration episode")
    med_m = float(np.median(map_info))
    med_t = float(np.median(track_info[track_info > 0])) if np.any(track_info > 0) else 0.0
    ne_m = float(np.median(np.array(ms.n_e)[in_map]))
    ne_t = float(np.median(ts.n_e))
    if min(med_m, med_t, ne_m, ne_t) <= 0:
        raise CalibrationError(f"degenerate calibration medians: map info {med_m}, track info {med_t}, "
                               f"events {ne_m}/{ne_t}")
    rc = replace(base, lambda_e_map=c.energy_ratio * med_m / ne_m, lambda_e_track=c.energy_ratio * med_t / ne_t,
                 scale_map=1.0 / med_m, scale_track=1.0 / med_t)
    details = {"median_map_info": med_m, "median_track_info": med_t, "median_events_map": ne_m,
               "median_events_track": ne_t}
    if c.idle:
        ss = np.random.SeedSequence([cfg.run.seed, 7])
        a, b = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
        probe = DualPolicy(FixedAgent(c.probe_p, a), FixedAgent(c.probe_p, b))
        src, log, _ = _loop(cfg, world, rc, probe, dur, frames)
        t_ok = (src.init_time if src.init_time is not None else dur) + c.settle
        gaps = {}
        for ch in ("map", "track"):
            recs = [r for r in log.channel(ch) if r.t > t_ok]
            on = [r.reward for r in recs if r.action == 1]
            off = [r.reward for r in recs if r.action == 0]
            if not on or not off:
                raise CalibrationError(f"probe episode has no {ch} trigger/idle contrast")
            gaps[ch] = float(np.mean(on) - np.mean(off))
        rc = replace(rc, r_idle_map=base.r_idle_map + gaps["map"] / rc.scale_map,
                     r_idle_track=base.r_idle_track + gaps["track"] / rc.scale_track)
        details.update(idle_gap_map=gaps["map"], idle_gap_track=gaps["track"])
    details.update({f"reward.{k}": v for k, v in rc.to_dict().items()})
    return rc, details


@dataclass
class RunReport:
    config: dict
    policy: str
    seed: int
    stream_hash: str
    calibration: dict
    eval_start: float
    metrics: Metrics            # final evaluation window
    metrics_full: Metrics       # whole episode
    speed_mtr_spearman: float
    n_decisions: dict
    estimator: dict
    timing: dict = field(default_factory=dict)
    # live objects for downstream emitters; not serialized
    log: TriggerLog | None = field(default=None, repr=False)
    world: World | None = field(default=None, repr=False)
    source: EstimatorRewardSource | None = field(default=None, repr=False)
    trained: DualPolicy | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "policy": self.policy, "seed": self.seed, "stream_hash": self.stream_hash,
            "eval_start": self.eval_start, "metrics": self.metrics.to_dict(),
            "metrics_full": self.metrics_full.to_dict(), "speed_mtr_spearman": self.speed_mtr_spearman,
            "n_decisions": self.n_decisions, "estimator": self.estimator, "calibration": self.calibration,
            "config": {k: format_value(v) for k, v in self.config.items()},
        }

    def to_json(self) -> str:
        """Deterministic JSON; wall-clock timing lives in :attr:`timing` only."""
        return json.dumps(_finite(self.to_dict()), indent=2, sort_keys=True) + "\n"


def _finite(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.generic):
        return _finite(obj.item())
    return obj


def run_episode(cfg: ExperimentConfig, world: World | None = None, checkpoints: dict | None = None,
                calibration: tuple[RewardConfig, dict] | None = None) -> RunReport:
    """Simulate, calibrate, run the closed loop and score it; deterministic in ``cfg``.

    ``calibration`` reuses a previous :func:`calibrate_rewards` result for the
    same config and world.
    """
    clock = {"start": time.perf_counter()}
    world = world or build_world(cfg)
    if world.trajectory.t_end < cfg.run.duration - 1e-9:
        raise ConfigError(f"scene covers {world.trajectory.t_end:g} s, shorter than run.duration")
    clock["world"] = time.perf_counter()
    n_steps = int(round(cfg.run.duration / 0.001))
    frames = encode_stream(world.left, cfg.encoder_config(), n_steps)
    reward_cfg, calib = calibration or calibrate_rewards(cfg, world, frames)
    clock["calibration"] = time.perf_counter()
    policy = make_policy(cfg, checkpoints)
    src, log, policy = _loop(cfg, world, reward_cfg, policy, cfg.run.duration, frames, cfg.run.freeze_after)
    clock["episode"] = time.perf_counter()

    est = src.estimated_trajectory()
    gt = (world.trajectory.times, world.trajectory.poses)
    t0 = cfg.eval_start
    keep = est[0] > t0
    lam_e, lam_p = 1e-9, 100.0     # giga-ops per decision against centimetres
    m_eval = compute_metrics(log, (est[0][keep], est[1][keep]), gt, cfg.energy, lam_e, lam_p,
                             TriggerLogView.from_log(log, t_min=t0))
    m_full = compute_metrics(log, est, gt, cfg.energy, lam_e, lam_p)
    report = RunReport(
        config=cfg.to_flat(), policy=cfg.run.policy, seed=cfg.run.seed, stream_hash=world.stream_hash(),
        calibration=calib, eval_start=t0, metrics=m_eval, metrics_full=m_full, speed_mtr_spearman=math.nan,
        n_decisions={"map": len(log.channel("map")), "track": len(log.channel("track"))},
        estimator={"track_failures": src.track_failures, "relocalizations": src.relocalizations,
                   "map_init_time": src.init_time, "landmarks": len(src.map.ids),
                   "estimates": len(src.estimates)},
        log=log, world=world, source=src, trained=policy)
    rows = emit_speed_vs_mtr(report, cfg.run.speed_bin, t_min=t0)
    report.speed_mtr_spearman = spearman([r[2] for r in rows], [r[3] for r in rows])
    clock["metrics"] = time.perf_counter()
    report.timing = {"world_s": clock["world"] - clock["start"],
                     "calibration_s": clock["calibration"] - clock["world"],
                     "episode_s": clock["episode"] - clock["calibration"],
                     "total_s": clock["metrics"] - clock["start"]}
    return report


def run_seeds(cfg: ExperimentConfig, seeds: Sequence[int], workers: int = 1) -> list[RunReport]:
    """Independent episodes, one per seed, optionally on worker threads."""
    cfgs = [cfg.with_overrides({"run.seed": str(s)}) for s in seeds]
    if workers <= 1:
        return [run_episode(c) for c in cfgs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_episode, cfgs))


def emit_speed_vs_mtr(report: RunReport, bin_s: float, t_min: float = 0.0) -> list[tuple]:
    """Rows ``(t0, t1, mean speed m/s, mapping trigger fraction, mapping Hz)`` per time bin after ``t_min``."""
    if report.log is None or report.world is None:
        raise ValueError("report carries no trigger log / trajectory")
    recs = report.log.channel("map")
    if not recs:
        raise ValueError("mapping channel is empty")
    t_end = max(r.t for r in recs)
    span = t_end - t_min
    if not bin_s > 0 or bin_s > span + 1e-9:
        raise ValueError(f"bin {bin_s} s does not fit the {span:g} s run")
    t = np.array([r.t for r in recs])
    a = np.array([r.action for r in recs], dtype=float)
    n_bins = int(math.floor(span / bin_s + 1e-9))
    rows = []
    traj = report.world.trajectory
    for k in range(n_bins):
        lo, hi = t_min + k * bin_s, t_min + (k + 1) * bin_s
        sel = (t > lo) & (t <= hi + 1e-9)
        if not np.any(sel):
            continue
        ts = np.linspace(lo, hi, 21)
        frac = float(a[sel].mean())
        rows.append((lo, hi, float(np.mean(traj.speeds(ts))), frac, frac * 20.0))
    return rows


def speed_vs_mtr_csv(rows: Sequence[tuple]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t0", "t1", "speed", "mtr_fraction", "mtr_hz"])
    for r in rows:
        w.writerow([f"{r[0]:.3f}", f"{r[1]:.3f}", f"{r[2]:.6f}", f"{r[3]:.6f}", f"{r[4]:.6f}"])
    return buf.getvalue()


def write_outputs(report: RunReport, out_dir, bin_s: float | None = None) -> Path:
    """Report JSON, TriggerLog CSV, metrics CSV, speed-vs-MTR CSV, map snapshot and checkpoints."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "timing.json").write_text(json.dumps(report.timing, indent=2, sort_keys=True) + "\n")
    (out / "config.cfg").write_text("".join(f"{k} = {format_value(v)}\n" for k, v in report.config.items()))
    report.log.write_csv(out / "trigger_log.csv")
    (out / "metrics.csv").write_text(metrics_csv({"eval": report.metrics, "full": report.metrics_full}))
    bin_s = bin_s or float(report.config["run.speed_bin"])
    (out / "speed_vs_mtr.csv").write_text(speed_vs_mtr_csv(emit_speed_vs_mtr(report, bin_s, report.eval_start)))
    report.source.map.write_csv(out / "map.csv")
    ts, ps = report.source.estimated_trajectory()
    with open(out / "estimates.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "y", "theta"])
        for t, p in zip(ts, ps):
            w.writerow([f"{t:.6f}", *(f"{x:.9g}" for x in p)])
    for ch in ("map", "track"):
        agent = report.trained.agent(ch)
        if isinstance(agent, QAgent):
            save_checkpoint(agent.net, out / f"{ch}_net.npz")
    return out


def load_checkpoints(directory) -> dict:
    d = Path(directory)
    return {ch: load_checkpoint(d / f"{ch}_net.npz") for ch in ("map", "track") if (d / f"{ch}_net.npz").exists()}


# ---------------------------------------------------------------------------
# comparisons

@dataclass
class Comparison:
    policies: list[str]
    reports: list[RunReport]

    COLUMNS = ("ape_rms", "ttr_hz", "mtr_hz", "energy_ops")

    def rows(self) -> list[dict]:
        base = self.reports[0].metrics
        out = []
        for name, rep in zip(self.policies, self.reports):
            m = rep.metrics
            row = {"policy": name}
            for col in self.COLUMNS:
                row[col] = getattr(m, col)
                row[col + "_delta"] = format_delta(getattr(base, col), getattr(m, col))
            out.append(row)
        return out

    def to_text(self) -> str:
        lines = [f"{'policy':<12}{'APE cm':>18}{'TTR Hz':>18}{'MTR Hz':>18}{'energy GOPs':>22}"]
        for r in self.rows():
            cells = [f"{r['policy']:<12}"]
            for col, scale, width in (("ape_rms", 1, 18), ("ttr_hz", 1, 18), ("mtr_hz", 1, 18),
                                      ("energy_ops", 1e-9, 22)):
                cells.append(f"{r[col] * scale:.2f} {r[col + '_delta']}".rjust(width))
            lines.append("".join(cells))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        rows = self.rows()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return buf.getvalue()


def compare(cfg: ExperimentConfig, policies: Sequence[str], world: World | None = None) -> Comparison:
    """Run each policy on the same scene and event streams; the first is the baseline."""
    if len(policies) < 2:
        raise ConfigError("compare needs at least two policies")
    world = world or build_world(cfg)
    calib = calibrate_rewards(cfg, world)
    reports = [run_episode(cfg.with_overrides({"run.policy": p}), world, calibration=calib) for p in policies]
    if len({r.stream_hash for r in reports}) != 1:
        raise RuntimeError("policies saw different event streams")
    return Comparison(list(policies), reports)
