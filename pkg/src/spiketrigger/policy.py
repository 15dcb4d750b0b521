"""Q-learning around the spiking trigger network and the dual map/track decision loop."""

from __future__ import annotations

import csv
import io
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .snn import PARAM_NAMES, SeanConfig, SeanNetwork, backward_batch, forward_batch, select_action

logger = logging.getLogger(__name__)

TRACK = "track"
MAP = "map"


@dataclass
class Transition:
    state_frames: np.ndarray
    action: int
    reward: float
    next_state_frames: np.ndarray
    terminal: bool = False


class ReplayBuffer:
    """Bounded FIFO of transitions; oldest evicted first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: deque[Transition] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def __getitem__(self, i: int) -> Transition:
        return self._items[i]

    def push(self, tr: Transition) -> None:
        self._items.append(tr)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        """Uniform sampling with replacement."""
        idx = rng.integers(0, len(self._items), size=batch_size)
        return [self._items[i] for i in idx]


def push_transition(buffer: ReplayBuffer, tr: Transition) -> ReplayBuffer:
    buffer.push(tr)
    return buffer


@dataclass
class TrainerConfig:
    batch_size: int = 32
    learning_rate: float = 0.2
    epsilon_init: float = 0.8
    epsilon_decay: float = 0.001
    epsilon_min: float = 0.01
    gamma: float = 0.9
    target_sync: int = 50
    buffer_capacity: int = 100
    grad_clip: float = 1.0
    window_cap: int = 32


def pad_windows(windows: Sequence[np.ndarray], n_in: int) -> np.ndarray:
    """Left-pad windows with silent frames to a common length.

    From rest, silent frames leave every voltage at rest, so padding does not
    change the final Q values.
    """
    t_max = max((len(w) for w in windows), default=0)
    out = np.zeros((len(windows), max(t_max, 1), n_in))
    for b, w in enumerate(windows):
        if len(w):
            out[b, out.shape[1] - len(w):] = w
    return out


class QAgent:
    """One trigger channel: online network, target network, epsilon schedule, replay."""

    def __init__(self, net: SeanNetwork, cfg: TrainerConfig, seed: int = 0):
        self.net = net
        self.target = net.copy()
        self.cfg = cfg
        self.buffer = ReplayBuffer(cfg.buffer_capacity)
        self.rng = np.random.default_rng(seed)
        self.epsilon = cfg.epsilon_init
        self.train_steps = 0
        self.frozen = False

    def q_window(self, frames) -> tuple[float, float]:
        frames = np.asarray(frames, dtype=np.float64).reshape(-1, self.net.cfg.n_in)[-self.cfg.window_cap:]
        q, _ = forward_batch(self.net, pad_windows([frames], self.net.cfg.n_in), record=False)
        return float(q[0, 0]), float(q[0, 1])

    def act(self, frames, epsilon: float | None = None) -> tuple[int, tuple[float, float]]:
        eps = self.epsilon if epsilon is None else epsilon
        q = self.q_window(frames)
        greedy = select_action(q)
        if eps > 0 and self.rng.random() < eps:
            return int(self.rng.integers(2)), q
        return greedy, q

    def push(self, tr: Transition):
        self.buffer.push(tr)

    def train_step(self) -> float | None:
        if self.frozen:
            return None
        return train_step(self, self.cfg)


def act(agent: QAgent, frames, epsilon: float) -> int:
    """Epsilon-greedy action; consumes the agent's RNG."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    return agent.act(frames, epsilon)[0]


def train_step(agent: QAgent, cfg: TrainerConfig) -> float | None:
    """One TD(0) minibatch update. Returns the loss, or ``None`` when skipped.

    Training starts once the buffer holds ``min(batch_size, capacity)``
    transitions; sampling is with replacement so small buffers still fill a
    full batch.
    """
    buf = agent.buffer
    if len(buf) < min(cfg.batch_size, buf.capacity) or cfg.learning_rate == 0:
        return None
    batch = buf.sample(cfg.batch_size, agent.rng)
    n_in = agent.net.cfg.n_in
    cap = cfg.window_cap
    states = pad_windows([np.asarray(tr.state_frames)[-cap:] for tr in batch], n_in)
    nexts = pad_windows([np.asarray(tr.next_state_frames)[-cap:] for tr in batch], n_in)
    actions = np.array([tr.action for tr in batch])
    rewards = np.array([tr.reward for tr in batch], dtype=np.float64)
    done = np.array([tr.terminal for tr in batch], dtype=np.float64)

    q_next, _ = forward_batch(agent.target, nexts, record=False)
    y = rewards + cfg.gamma * (1.0 - done) * q_next.max(axis=1)
    q, (trace, _, _) = forward_batch(agent.net, states)
    # column 0 is Q_on (action 1), column 1 is Q_off (action 0)
    col = np.where(actions == 1, 0, 1)
    q_sa = q[np.arange(len(batch)), col]
    err = q_sa - y
    loss = float(np.mean(err ** 2))
    grad_q = np.zeros_like(q)
    grad_q[np.arange(len(batch)), col] = 2.0 * err / len(batch)
    grads = backward_batch(agent.net, trace, grad_q)
    norm = math.sqrt(sum(float(np.sum(grads[k] ** 2)) for k in PARAM_NAMES))
    scale = cfg.learning_rate
    if cfg.grad_clip and norm > cfg.grad_clip:
        scale *= cfg.grad_clip / norm
    for k in PARAM_NAMES:
        agent.net.params[k] -= scale * grads[k]

    agent.train_steps += 1
    agent.epsilon = min(1.0, max(cfg.epsilon_min, cfg.epsilon_init - cfg.epsilon_decay * agent.train_steps))
    if cfg.target_sync and agent.train_steps % cfg.target_sync == 0:
        agent.target.load_params_from(agent.net)
    return loss


class FixedAgent:
    """Non-learning channel: always trigger (``p=1``), never, or Bernoulli(p)."""

    def __init__(self, p_trigger: float = 1.0, seed: int = 0):
        self.p = p_trigger
        self.rng = np.random.default_rng(seed)
        self.epsilon = 0.0
        self.frozen = True

    def act(self, frames, epsilon=None):
        if self.p >= 1.0:
            a = 1
        elif self.p <= 0.0:
            a = 0
        else:
            a = int(self.rng.random() < self.p)
        return a, (math.nan, math.nan)

    def push(self, tr):
        pass

    def train_step(self):
        return None


# ---------------------------------------------------------------------------
# decision loop

class RewardSource(Protocol):
    """Estimator-side callback interface used by :func:`run_decision_loop`."""

    @property
    def initialized(self) -> bool: ...

    def map_reward(self, t: float, action: int) -> float: ...

    def track_reward(self, t: float, action: int) -> float: ...


class RewardCallbackError(RuntimeError):
    pass


@dataclass
class TriggerRecord:
    t: float
    channel: str
    action: int
    epsilon: float
    q_on: float
    q_off: float
    reward: float


@dataclass
class TriggerLog:
    records: list[TriggerRecord] = field(default_factory=list)

    COLUMNS = ("t", "channel", "action", "epsilon", "q_on", "q_off", "reward")

    def append(self, rec: TriggerRecord):
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def channel(self, name: str) -> list[TriggerRecord]:
        return [r for r in self.records if r.channel == name]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.records:
            w.writerow([f"{r.t:.6f}", r.channel, r.action, f"{r.epsilon:.6f}",
                        f"{r.q_on:.9g}", f"{r.q_off:.9g}", f"{r.reward:.9g}"])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def read_csv(cls, path) -> "TriggerLog":
        log = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                log.append(TriggerRecord(float(row["t"]), row["channel"], int(row["action"]),
                                         float(row["epsilon"]), float(row["q_on"]), float(row["q_off"]),
                                         float(row["reward"])))
        return log


@dataclass
class DualPolicy:
    """Independent mapping and tracking agents plus their decision rates (Hz)."""

    map_agent: QAgent | FixedAgent
    track_agent: QAgent | FixedAgent
    map_rate: float = 20.0
    track_rate: float = 100.0

    @classmethod
    def create(cls, net_cfg: SeanConfig, trainer: TrainerConfig, seed: int = 0,
               learn_map: bool = True, learn_track: bool = True, **rates) -> "DualPolicy":
        ss = np.random.SeedSequence(seed)
        map_seed, track_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))

        def make(flag, s):
            if not flag:
                return FixedAgent(1.0, s)
            net = SeanNetwork(net_cfg, rng=np.random.default_rng(s))
            return QAgent(net, trainer, seed=s + 1)

        return cls(make(learn_map, map_seed), make(learn_track, track_seed), **rates)

    def agent(self, channel: str):
        return self.map_agent if channel == MAP else self.track_agent

    def freeze(self):
        for ag in (self.map_agent, self.track_agent):
            ag.frozen = True
            ag.epsilon = 0.0


def decision_schedule(duration: float, rate: float) -> np.ndarray:
    """Decision instants ``k / rate`` for ``k = 1 .. floor(duration * rate)``."""
    n = int(math.floor(duration * rate + 1e-9))
    return np.arange(1, n + 1) / rate


def run_decision_loop(policy: DualPolicy, frames: np.ndarray, reward_source: RewardSource, duration: float,
                      step: float = 0.001, freeze_after: float | None = None,
                      log: TriggerLog | None = None) -> tuple[TriggerLog, DualPolicy]:
    """Clocked closed loop over a precomputed spike raster.

    ``frames[k]`` is the spike vector of network step k. At each decision
    instant the channel's agent sees the frames since its previous decision,
    acts, receives a reward from ``reward_source`` and completes the previous
    transition of that channel; one training step follows every decision.
    Mapping decisions are taken before tracking decisions that share an
    instant, so tracking sees the freshest map.
    """
    log = log if log is not None else TriggerLog()
    events = []
    for ch, rate in ((MAP, policy.map_rate), (TRACK, policy.track_rate)):
        for t in decision_schedule(duration, rate):
            events.append((round(t / step), 0 if ch == MAP else 1, ch))
    events.sort()
    last_step = {MAP: 0, TRACK: 0}
    pending: dict[str, tuple] = {}
    frozen = False
    for n, _, ch in events:
        t = n * step
        if freeze_after is not None and not frozen and t > freeze_after + 1e-12:
            policy.freeze()
            frozen = True
        agent = policy.agent(ch)
        lo = max(last_step[ch], n - getattr(getattr(agent, "cfg", None), "window_cap", 32))
        window = frames[lo:n]
        last_step[ch] = n
        eps = float(agent.epsilon)
        a, (q_on, q_off) = agent.act(window)
        try:
            r = reward_source.map_reward(t, a) if ch == MAP else reward_source.track_reward(t, a)
        except Exception as exc:
            raise RewardCallbackError(f"{ch} reward failed at t={t:.3f}s (action {a}): {exc}") from exc
        if ch in pending:
            s_prev, a_prev, r_prev = pending[ch]
            agent.push(Transition(s_prev, a_prev, r_prev, window, False))
        agent.train_step()
        pending[ch] = (window, a, float(r))
        log.append(TriggerRecord(t, ch, a, eps, q_on, q_off, float(r)))
    for ch, (s_prev, a_prev, r_prev) in pending.items():
        agent = policy.agent(ch)
        agent.push(Transition(s_prev, a_prev, r_prev, np.zeros((0, frames.shape[1])), True))
    return log, policy
