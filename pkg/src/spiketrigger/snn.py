"""Spiking trigger network: LIF input layer, LI integration layer, ON/OFF Q heads.

Dynamics per 1 ms step (``t`` indexes steps, ``i`` LIF neurons, ``j`` LI neurons)::

    H_i   = V_i + (-(V_i - V_r) + E_i) / tau
    S_i   = heaviside(H_i - V_th)            # heaviside(0) = 1
    V_i   = H_i * (1 - S_i) + V_r * S_i
    U_j   = U_j + (-(U_j - V_r) + sum_i W[j, i] * S_i) / tau_li
    Q_on  = sum_j act(w_on[j] * U_j + b_on[j])   (same for Q_off)

Training uses backpropagation through time. The heaviside derivative is
replaced by the derivative of ``sigmoid(k * x)``. Running the forward pass
with ``spike_mode="smooth"`` swaps the heaviside for that same sigmoid, which
makes the backward pass the exact gradient of the forward pass; the gradient
checks rely on this.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


def heaviside(x):
    return (np.asarray(x) >= 0).astype(np.float64)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def surrogate_grad(x, slope: float):
    s = sigmoid(slope * x)
    return slope * s * (1.0 - s)


_ACTIVATIONS = {
    "identity": (lambda z: z, lambda z: np.ones_like(z)),
    "sigmoid": (sigmoid, lambda z: sigmoid(z) * (1.0 - sigmoid(z))),
}


@dataclass(frozen=True)
class NeuronParams:
    v_th: float = 1.0
    v_r: float = 0.0
    tau: float = 2.0

    def __post_init__(self):
        if not self.v_th > self.v_r:
            raise ValueError("v_th must exceed v_r")
        if not self.tau >= 1:
            raise ValueError("tau must be >= 1")


@dataclass
class LifLayerState:
    v: np.ndarray
    params: NeuronParams = field(default_factory=NeuronParams)


@dataclass
class LiLayerState:
    v: np.ndarray
    weights: np.ndarray  # (M, IN)
    params: NeuronParams = field(default_factory=NeuronParams)


@dataclass
class QHead:
    w_on: np.ndarray
    b_on: np.ndarray
    w_off: np.ndarray
    b_off: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        m = len(self.w_on)
        if not (len(self.b_on) == len(self.w_off) == len(self.b_off) == m):
            raise ShapeError("head parameter vectors must share length M")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


def lif_step(state: LifLayerState, inp) -> tuple[LifLayerState, np.ndarray]:
    """One LIF update. Returns the new state and the binary spike vector."""
    inp = np.asarray(inp, dtype=np.float64)
    if inp.shape != state.v.shape:
        raise ShapeError(f"input length {inp.shape} != LIF size {state.v.shape}")
    p = state.params
    h = state.v + (-(state.v - p.v_r) + inp) / p.tau
    s = heaviside(h - p.v_th)
    v = h * (1.0 - s) + p.v_r * s
    # spiked neurons sit exactly at rest
    v = np.where(s > 0, p.v_r, v)
    return replace(state, v=v), s


def li_step(state: LiLayerState, spikes) -> LiLayerState:
    """One leaky-integrator update driven by LIF spikes. No firing, no reset."""
    spikes = np.asarray(spikes, dtype=np.float64)
    if spikes.shape != (state.weights.shape[1],):
        raise ShapeError(f"spike length {spikes.shape} != LI fan-in {state.weights.shape[1]}")
    p = state.params
    v = state.v + (-(state.v - p.v_r) + state.weights @ spikes) / p.tau
    return replace(state, v=v)


def q_values(head: QHead, li_voltages) -> tuple[float, float]:
    li_voltages = np.asarray(li_voltages, dtype=np.float64)
    if li_voltages.shape != head.w_on.shape:
        raise ShapeError("LI voltage length != head size")
    act = _ACTIVATIONS[head.activation][0]
    q_on = float(np.sum(act(head.w_on * li_voltages + head.b_on)))
    q_off = float(np.sum(act(head.w_off * li_voltages + head.b_off)))
    return q_on, q_off


def select_action(q) -> int:
    """1 (trigger) when Q_on >= Q_off, ties included."""
    q_on, q_off = q
    return int(q_on - q_off >= 0)


@dataclass(frozen=True)
class SeanConfig:
    n_in: int
    n_hidden: int = 128
    lif: NeuronParams = field(default_factory=NeuronParams)
    li: NeuronParams = field(default_factory=NeuronParams)
    input_gain: float = 2.0
    surrogate_slope: float = 4.0
    activation: str = "identity"
    shared_row: bool = False
    detach_reset: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SeanConfig":
        d = dict(d)
        d["lif"] = NeuronParams(**d["lif"])
        d["li"] = NeuronParams(**d["li"])
        return cls(**d)


PARAM_NAMES = ("w_lif", "w_on", "b_on", "w_off", "b_off")


class SeanNetwork:
    """Mutable network: parameters plus per-neuron voltages.

    ``params`` holds ``w_lif`` as an ``(M, IN)`` matrix, or an ``(IN,)`` row
    broadcast to every LI neuron when ``cfg.shared_row`` is set.
    """

    def __init__(self, cfg: SeanConfig, params: dict | None = None, rng: np.random.Generator | None = None):
        self.cfg = cfg
        if params is None:
            params = init_params(cfg, rng if rng is not None else np.random.default_rng(0))
        self.params = {k: np.array(params[k], dtype=np.float64) for k in PARAM_NAMES}
        self._check_shapes()
        self.step_count = 0
        self.reset_state()

    def _check_shapes(self):
        m, n = self.cfg.n_hidden, self.cfg.n_in
        want = (n,) if self.cfg.shared_row else (m, n)
        if self.params["w_lif"].shape != want:
            raise ShapeError(f"w_lif shape {self.params['w_lif'].shape} != {want}")
        for k in PARAM_NAMES[1:]:
            if self.params[k].shape != (m,):
                raise ShapeError(f"{k} shape {self.params[k].shape} != {(m,)}")

    @property
    def weight_matrix(self) -> np.ndarray:
        w = self.params["w_lif"]
        if self.cfg.shared_row:
            return np.broadcast_to(w, (self.cfg.n_hidden, self.cfg.n_in))
        return w

    def reset_state(self):
        self.lif_v = np.full(self.cfg.n_in, self.cfg.lif.v_r)
        self.li_v = np.full(self.cfg.n_hidden, self.cfg.li.v_r)

    # views matching the per-layer types
    @property
    def lif(self) -> LifLayerState:
        return LifLayerState(self.lif_v.copy(), self.cfg.lif)

    @property
    def li(self) -> LiLayerState:
        return LiLayerState(self.li_v.copy(), np.array(self.weight_matrix), self.cfg.li)

    @property
    def head(self) -> QHead:
        p = self.params
        return QHead(p["w_on"].copy(), p["b_on"].copy(), p["w_off"].copy(), p["b_off"].copy(), self.cfg.activation)

    def copy(self) -> "SeanNetwork":
        other = SeanNetwork(self.cfg, {k: v.copy() for k, v in self.params.items()})
        other.lif_v = self.lif_v.copy()
        other.li_v = self.li_v.copy()
        other.step_count = self.step_count
        return other

    def load_params_from(self, other: "SeanNetwork"):
        for k in PARAM_NAMES:
            self.params[k][...] = other.params[k]

    def q(self) -> tuple[float, float]:
        return q_values(self.head, self.li_v)

    def save(self, path) -> None:
        save_checkpoint(self, path)


def init_params(cfg: SeanConfig, rng: np.random.Generator) -> dict:
    m, n = cfg.n_hidden, cfg.n_in
    a = 1.0 / np.sqrt(n)
    b = 1.0 / np.sqrt(m)
    w_lif = rng.uniform(-a, a, size=(n,) if cfg.shared_row else (m, n))
    return {
        "w_lif": w_lif,
        "w_on": rng.uniform(-b, b, size=m),
        "b_on": np.zeros(m),
        "w_off": rng.uniform(-b, b, size=m),
        "b_off": np.zeros(m),
    }


@dataclass
class Trace:
    """Per-step quantities recorded by the forward pass, batched along axis 0."""

    h: np.ndarray       # (B, T, IN) LIF pre-reset voltages
    s: np.ndarray       # (B, T, IN) LIF spikes
    u: np.ndarray       # (B, T+1, M) LI voltages, u[:, 0] is the initial state
    z_on: np.ndarray    # (B, M)
    z_off: np.ndarray   # (B, M)
    spike_mode: str = "hard"


def _as_batch(frames) -> np.ndarray:
    arr = np.asarray(frames, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, None]
    elif arr.ndim == 2:
        arr = arr[None]
    return arr


def forward_batch(net: SeanNetwork, frames, lif_v0=None, li_v0=None, spike_mode: str = "hard",
                  record: bool = True):
    """Run a batch of windows. ``frames`` is (B, T, IN) of spike bits.

    Initial voltages default to rest. Returns ``(q, trace)`` with ``q`` of
    shape (B, 2) holding (Q_on, Q_off).
    """
    cfg = net.cfg
    x = _as_batch(frames)
    bsz, steps, n_in = x.shape
    if n_in != cfg.n_in:
        raise ShapeError(f"frame length {n_in} != network input size {cfg.n_in}")
    m = cfg.n_hidden
    lp, ip = cfg.lif, cfg.li
    v = np.broadcast_to(lp.v_r if lif_v0 is None else lif_v0, (bsz, n_in)).astype(np.float64)
    u = np.broadcast_to(ip.v_r if li_v0 is None else li_v0, (bsz, m)).astype(np.float64)
    w = net.weight_matrix
    e = x * cfg.input_gain
    if record:
        hs = np.empty((bsz, steps, n_in))
        ss = np.empty((bsz, steps, n_in))
        us = np.empty((bsz, steps + 1, m))
        us[:, 0] = u
    k_lif, k_li = 1.0 / lp.tau, 1.0 / ip.tau
    for t in range(steps):
        h = v + (-(v - lp.v_r) + e[:, t]) * k_lif
        if spike_mode == "hard":
            s = (h >= lp.v_th).astype(np.float64)
            v = np.where(s > 0, lp.v_r, h)
        else:
            s = sigmoid(cfg.surrogate_slope * (h - lp.v_th))
            v = h * (1.0 - s) + lp.v_r * s
        u = u + (-(u - ip.v_r) + s @ w.T) * k_li
        if record:
            hs[:, t] = h
            ss[:, t] = s
            us[:, t + 1] = u
    p = net.params
    z_on = p["w_on"] * u + p["b_on"]
    z_off = p["w_off"] * u + p["b_off"]
    act = _ACTIVATIONS[cfg.activation][0]
    q = np.stack([act(z_on).sum(axis=1), act(z_off).sum(axis=1)], axis=1)
    trace = None
    if record:
        trace = Trace(hs, ss, us, z_on, z_off, spike_mode)
    return q, (trace, v, u)


def backward_batch(net: SeanNetwork, trace: Trace, grad_q) -> dict:
    """Gradients of ``sum(grad_q * q)`` w.r.t. parameters and inputs.

    ``grad_q`` is (B, 2). Returns a dict with an entry per parameter name plus
    ``"inputs"`` (B, T, IN), the gradient w.r.t. the spike frames.
    """
    cfg = net.cfg
    grad_q = np.asarray(grad_q, dtype=np.float64).reshape(-1, 2)
    bsz, steps, n_in = trace.s.shape
    if grad_q.shape[0] != bsz:
        raise ShapeError("gradient batch size does not match trace")
    p = net.params
    dact = _ACTIVATIONS[cfg.activation][1]
    g_on = grad_q[:, 0:1] * dact(trace.z_on)     # (B, M)
    g_off = grad_q[:, 1:2] * dact(trace.z_off)
    u_end = trace.u[:, -1]
    grads = {
        "w_on": (g_on * u_end).sum(axis=0),
        "b_on": g_on.sum(axis=0),
        "w_off": (g_off * u_end).sum(axis=0),
        "b_off": g_off.sum(axis=0),
    }
    du = g_on * p["w_on"] + g_off * p["w_off"]    # dL/dU_T
    w = net.weight_matrix
    lp, ip = cfg.lif, cfg.li
    k_lif, k_li = 1.0 / lp.tau, 1.0 / ip.tau
    dw = np.zeros(w.shape)
    dv = np.zeros((bsz, n_in))
    d_in = np.empty((bsz, steps, n_in))
    for t in range(steps - 1, -1, -1):
        s = trace.s[:, t]
        h = trace.h[:, t]
        du_in = du * k_li                       # gradient on the weighted spike drive
        dw += du_in.T @ s
        ds = du_in @ w
        if not cfg.detach_reset:
            ds = ds + dv * (lp.v_r - h)
        dh = dv * (1.0 - s) + ds * surrogate_grad(h - lp.v_th, cfg.surrogate_slope)
        d_in[:, t] = dh * k_lif * cfg.input_gain
        dv = dh * (1.0 - k_lif)
        du = du * (1.0 - k_li)
    grads["w_lif"] = dw.sum(axis=0) if cfg.shared_row else dw
    grads["inputs"] = d_in
    return grads


def forward_window(net: SeanNetwork, frames, spike_mode: str = "hard"):
    """Advance the network through ``frames`` from its current voltages.

    Updates the stored voltages and step count in place and returns
    ``((Q_on, Q_off), trace)``.
    """
    x = np.asarray(frames, dtype=np.float64).reshape(-1, net.cfg.n_in)
    if len(x) == 0:
        return net.q(), None
    q, (trace, v, u) = forward_batch(net, x[None], net.lif_v, net.li_v, spike_mode=spike_mode)
    net.lif_v = v[0].copy()
    net.li_v = u[0].copy()
    net.step_count += len(x)
    return (float(q[0, 0]), float(q[0, 1])), trace


def backward_window(net: SeanNetwork, trace: Trace, grad_q) -> dict:
    """Parameter gradients for one recorded window given dL/d(Q_on, Q_off)."""
    grad_q = np.asarray(grad_q, dtype=np.float64)
    if grad_q.shape != (2,):
        raise ShapeError("grad_q must be a pair (dQ_on, dQ_off)")
    if trace is None:
        raise ShapeError("no trace recorded (empty window)")
    grads = backward_batch(net, trace, grad_q[None])
    grads["inputs"] = grads["inputs"][0]
    return grads


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(net: SeanNetwork, path) -> None:
    """Write an ``.npz`` container with a JSON header and all parameters."""
    header = {"version": CHECKPOINT_VERSION, "config": net.cfg.to_dict(), "step_count": net.step_count}
    arrays = {k: net.params[k] for k in PARAM_NAMES}
    arrays["lif_v"] = net.lif_v
    arrays["li_v"] = net.li_v
    buf = io.BytesIO()
    np.savez(buf, header=np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8), **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> SeanNetwork:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        cfg = SeanConfig.from_dict(header["config"])
        net = SeanNetwork(cfg, {k: data[k] for k in PARAM_NAMES})
        net.lif_v = data["lif_v"].copy()
        net.li_v = data["li_v"].copy()
    net.step_count = int(header["step_count"])
    return net
