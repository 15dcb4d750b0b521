import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spiketrigger.snn import (LiLayerState, LifLayerState, NeuronParams, QHead, SeanConfig, SeanNetwork, ShapeError,
                              backward_window, forward_batch, forward_window, li_step, lif_step, load_checkpoint,
                              q_values, save_checkpoint, select_action)


def lif(v, e, tau=2.0, v_th=1.0, v_r=0.0):
    return lif_step(LifLayerState(np.array([v], float), NeuronParams(v_th, v_r, tau)), np.array([e], float))


def test_lif_rest_fixed_point():
    st_, s = lif(0.0, 0.0)
    assert st_.v[0] == 0.0 and s[0] == 0.0


def test_lif_exact_threshold_fires():
    st_, s = lif(0.0, 1.0, tau=1.0)
    assert s[0] == 1.0 and st_.v[0] == 0.0


def test_lif_subthreshold_update():
    st_, s = lif(0.5, 0.4)
    assert s[0] == 0.0 and st_.v[0] == pytest.approx(0.45, abs=1e-15)


def test_lif_shape_mismatch():
    with pytest.raises(ShapeError):
        lif_step(LifLayerState(np.zeros(3)), np.zeros(2))


def li(v, spikes, w, tau=2.0):
    return li_step(LiLayerState(np.asarray(v, float), np.asarray(w, float), NeuronParams(tau=tau)), spikes)


def test_li_rest_and_leak():
    assert li([0.0], [0.0], [[1.0]]).v.tolist() == [0.0]
    assert li([1.0], [0.0], [[1.0]]).v.tolist() == [0.5]


def test_li_converges_to_weighted_drive():
    w = np.array([[0.3, 0.9]])
    state = LiLayerState(np.zeros(1), w, NeuronParams(tau=3.0))
    for _ in range(400):
        state = li_step(state, [1.0, 1.0])
    assert state.v[0] == pytest.approx(1.2, abs=1e-12)


def test_li_shape_mismatch():
    with pytest.raises(ShapeError):
        li([0.0], [1.0, 1.0, 1.0], [[1.0, 1.0]])


def test_q_values_examples():
    z = np.zeros(3)
    assert q_values(QHead(z, z, z, z), np.ones(3)) == (0.0, 0.0)
    one = np.ones(1)
    assert q_values(QHead(2 * one, one, one, one), 3 * one)[0] == 7.0


@given(st.integers(0, 10_000))
def test_q_values_superposition(seed):
    rng = np.random.default_rng(seed)
    w_on, w_off = rng.normal(size=(2, 5))
    head = QHead(w_on, np.zeros(5), w_off, np.zeros(5))
    a, b = rng.normal(size=(2, 5))
    qa, qb, qab = q_values(head, a), q_values(head, b), q_values(head, a + b)
    np.testing.assert_allclose(qab, np.add(qa, qb), atol=1e-12)


@pytest.mark.parametrize("q,a", [((1.0, 0.5), 1), ((0.5, 1.0), 0), ((0.7, 0.7), 1)])
def test_select_action(q, a):
    assert select_action(q) == a


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(-1e3, 1e3))
def test_select_action_shift_invariant(a, b, c):
    assert select_action((a, b)) == select_action((a + c, b + c)) or abs(a - b) < 1e-6


def small_net(seed, n_in=4, m=3, **kw):
    return SeanNetwork(SeanConfig(n_in=n_in, n_hidden=m, **kw), rng=np.random.default_rng(seed))


def test_forward_window_empty_keeps_state():
    net = small_net(0)
    net.li_v = np.array([0.2, -0.1, 0.4])
    q, trace = forward_window(net, np.zeros((0, 4)))
    assert trace is None and q == net.q() and net.step_count == 0


def test_silent_frames_from_rest_give_rest_q():
    net = small_net(1)
    q, _ = forward_window(net, np.zeros((6, 4)))
    assert q == pytest.approx(q_values(net.head, np.zeros(3)))


@given(st.integers(0, 5000), st.integers(1, 12))
@settings(max_examples=40)
def test_forward_window_matches_manual_composition(seed, steps):
    net = small_net(seed)
    rng = np.random.default_rng(seed + 1)
    frames = (rng.random((steps, 4)) < 0.5).astype(float)
    lif_state, li_state = net.lif, net.li
    for f in frames:
        lif_state, s = lif_step(lif_state, f * net.cfg.input_gain)
        li_state = li_step(li_state, s)
    q, _ = forward_window(net, frames)
    np.testing.assert_allclose(q, q_values(net.head, li_state.v), atol=1e-12)
    np.testing.assert_allclose(net.lif_v, lif_state.v, atol=1e-12)


def test_forward_window_deterministic():
    frames = (np.random.default_rng(3).random((8, 4)) < 0.4).astype(float)
    assert forward_window(small_net(5), frames)[0] == forward_window(small_net(5), frames)[0]


def test_zero_target_gradient():
    net = small_net(2)
    _, trace = forward_window(net, np.ones((3, 4)))
    grads = backward_window(net, trace, [0.0, 0.0])
    assert all(not np.any(g) for g in grads.values())


def test_single_step_head_gradient_is_li_voltage():
    net = small_net(4)
    _, trace = forward_window(net, np.ones((1, 4)))
    grads = backward_window(net, trace, [1.0, 0.0])
    np.testing.assert_array_equal(grads["w_on"], net.li_v)
    assert not np.any(grads["w_off"])


def finite_difference_check(seed, steps=5, eps=1e-6):
    rng = np.random.default_rng(seed)
    net = small_net(seed, input_gain=1.0)
    for k in net.params:
        net.params[k] = rng.normal(scale=0.8, size=net.params[k].shape)
    frames = rng.random((steps, 4)) * 2.0
    g_q = rng.normal(size=2)

    def loss():
        q, _ = forward_batch(net, frames[None], spike_mode="smooth", record=False)
        return float(q[0] @ g_q)

    q, (trace, _, _) = forward_batch(net, frames[None], spike_mode="smooth")
    grads = backward_window(net, trace, g_q)
    worst = 0.0
    for k, p in net.params.items():
        for idx in np.ndindex(p.shape):
            keep = p[idx]
            p[idx] = keep + eps
            up = loss()
            p[idx] = keep - eps
            down = loss()
            p[idx] = keep
            fd = (up - down) / (2 * eps)
            an = grads[k][idx]
            worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), 1e-6))
    return worst


@pytest.mark.parametrize("seed", range(20))
def test_gradients_match_finite_differences(seed):
    assert finite_difference_check(seed) <= 1e-4


def test_checkpoint_round_trip(tmp_path):
    net = small_net(9, activation="sigmoid")
    forward_window(net, np.ones((4, 4)))
    save_checkpoint(net, tmp_path / "n.npz")
    back = load_checkpoint(tmp_path / "n.npz")
    assert back.cfg == net.cfg and back.step_count == 4
    for k in net.params:
        np.testing.assert_array_equal(back.params[k], net.params[k])
    np.testing.assert_array_equal(back.li_v, net.li_v)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8), st.lists(st.floats(-5, 5), min_size=8, max_size=8))
def test_spiked_neurons_sit_at_rest(v, e):
    state, s = lif_step(LifLayerState(np.array(v), NeuronParams(v_r=-0.3)), np.array(e[:len(v)]))
    assert np.all(state.v[s == 1] == -0.3)
    assert np.all(state.v[s == 0] < 1.0)


def test_no_input_decays_toward_rest():
    state = LifLayerState(np.array([0.9, -2.0]))
    for _ in range(60):
        state, s = lif_step(state, np.zeros(2))
        assert not s.any()
    assert np.all(np.abs(state.v) < 1e-12)


def test_neuron_params_validation():
    with pytest.raises(ValueError):
        NeuronParams(v_th=0.0, v_r=0.0)
    with pytest.raises(ValueError):
        NeuronParams(tau=0.5)
