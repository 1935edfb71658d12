import numpy as np
import pytest

import drnn.nets as nets_mod
from drnn.cells import LstmParams, OutputParams, RnnParams, lstm_step, output_step, rnn_step
from drnn.linalg import Rng
from drnn.nets import (InitialState, Layer, SeqNet, StackedParams, bidirectional_forward,
                       delayed_forward, delayed_trajectory, nonlinearity_depth, param_count,
                       stacked_forward)


def _simulate_stack(p: StackedParams, init, xs):
    """Unrolled loop over time then layers, one vector at a time."""
    hs = [np.array(h, dtype=float) for h in init.h]
    ys = []
    for x in xs:
        inp = x
        for i, layer in enumerate(p.layers):
            hs[i] = rnn_step(layer, inp, hs[i])
            inp = hs[i]
        ys.append(output_step(p.output, inp))
    return np.array(ys)


def test_stack_k1_equals_step_chain():
    rng = Rng(0)
    p = StackedParams.init(rng, k=1, n=3, q=2, m=2)
    h0 = rng.normal((3,))
    xs = rng.normal((6, 2))
    traj = stacked_forward(p, InitialState([h0]), xs)
    h, ys = h0, []
    for x in xs:
        h = rnn_step(p.layers[0], x, h)
        ys.append(output_step(p.output, h))
    # the sequence path projects all inputs in one matmul, so allow last-bit differences
    assert np.allclose(traj.outputs, np.array(ys), rtol=0, atol=1e-14)


def test_stack_zero_weights():
    p = StackedParams([RnnParams.zeros(3, 2), RnnParams.zeros(3, 3)],
                      OutputParams(np.zeros((2, 3)), np.array([0.3, -0.2])))
    traj = stacked_forward(p, None, Rng(1).normal((4, 2)))
    assert all(np.count_nonzero(h) == 0 for h in traj.hidden)
    assert np.array_equal(traj.outputs, np.tile([0.3, -0.2], (4, 1)))


@pytest.mark.parametrize("seed", range(5))
def test_stack_matches_unrolled_simulation(seed):
    rng = Rng(seed)
    p = StackedParams.init(rng, k=3, n=4, q=2, m=3)
    init = InitialState([rng.normal((4,)) for _ in range(3)])
    xs = rng.normal((5, 2))
    ref = _simulate_stack(p, init, xs)
    assert np.allclose(stacked_forward(p, init, xs).outputs, ref, atol=1e-14)


def test_stack_touches_each_layer_once_per_step(monkeypatch):
    calls = []
    real = nets_mod.rnn_step

    def counting(p, *args, **kw):
        calls.append(id(p))
        return real(p, *args, **kw)

    monkeypatch.setattr(nets_mod, "rnn_step", counting)
    p = StackedParams.init(Rng(2), k=3, n=2, q=2, m=1)
    stacked_forward(p, None, np.zeros((7, 2)))
    assert [calls.count(id(l)) for l in p.layers] == [7, 7, 7]


def test_delay_zero_equals_plain_forward():
    rng = Rng(3)
    cell, out = LstmParams.init(rng, 3, 2), OutputParams.init(rng, 2, 3)
    xs = rng.normal((6, 2))
    plain = SeqNet([Layer(cell)], out, 0).forward(xs).outputs
    assert np.array_equal(delayed_forward(cell, out, 0, None, xs), plain)


def test_delay_runs_t_plus_d_steps():
    rng = Rng(4)
    cell, out = RnnParams.init(rng, 3, 2), OutputParams.init(rng, 2, 3)
    traj = delayed_trajectory(cell, out, 2, None, rng.normal((4, 2)))
    assert traj.hidden[0].shape[0] == 6
    assert traj.delayed_outputs.shape == (4, 2)


def test_delay_with_input_ignored_matches_direct_simulation():
    rng = Rng(5)
    cell = RnnParams.init(rng, 3, 2)
    cell.w_x[:] = 0.0
    out = OutputParams.init(rng, 2, 3)
    h0 = rng.normal((3,))
    got = delayed_forward(cell, out, 3, InitialState([h0]), rng.normal((4, 2)))
    h, ys = h0, []
    for _ in range(7):
        h = rnn_step(cell, np.zeros(2), h)
        ys.append(output_step(out, h))
    assert np.allclose(got, np.array(ys[3:]), atol=1e-15)


def test_padding_is_zero_vector():
    rng = Rng(6)
    cell, out = LstmParams.init(rng, 2, 3), OutputParams.init(rng, 1, 2)
    xs = rng.normal((4, 3))
    explicit = SeqNet([Layer(cell)], out, 0).forward(np.concatenate([xs, np.zeros((2, 3))]))
    assert np.array_equal(delayed_forward(cell, out, 2, None, xs), explicit.outputs[2:])


@pytest.mark.parametrize("d", [0, 1, 3])
def test_delayed_output_ignores_inputs_beyond_lookahead(d):
    rng = Rng(7 + d)
    cell, out = LstmParams.init(rng, 4, 2), OutputParams.init(rng, 2, 4)
    xs = rng.normal((8, 2))
    base = delayed_forward(cell, out, d, None, xs)
    for t in range(8):
        for s in range(t + d + 1, 8):
            pert = xs.copy()
            pert[s] += 1.0
            assert np.array_equal(delayed_forward(cell, out, d, None, pert)[t], base[t])


def test_bidirectional_sees_every_input():
    rng = Rng(8)
    fwd, bwd = LstmParams.init(rng, 3, 2), LstmParams.init(rng, 3, 2)
    out = OutputParams.init(rng, 2, 6)
    xs = rng.normal((5, 2))
    base = bidirectional_forward(fwd, bwd, out, None, xs)
    for s in range(5):
        pert = xs.copy()
        pert[s] += 0.5
        changed = np.any(bidirectional_forward(fwd, bwd, out, None, pert) != base, axis=1)
        assert changed.all()


def test_bidirectional_matches_two_runs():
    rng = Rng(9)
    fwd, bwd = RnnParams.init(rng, 2, 3), RnnParams.init(rng, 2, 3)
    out = OutputParams.init(rng, 2, 4)
    xs = rng.normal((4, 3))
    hf, h = [], np.zeros(2)
    for x in xs:
        h = rnn_step(fwd, x, h)
        hf.append(h)
    hb, h = [None] * 4, np.zeros(2)
    for t in range(3, -1, -1):
        h = rnn_step(bwd, xs[t], h)
        hb[t] = h
    ref = [output_step(out, np.concatenate([a, b])) for a, b in zip(hf, hb)]
    assert np.allclose(bidirectional_forward(fwd, bwd, out, None, xs), ref, atol=1e-15)


def test_bidirectional_zero_backward_columns():
    rng = Rng(10)
    fwd, bwd = LstmParams.init(rng, 3, 2), LstmParams.init(rng, 3, 2)
    out = OutputParams.init(rng, 2, 6)
    out.w_o[:, 3:] = 0.0
    xs = rng.normal((5, 2))
    single = SeqNet([Layer(fwd)], OutputParams(out.w_o[:, :3].copy(), out.b_o, out.g)).forward(xs)
    assert np.allclose(bidirectional_forward(fwd, bwd, out, None, xs), single.outputs, atol=1e-15)


def test_bidirectional_palindrome_symmetry():
    rng = Rng(11)
    cell = RnnParams.init(rng, 3, 2)
    out = OutputParams.init(rng, 1, 6)
    half = rng.normal((3, 2))
    xs = np.concatenate([half, half[::-1]])
    traj = SeqNet([Layer(cell, cell.copy())], out).forward(xs)
    h = traj.hidden[0]
    assert np.allclose(h[:, :3], h[::-1, 3:], atol=1e-15)


def test_nonlinearity_depth_profiles():
    assert nonlinearity_depth("rnn", 0) == 1
    assert nonlinearity_depth("rnn", -4) == 5
    assert nonlinearity_depth("rnn", 1) == 0
    assert nonlinearity_depth("d_rnn", 6, d=5) == 0
    assert nonlinearity_depth("d_rnn", 5, d=5) == 1
    assert nonlinearity_depth("d_rnn", 0, d=5) == 6
    assert nonlinearity_depth("bi_rnn", -3) == 4
    assert nonlinearity_depth("bi_rnn", 3) == 4
    assert nonlinearity_depth("d_rnn", -2, d=0) == nonlinearity_depth("rnn", -2)
    with pytest.raises(ValueError):
        nonlinearity_depth("cnn", 0)


def test_param_count():
    rng = Rng(0)
    assert param_count(RnnParams.init(rng, 2, 3), OutputParams.init(rng, 2, 2)) == 18
    assert param_count(LstmParams.init(rng, 1, 1)) == 12
    with pytest.raises(ValueError):
        param_count(RnnParams(np.zeros((2, 0)), np.zeros((2, 2)), np.zeros(2)))


def test_param_count_matched_sizes():
    rng = Rng(0)
    d_lstm = SeqNet.build(rng, cell="lstm", q=28, n=128, m=27, delay=5)
    bi = SeqNet.build(rng, cell="lstm", q=28, n=47, m=27, layers=2, bidirectional=True)
    assert param_count(d_lstm) == 83867
    assert param_count(bi) == 84533


def test_layer_width_checks():
    rng = Rng(0)
    with pytest.raises(ValueError):
        SeqNet([Layer(RnnParams.init(rng, 3, 2)), Layer(RnnParams.init(rng, 3, 4))],
               OutputParams.init(rng, 1, 3))
    with pytest.raises(ValueError):
        SeqNet([Layer(RnnParams.init(rng, 3, 2))], OutputParams.init(rng, 1, 4))
