import numpy as np
import pytest

from drnn.cells import GATES, LstmParams, OutputParams, RnnParams
from drnn.experiments import flatten_case
from drnn.flatten import (FlattenError, LiftError, flatten, flatten_stacked_lstm,
                          flatten_stacked_rnn, forward_derived_init, lift_initial_state,
                          verify_equivalence)
from drnn.linalg import Rng
from drnn.nets import InitialState, StackedParams


def test_k1_is_unchanged():
    p = StackedParams.init(Rng(0), k=1, n=3, q=2, m=2)
    flat = flatten_stacked_rnn(p)
    assert flat.delay == 0
    assert np.array_equal(flat.params.w_h, p.layers[0].w_h)
    assert np.array_equal(flat.params.w_x, p.layers[0].w_x)
    lstm = StackedParams.init(Rng(0), cell="lstm", k=1, n=3, q=2, m=2)
    fl = flatten_stacked_lstm(lstm)
    for a in GATES:
        for got, want in zip(fl.params.gate(a), lstm.layers[0].gate(a)):
            assert np.array_equal(got, want)


def test_k4_block_layout():
    p = StackedParams.init(Rng(1), k=4, n=2, q=3, m=2)
    flat = flatten(p)
    w = flat.params.w_h
    blk = lambda i, j: w[2 * (i - 1):2 * i, 2 * (j - 1):2 * j]
    for i in range(1, 5):
        assert np.array_equal(blk(i, i), p.layers[i - 1].w_h)
        if i > 1:
            assert np.array_equal(blk(i, i - 1), p.layers[i - 1].w_x)
        for j in range(i + 1, 5):
            assert not blk(i, j).any()
    assert np.count_nonzero(flat.output.w_o[:, :6]) == 0
    assert flat.delay == 3
    flat.check_layout(p)


def test_lstm_k3_per_gate_layout():
    p = StackedParams.init(Rng(2), cell="lstm", k=3, n=2, q=2, m=1)
    flat = flatten(p)
    for a in GATES:
        w_h = flat.params.gate(a)[1]
        assert np.array_equal(w_h[2:4, 0:2], p.layers[1].gate(a)[0])
        assert np.array_equal(w_h[4:6, 2:4], p.layers[2].gate(a)[0])
        assert not w_h[0:2, 2:].any() and not w_h[4:6, 0:2].any()
    flat.check_layout(p)


def test_nonuniform_widths_rejected():
    rng = Rng(0)
    p = StackedParams([RnnParams.init(rng, 3, 2), RnnParams.init(rng, 4, 3)],
                      OutputParams.init(rng, 1, 4))
    with pytest.raises(FlattenError):
        flatten(p)


def test_forward_derived_init_trivial_cases():
    p = StackedParams.init(Rng(3), k=1, n=3, q=2, m=1)
    h0 = np.array([0.1, 0.2, 0.3])
    assert np.array_equal(forward_derived_init(flatten(p), h0).h[0], h0)
    p = StackedParams.init(Rng(3), k=3, n=2, q=2, m=1)
    for l in p.layers:
        l.b_h[:] = 0
    init = forward_derived_init(flatten(p), np.zeros(6))
    assert all(np.count_nonzero(h) == 0 for h in init.h)


@pytest.mark.parametrize("cell,k,n,T", [("rnn", 1, 3, 5), ("rnn", 2, 2, 5), ("rnn", 3, 4, 20),
                                        ("lstm", 2, 1, 7), ("lstm", 2, 3, 15), ("lstm", 3, 2, 10)])
def test_equivalence_examples(cell, k, n, T):
    res = flatten_case(cell, "tanh", k, n, T, seed=0, tol=1e-12 if cell == "rnn" else 1e-10)
    assert res.passed, res.line()
    if k == 1:
        assert res.report.max_output_diff == 0.0 and res.report.max_hidden_diff == 0.0


def test_equivalence_batched_inputs():
    rng = Rng(5)
    p = StackedParams.init(rng, cell="lstm", k=3, n=2, q=2, m=2)
    flat = flatten(p)
    h0, c0 = rng.normal((6,)), rng.normal((6,))
    init = forward_derived_init(flat, h0, c0)
    xs = rng.normal((9, 4, 2))
    rep = verify_equivalence(p, init, flat, InitialState([h0], [c0]), xs)
    assert rep.passed


def test_corrupted_block_is_localized():
    def corrupt(flat):
        flat.params.w_h[4:6, 4:6] += 0.05  # diagonal block of layer 3

    res = flatten_case("rnn", "tanh", 3, 2, 6, seed=1, corrupt=corrupt)
    assert not res.passed
    assert res.report.worst_block == 3
    assert res.report.hidden_by_block[0] <= 1e-10 and res.report.hidden_by_block[1] <= 1e-10
    assert "FAIL" in res.line() and "k=3" in res.line()


def test_lift_k1_returns_target():
    p = StackedParams.init(Rng(0), k=1, n=3, q=2, m=1, f="relu")
    target = np.array([0.1, 0.0, 2.0])
    assert np.array_equal(lift_initial_state(flatten(p), InitialState([target])), target)


def test_lift_fixed_point_dynamics():
    k, n = 3, 2
    layers = [RnnParams(np.zeros((n, n if i else 2)), np.eye(n), np.zeros(n), "identity")
              for i in range(k)]
    p = StackedParams(layers, OutputParams.init(Rng(0), 1, n))
    targets = [np.array([1.0, -2.0]), np.array([0.5, 0.25]), np.array([3.0, 4.0])]
    h0 = lift_initial_state(flatten(p), InitialState(targets))
    assert np.allclose(h0, np.concatenate(targets))


def positive_relu_stack(seed, k, n, q=2):
    """ReLU stack with positive weights: every reachable state has positive pre-activations."""
    rng = Rng(seed)
    layers = []
    for i in range(k):
        width = q if i == 0 else n
        w_h = rng.uniform(0.0, 1.0, (n, n)) / n + np.eye(n)
        layers.append(RnnParams(rng.uniform(0.0, 1.0, (n, width)), w_h,
                                rng.uniform(0.1, 1.0, (n,)), "relu"))
    return StackedParams(layers, OutputParams.init(rng, 2, n)), rng


@pytest.mark.parametrize("k", [2, 3])
@pytest.mark.parametrize("seed", range(5))
def test_lift_relu_reachable_targets_replay(k, seed):
    p, rng = positive_relu_stack(seed, k, 3)
    flat = flatten(p)
    targets = forward_derived_init(flat, rng.uniform(0.1, 1.0, (3 * k,)))
    h0 = lift_initial_state(flat, targets)
    replay = forward_derived_init(flat, h0)
    for a, b in zip(replay.h, targets.h):
        assert np.max(np.abs(a - b)) <= 1e-9
    rep = verify_equivalence(p, targets, flat, InitialState([h0]), rng.uniform(0, 1, (10, 2)))
    assert rep.passed


def test_lift_tanh_range_violation():
    rng = Rng(0)
    p = StackedParams.init(rng, k=3, n=3, q=2, m=1, f="tanh")
    p.layers[2].w_h[:] = 0.1 * np.eye(3)
    targets = InitialState([np.zeros(3), np.zeros(3), np.full(3, 0.99)])
    with pytest.raises(LiftError) as err:
        lift_initial_state(flatten(p), targets)
    assert err.value.block == 3


def test_lift_singular_block_rejected():
    rng = Rng(0)
    p = StackedParams.init(rng, k=2, n=2, q=2, m=1, f="identity")
    p.layers[1].w_h[:] = [[1.0, 1.0], [1.0, 1.0]]
    with pytest.raises(LiftError):
        lift_initial_state(flatten(p), InitialState([np.zeros(2), np.ones(2)]))


def test_lift_requires_rnn_cells():
    p = StackedParams.init(Rng(0), cell="lstm", k=2, n=2, q=2, m=1)
    with pytest.raises(TypeError):
        lift_initial_state(flatten(p), InitialState([np.zeros(2)] * 2, [np.zeros(2)] * 2))
