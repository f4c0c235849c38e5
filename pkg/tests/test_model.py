import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arlab.errors import FormatError, InvalidConfigError, InvalidInputError
from arlab.model import (ActivationPattern, Network, backward, backward_batch, forward, induced_matrices,
                         init_network, input_gradients, load_checkpoint, load_metadata, logit_difference_gradient,
                         logits_batch, pattern_at, save_checkpoint, softmax)
from arlab.numerics import SeededRng

from conftest import random_net


def straight_line_logits(weights, x):
    h = list(x)
    for li, w in enumerate(weights):
        out = []
        for row in w:
            s = 0.0
            for a, b in zip(row, h):
                s += a * b
            out.append(s if li == len(weights) - 1 else max(s, 0.0))
        h = out
    return np.array(h)


def fd_param_grads(net, x, y, h=1e-5):
    out = []
    for w in net.weights:
        g = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            old = w[idx]
            w[idx] = old + h
            lp = backward(net, x, y)[2]
            w[idx] = old - h
            lm = backward(net, x, y)[2]
            w[idx] = old
            g[idx] = (lp - lm) / (2 * h)
        out.append(g)
    return out


def test_init_shapes_and_range():
    net = init_network([2, 3, 2], SeededRng(1))
    assert [w.shape for w in net.weights] == [(3, 2), (2, 3)]
    again = init_network([2, 3, 2], SeededRng(1))
    assert all(np.array_equal(a, b) for a, b in zip(net.weights, again.weights))
    big = init_network([30, 20, 10], SeededRng(2))
    for w, (fi, fo) in zip(big.weights, [(30, 20), (20, 10)]):
        assert np.abs(w).max() <= np.sqrt(6 / (fi + fo))
    with pytest.raises(InvalidConfigError):
        init_network([3], SeededRng(0))


def test_network_validation():
    with pytest.raises(InvalidConfigError):
        Network([np.ones((2, 3)), np.ones((2, 3))])
    with pytest.raises(InvalidConfigError):
        Network([np.array([[np.inf]])])
    with pytest.raises(InvalidInputError):
        forward(Network([np.eye(2)]), np.ones(3))


def test_forward_hand_example():
    net = Network([np.eye(2), np.eye(2)])
    tr = forward(net, np.array([1.0, -1.0]))
    assert np.array_equal(tr.activations[0], [1, 0])
    assert np.array_equal(tr.logits, [1, 0])
    z = forward(init_network([3, 4, 2], SeededRng(0)), np.zeros(3))
    assert np.all(z.logits == 0) and np.all(z.activations[0] == 0)


@pytest.mark.parametrize("seed", range(5))
def test_forward_matches_straight_line(seed):
    net = random_net(seed)
    x = SeededRng(seed).child(1).uniform(-1, 1, net.input_dim)
    assert np.max(np.abs(forward(net, x).logits - straight_line_logits(net.weights, x))) <= 1e-12
    assert np.allclose(logits_batch(net, x[None])[0], forward(net, x).logits, atol=1e-12)


def test_activation_pattern_zero_is_inactive():
    net = Network([np.eye(3), np.ones((1, 3))])
    pat = pattern_at(net, np.array([2.0, -1.0, 0.0]))
    assert np.array_equal(pat.taus[0], [1, 0, 0])
    assert np.array_equal(pattern_at(net, np.ones(3)).taus[0], [1, 1, 1])


def test_relu_equals_masked_matrix():
    net = random_net(3)
    x = SeededRng(4).normal(net.input_dim)
    tr = forward(net, x)
    pat = pattern_at(net, x)
    h = x
    for w, tau, act in zip(net.weights[:-1], pat.taus, tr.activations):
        assert np.array_equal(act, (tau[:, None] * w) @ h)
        h = act


def test_induced_matrices():
    net = random_net(5)
    ones = ActivationPattern([np.ones(w.shape[0], np.int8) for w in net.weights[:-1]])
    assert all(np.array_equal(a, b) for a, b in zip(induced_matrices(net, ones), net.weights))
    zeros = ActivationPattern([np.zeros(w.shape[0], np.int8) for w in net.weights[:-1]])
    assert all(np.all(m == 0) for m in induced_matrices(net, zeros)[:-1])
    x = SeededRng(6).normal(net.input_dim)
    prod = x
    for m in induced_matrices(net, pattern_at(net, x)):
        prod = m @ prod
    assert np.allclose(prod, forward(net, x).logits, atol=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_backward_finite_differences(seed):
    net = random_net(seed, max_width=6, max_depth=3)
    rng = SeededRng(seed).child(7)
    x = rng.normal(net.input_dim)
    y = int(rng.integers(0, net.output_dim))
    grads, dx, _ = backward(net, x, y)
    for g, f in zip(grads, fd_param_grads(net, x, y)):
        assert np.max(np.abs(g - f)) / (1e-8 + np.max(np.abs(f))) <= 1e-4
    fdx = np.array([(backward(net, x + 1e-5 * e, y)[2] - backward(net, x - 1e-5 * e, y)[2]) / 2e-5
                    for e in np.eye(net.input_dim)])
    assert np.max(np.abs(dx - fdx)) / (1e-8 + np.max(np.abs(fdx))) <= 1e-4


def test_backward_special_cases():
    zero = Network([np.zeros((3, 2)), np.zeros((2, 3))])
    assert np.all(backward(zero, np.array([0.3, 0.4]), 1)[1] == 0)
    w = SeededRng(1).normal((3, 4))
    lin = Network([w])
    x = SeededRng(2).normal(4)
    _, dx, _ = backward(lin, x, 2)
    expected = w.T @ (softmax(w @ x) - np.eye(3)[2])
    assert np.allclose(dx, expected, atol=1e-12)


def test_batch_gradients_are_means():
    net = random_net(8)
    X = SeededRng(9).normal((5, net.input_dim))
    y = SeededRng(10).integers(0, net.output_dim, 5)
    grads, dxs, losses = backward_batch(net, X, y)
    singles = [backward(net, X[i], int(y[i])) for i in range(5)]
    for li in range(net.depth):
        assert np.allclose(grads[li], np.mean([s[0][li] for s in singles], axis=0), atol=1e-12)
    assert np.allclose(dxs, np.stack([s[1] for s in singles]), atol=1e-12)
    g2, l2 = input_gradients(net, X, y)
    assert np.allclose(g2, dxs, atol=1e-12) and np.allclose(l2, losses, atol=1e-12)


def test_logit_difference_gradient():
    net = random_net(12)
    x = SeededRng(13).normal(net.input_dim)
    val, g = logit_difference_gradient(net, x, 0, 1)
    lg = forward(net, x).logits
    assert val == pytest.approx(lg[0] - lg[1])
    f = lambda z: (lambda l: l[0] - l[1])(forward(net, z).logits)
    fd = np.array([(f(x + 1e-6 * e) - f(x - 1e-6 * e)) / 2e-6 for e in np.eye(net.input_dim)])
    assert np.allclose(g, fd, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_piecewise_linear_within_region(seed, t):
    net = random_net(seed)
    rng = SeededRng(seed).child(3)
    x = rng.normal(net.input_dim)
    x2 = x + 1e-7 * rng.normal(net.input_dim)
    if pattern_at(net, x) != pattern_at(net, x2):
        return
    mid = forward(net, x + t * (x2 - x)).logits
    lin = (1 - t) * forward(net, x).logits + t * forward(net, x2).logits
    assert np.max(np.abs(mid - lin)) <= 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.5, 2.0))
def test_positive_homogeneity(seed, c):
    net = random_net(seed)
    x = SeededRng(seed).child(4).normal(net.input_dim)
    assert np.allclose(forward(net, c * x).logits, c * forward(net, x).logits, rtol=1e-12, atol=1e-12)


def test_checkpoint_roundtrip(tmp_path):
    net = random_net(21)
    p = tmp_path / "m.ckpt"
    save_checkpoint(net, p, {"seed": 21})
    back = load_checkpoint(p)
    assert all(np.array_equal(a, b) for a, b in zip(net.weights, back.weights))
    assert load_metadata(p) == {"seed": 21, "widths": net.widths}
    raw = p.read_bytes()
    (tmp_path / "bad").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(tmp_path / "bad")
    (tmp_path / "short").write_bytes(raw[:-3])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "short")
    (tmp_path / "long").write_bytes(raw + b"\0")
    with pytest.raises(FormatError, match="trailing"):
        load_checkpoint(tmp_path / "long")
