import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import expit

from batchot import embed
from batchot.errors import InputError, TraceMismatchError
from batchot.gradcheck import check_embed_backward, check_end_to_end


def test_init_is_deterministic_and_bounded():
    a, b = embed.init([2, 2], 7), embed.init([2, 2], 7)
    np.testing.assert_array_equal(a.weights[0], b.weights[0])
    assert not np.array_equal(a.weights[0], embed.init([2, 2], 8).weights[0])
    net = embed.init([10, 32, 16], 0)
    for w, (fan_in, fan_out) in zip(net.weights, [(10, 32), (32, 16)]):
        assert w.shape == (fan_in, fan_out)
        assert np.max(np.abs(w)) <= np.sqrt(6 / (fan_in + fan_out))
    assert all(not b.any() for b in net.biases)
    assert all(not m.any() for m in net.weight_buffers + net.bias_buffers)


def test_init_errors():
    with pytest.raises(InputError):
        embed.init([3], 0)
    with pytest.raises(InputError):
        embed.init([3, 0], 0)


def test_zero_net_outputs_half():
    net = embed.init([3, 4, 2], 0)
    for w in net.weights:
        w[:] = 0
    out, _ = embed.forward(net, np.random.default_rng(0).normal(size=(5, 3)))
    np.testing.assert_array_equal(out, 0.5)


@given(seed=st.integers(0, 2**31), scale=st.floats(0.1, 100))
def test_forward_range_batching_and_purity(seed, scale):
    rng = np.random.default_rng(seed)
    net = embed.init([4, 5, 3], seed)
    x = scale * rng.normal(size=(6, 4))
    out, trace = embed.forward(net, x)
    assert out.shape == (6, 3)
    assert np.all((out >= 0) & (out <= 1))
    single, _ = embed.forward(net, x[2])
    # BLAS may pick a different kernel for one row, so allow an ulp
    np.testing.assert_allclose(single[0], out[2], rtol=0, atol=1e-15)
    again, _ = embed.forward(net, x)
    np.testing.assert_array_equal(again, out)
    assert trace.depth == net.n_layers


def test_forward_errors():
    net = embed.init([3, 2], 0)
    with pytest.raises(InputError):
        embed.forward(net, np.zeros((2, 4)))
    with pytest.raises(InputError):
        embed.forward(net, np.array([[np.inf, 0, 0]]))


def test_backward_zero_upstream():
    net = embed.init([3, 4, 2], 1)
    _, trace = embed.forward(net, np.ones((2, 3)))
    grads = embed.backward(net, trace, np.zeros((2, 2)))
    assert all(not g.any() for g in grads.weights + grads.biases)


def test_backward_one_layer_by_hand():
    net = embed.init([2, 1], 3)
    net.biases[0][:] = 0.2
    x = np.array([[0.5, -1.5]])
    out, trace = embed.forward(net, x)
    z = x @ net.weights[0] + 0.2
    s = expit(z)
    np.testing.assert_array_equal(out, s)
    upstream = np.array([[2.0]])
    grads = embed.backward(net, trace, upstream)
    # d/dW (g * sigmoid(xW + b)) = g * s (1 - s) * x^T
    np.testing.assert_allclose(grads.weights[0], (2.0 * s * (1 - s)) * x.T, rtol=1e-15)
    np.testing.assert_allclose(grads.biases[0], (2.0 * s * (1 - s))[0], rtol=1e-15)


def test_backward_finite_differences():
    assert check_embed_backward(seed=3, instances=20).max_rel_error < 1e-5


def test_end_to_end_gradient():
    assert check_end_to_end(seed=4, instances=10).max_rel_error < 1e-4


def test_stale_trace_rejected():
    net = embed.init([2, 2], 0)
    _, trace = embed.forward(net, np.ones((1, 2)))
    grads = embed.backward(net, trace, np.ones((1, 2)))
    embed.sgd_step(net, grads, embed.OptimizerConfig())
    with pytest.raises(TraceMismatchError):
        embed.backward(net, trace, np.ones((1, 2)))
    other = embed.init([2, 2], 0)
    _, trace = embed.forward(other, np.ones((1, 2)))
    with pytest.raises(TraceMismatchError):
        embed.backward(net, trace, np.ones((1, 2)))


def _grads_like(net, value):
    return embed.Gradients([np.full_like(w, value) for w in net.weights], [np.full_like(b, value) for b in net.biases])


def test_sgd_zero_gradient_is_noop():
    net = embed.init([3, 2], 0)
    before = [p.copy() for p in net.parameters()]
    embed.sgd_step(net, _grads_like(net, 0.0), embed.OptimizerConfig())
    for a, b in zip(before, net.parameters()):
        np.testing.assert_array_equal(a, b)


def test_sgd_plain_step_without_momentum():
    net = embed.init([3, 2], 0)
    before = net.weights[0].copy()
    embed.sgd_step(net, _grads_like(net, 0.5), embed.OptimizerConfig(0.1, 0.0, 0.0))
    np.testing.assert_allclose(net.weights[0], before - 0.05, rtol=0, atol=1e-15)


def test_sgd_momentum_recurrence():
    net = embed.init([3, 2], 0)
    cfg = embed.OptimizerConfig(0.1, 0.9, 0.0)
    w0 = net.weights[0].copy()
    embed.sgd_step(net, _grads_like(net, 1.0), cfg)
    w1 = net.weights[0].copy()
    embed.sgd_step(net, _grads_like(net, 1.0), cfg)
    np.testing.assert_allclose(w0 - w1, 0.1, rtol=1e-14)
    np.testing.assert_allclose(w1 - net.weights[0], 0.1 * 1.9, rtol=1e-14)


def test_sgd_weight_decay():
    net = embed.init([3, 2], 0)
    w0 = net.weights[0].copy()
    embed.sgd_step(net, _grads_like(net, 0.0), embed.OptimizerConfig(0.1, 0.0, 0.5))
    np.testing.assert_allclose(net.weights[0], w0 - 0.1 * 0.5 * w0, rtol=1e-15)


def test_sgd_shape_mismatch():
    net = embed.init([3, 2], 0)
    bad = embed.Gradients([np.zeros((2, 2))], [np.zeros(2)])
    with pytest.raises(InputError):
        embed.sgd_step(net, bad, embed.OptimizerConfig())


def test_optimizer_validation():
    with pytest.raises(InputError):
        embed.OptimizerConfig(learning_rate=0)
    with pytest.raises(InputError):
        embed.OptimizerConfig(momentum=1.0)


@given(sizes=st.lists(st.integers(1, 6), min_size=2, max_size=4), seed=st.integers(0, 1000))
def test_checkpoint_round_trip(tmp_path_factory, sizes, seed):
    net = embed.init(sizes, seed)
    for b in net.biases:
        b[:] = np.random.default_rng(seed).normal(size=b.shape)
    path = tmp_path_factory.mktemp("ckpt") / "net.bin"
    embed.save_checkpoint(net, path)
    back = embed.load_checkpoint(path)
    assert back.layer_sizes == tuple(sizes)
    for a, b in zip(net.parameters(), back.parameters()):
        np.testing.assert_array_equal(a, b)


def test_checkpoint_layout(tmp_path):
    net = embed.init([2, 1], 0)
    path = tmp_path / "net.bin"
    embed.save_checkpoint(net, path)
    blob = path.read_bytes()
    assert blob[:8] == b"BOTNET\x00\x00"
    assert struct.unpack_from("<III", blob, 8) == (1, 2, 2)
    assert struct.unpack_from("<I", blob, 20) == (1,)
    w = struct.unpack_from("<2d", blob, 24)
    np.testing.assert_array_equal(w, net.weights[0][:, 0])
    assert struct.unpack_from("<d", blob, 40) == (0.0,)
    assert len(blob) == 48


def test_checkpoint_rejects_corruption(tmp_path):
    net = embed.init([2, 3], 0)
    path = tmp_path / "net.bin"
    embed.save_checkpoint(net, path)
    blob = path.read_bytes()
    (tmp_path / "short.bin").write_bytes(blob[:-1])
    with pytest.raises(InputError):
        embed.load_checkpoint(tmp_path / "short.bin")
    (tmp_path / "magic.bin").write_bytes(b"XXXXXXXX" + blob[8:])
    with pytest.raises(InputError):
        embed.load_checkpoint(tmp_path / "magic.bin")
    (tmp_path / "version.bin").write_bytes(blob[:8] + struct.pack("<I", 9) + blob[12:])
    with pytest.raises(InputError):
        embed.load_checkpoint(tmp_path / "version.bin")
