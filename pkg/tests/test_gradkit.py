import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coopdrive import gradkit as gk
from coopdrive.gradkit import ops
from coopdrive.gradkit.tensor import ContractError, DimensionError, NumericError, Tensor


def conv_oracle(x, w, stride, pad):
    c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for c in range(c_in):
                    for a in range(kh):
                        for b in range(kw):
                            acc += xp[c, i * stride + a, j * stride + b] * w[o, c, a, b]
                out[o, i, j] = acc
    return out


def numeric_grad(f, arrays, h=1e-5):
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = arr[idx]
            arr[idx] = old + h
            fp = f()
            arr[idx] = old - h
            fm = f()
            arr[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def assert_grad_close(analytic, numeric, rtol=1e-4):
    scale = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-8)
    assert np.abs(analytic - numeric).max() / scale < rtol


def test_conv_sum_of_ones():
    out = gk.conv2d(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))))
    assert out.shape == (1, 1, 1)
    assert out.data.item() == 9.0


def test_conv_identity_kernel():
    x = np.random.default_rng(0).normal(size=(1, 5, 6))
    out = gk.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))))
    np.testing.assert_array_equal(out.data, x)


def test_conv_matches_nested_loops():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 8, 8))
    w = rng.normal(size=(4, 2, 3, 3))
    out = gk.conv2d(Tensor(x), Tensor(w), stride=2, padding=1)
    assert out.shape == (4, 4, 4)
    np.testing.assert_allclose(out.data, conv_oracle(x, w, 2, 1), rtol=1e-12, atol=1e-12)


def test_conv_shape_errors():
    with pytest.raises(DimensionError, match="channel"):
        gk.conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))
    with pytest.raises(DimensionError, match="exceeds"):
        gk.conv2d(Tensor(np.ones((1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))


def test_backward_square():
    x = Tensor(np.array(3.0), requires_grad=True)
    gk.backward(x * x)
    assert x.grad == pytest.approx(6.0)


def test_backward_softmax_sum_is_zero():
    v = Tensor(np.array([0.3, -1.2, 2.0, 0.1]), requires_grad=True)
    gk.backward(ops.sum(ops.softmax(ops.reshape(v, (1, 4)))))
    assert np.all(np.abs(v.grad) < 1e-12)


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        gk.backward(x * 2.0)
    gk.current_tape().clear()


def test_unreachable_leaf_gets_zero_grad():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    b = Tensor(np.array([3.0, 4.0]), requires_grad=True)
    b.grad[:] = 7.0
    _ = b * 2.0  # recorded but not part of the loss
    gk.backward(ops.sum(a * a))
    np.testing.assert_allclose(a.grad, [2.0, 4.0])
    np.testing.assert_array_equal(b.grad, 0.0)


def test_tape_cleared_after_backward():
    x = Tensor(np.array(2.0), requires_grad=True)
    gk.backward(x * x)
    assert len(gk.current_tape()) == 0
    gk.backward(x * x * x)
    assert x.grad == pytest.approx(12.0)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with gk.no_grad():
        y = x * 2.0
    assert not y.requires_grad
    assert len(gk.current_tape()) == 0


def test_bias_only_broadcasting():
    a = Tensor(np.ones((4, 3)))
    ops.add(a, Tensor(np.ones(3)))
    with pytest.raises(DimensionError):
        ops.add(a, Tensor(np.ones(4)))


def _three_layer_net(seed):
    rng = np.random.default_rng(seed)
    conv = Tensor(rng.normal(size=(3, 2, 3, 3)) * 0.5, requires_grad=True, dtype=np.float64)
    cb = Tensor(rng.normal(size=3) * 0.1, requires_grad=True, dtype=np.float64)
    w1 = Tensor(rng.normal(size=(3 * 3 * 3, 6)) * 0.3, requires_grad=True, dtype=np.float64)
    b1 = Tensor(rng.normal(size=6) * 0.1, requires_grad=True, dtype=np.float64)
    w2 = Tensor(rng.normal(size=(6, 4)) * 0.3, requires_grad=True, dtype=np.float64)
    x = rng.normal(size=(2, 2, 6, 6))
    target = np.array([1, 3])

    def loss():
        h = ops.tanh(ops.conv2d(Tensor(x), conv, cb, stride=2, padding=1))
        h = ops.relu(ops.linear(ops.reshape(h, (2, -1)), w1, b1))
        lp = ops.log_softmax(ops.matmul(h, w2))
        return ops.mul(ops.mean(ops.pick(lp, target)), -1.0)

    return loss, [conv, cb, w1, b1, w2]


@pytest.mark.parametrize("seed", range(3))
def test_three_layer_network_matches_finite_differences(seed):
    loss, params = _three_layer_net(seed)
    gk.backward(loss())
    analytic = [p.grad.copy() for p in params]
    with gk.no_grad():
        numeric = numeric_grad(lambda: loss().data.item(), [p.data for p in params])
    for a, n in zip(analytic, numeric):
        assert_grad_close(a, n)


def test_categorical_saturated():
    rng = np.random.default_rng(0)
    hits = sum(gk.categorical_sample(np.array([1000.0, 0, 0, 0, 0]), rng)[0] == 0 for _ in range(10_000))
    assert hits / 10_000 > 0.999


def test_categorical_uniform_and_softmax_frequencies():
    rng = np.random.default_rng(1)
    a, _ = gk.sample_batch(np.zeros((100_000, 5)), rng)
    freq = np.bincount(a, minlength=5) / a.size
    assert np.all(np.abs(freq - 0.2) < 0.02)

    logits = np.array([1.0, 2.0, 3.0])
    expected = np.exp(logits) / np.exp(logits).sum()
    np.testing.assert_allclose(expected, [0.090, 0.245, 0.665], atol=1e-3)
    a, lp = gk.sample_batch(np.tile(logits, (100_000, 1)), rng)
    freq = np.bincount(a, minlength=3) / a.size
    assert np.all(np.abs(freq - expected) < 0.01)
    np.testing.assert_allclose(lp, np.log(expected)[a])


def test_categorical_sample_log_prob():
    rng = np.random.default_rng(5)
    logits = np.array([0.5, -1.0, 2.0])
    a, lp = gk.categorical_sample(logits, rng)
    assert lp == pytest.approx(logits[a] - np.log(np.exp(logits).sum()))


def test_categorical_rejects_non_finite():
    with pytest.raises(NumericError):
        gk.categorical_sample(np.array([0.0, np.nan]), np.random.default_rng(0))


def test_entropy_values():
    assert gk.entropy(np.zeros(5)).data.item() == pytest.approx(np.log(5))
    assert gk.entropy(np.array([1000.0, 0, 0, 0, 0])).data.item() == pytest.approx(0.0, abs=1e-12)
    p = np.exp([1.0, 2.0, 3.0]) / np.exp([1.0, 2.0, 3.0]).sum()
    oracle = -(p * np.log(p)).sum()
    assert oracle == pytest.approx(0.83240, abs=1e-5)
    assert gk.entropy(np.array([1.0, 2.0, 3.0])).data.item() == pytest.approx(oracle, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=12))
def test_softmax_and_entropy_bounds(logits):
    x = np.array(logits)
    p = ops.softmax(Tensor(x[None], dtype=np.float64)).data
    assert abs(p.sum() - 1.0) < 1e-9
    h = gk.entropy(x).data.item()
    assert -1e-12 <= h <= np.log(len(logits)) + 1e-12


def test_adam_zero_gradient_leaves_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    st_ = gk.OptimizerState.for_params([p], lr=0.1)
    gk.adam_step([p], st_)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert st_.step == 1


def test_adam_first_step_magnitude():
    p = Tensor(np.array(0.5), requires_grad=True, dtype=np.float64)
    p.grad = np.array(1.0)
    st_ = gk.OptimizerState.for_params([p], lr=0.001)
    gk.adam_step([p], st_)
    # m_hat = 1, v_hat = 1 -> update = lr / (1 + eps)
    assert 0.5 - p.data.item() == pytest.approx(0.001 / (1 + 1e-8), rel=1e-12)


def test_adam_constant_gradient_monotone():
    p = Tensor(np.array(0.0), requires_grad=True, dtype=np.float64)
    st_ = gk.OptimizerState.for_params([p], lr=0.01)
    prev = p.data.item()
    for k in range(100):
        p.grad = np.array(2.0)
        gk.adam_step([p], st_)
        assert p.data.item() < prev
        prev = p.data.item()
    assert st_.step == 100


def test_adam_missing_grad():
    p = Tensor(np.array(1.0))
    with pytest.raises(ContractError):
        gk.adam_step([p], gk.OptimizerState.for_params([p]))


def test_forward_is_bit_deterministic():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(3, 2, 16, 16)).astype(np.float32)
    w = rng.normal(size=(4, 2, 3, 3)).astype(np.float32)
    a = gk.conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data
    b = gk.conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data
    assert a.tobytes() == b.tobytes()


def test_checkpoint_round_trip(tmp_path):
    tensors = {"actor.w": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array([1.5], dtype=np.float32)}
    path = gk.checkpoint.save(tmp_path / "c.ovml", tensors)
    blob = path.read_bytes()
    assert blob[:4] == b"OVML"
    assert int.from_bytes(blob[4:8], "little") == 1
    back = gk.checkpoint.load(path)
    assert list(back) == list(tensors)
    for k in tensors:
        np.testing.assert_array_equal(back[k], tensors[k])


def test_checkpoint_rejects_garbage():
    with pytest.raises(gk.checkpoint.CheckpointError):
        gk.checkpoint.loads(b"NOPE" + bytes(8))
    blob = gk.checkpoint.dumps({"a": np.ones(4, dtype=np.float32)})
    with pytest.raises(gk.checkpoint.CheckpointError):
        gk.checkpoint.loads(blob[:-2])
