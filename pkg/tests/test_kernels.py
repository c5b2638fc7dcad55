import numpy as np
import pytest

from evspeaker.checkpoint import load_tensors, save_tensors
from evspeaker.kernels import (
    BatchNorm2d,
    Dense2,
    Parameter,
    conv1d_channels,
    conv2d,
    conv2d_backward,
    depthwise_hconv1d,
    gap2d,
    gap2d_backward,
    linear,
    pointwise_conv2d,
    relu,
    sigmoid,
    softmax_cross_entropy,
)
from evspeaker.optim import Adam


def test_dense2_zero_weights_give_zero():
    mlp = Dense2(np.random.default_rng(0), dtype=np.float64)
    for p in mlp.params:
        p.value[...] = 0.0
    y, _ = mlp.forward(np.random.default_rng(1).normal(size=(10, 2)))
    assert np.array_equal(y, np.zeros(10))


def test_dense2_forced_arithmetic():
    mlp = Dense2(np.random.default_rng(0), dtype=np.float64)
    mlp.w1.value[...] = 0.0
    mlp.b1.value[...] = 1.0
    mlp.w2.value[...] = 1.0
    mlp.b2.value[...] = 0.0
    y, _ = mlp.forward(np.array([[3.0, -2.0], [0.0, 0.0]]))
    assert np.allclose(y, [32.0, 32.0])


def test_dense2_chunking_matches_single_pass():
    rng = np.random.default_rng(2)
    mlp = Dense2(rng, dtype=np.float64)
    x = rng.normal(size=(200_000, 2))
    y_big, _ = mlp.forward(x)
    parts = [mlp.forward(x[i:i + 1000])[0] for i in range(0, len(x), 1000)]
    assert np.allclose(y_big, np.concatenate(parts), atol=1e-12)


def test_pointwise_identity_and_zero():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(3, 4, 5)).astype(np.float64)
    y, _ = pointwise_conv2d(x, np.eye(3), np.zeros(3))
    assert np.allclose(y, x)
    y, _ = pointwise_conv2d(x, np.zeros((2, 3)), np.array([1.5, -2.0]))
    assert np.allclose(y[0], 1.5) and np.allclose(y[1], -2.0)


def test_pointwise_linearity_zero_bias():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(4, 6, 7)).astype(np.float32)
    w = rng.normal(size=(3, 4)).astype(np.float32)
    b = np.zeros(3, dtype=np.float32)
    y1, _ = pointwise_conv2d(2.0 * x, w, b)
    y2, _ = pointwise_conv2d(x, w, b)
    assert np.allclose(y1, 2.0 * y2, rtol=1e-6)


def test_depthwise_identity_kernel():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(3, 4, 6))
    kernels = np.tile(np.array([0.0, 1.0, 0.0]), (3, 1))
    y, _ = depthwise_hconv1d(x, kernels)
    assert np.allclose(y, x)


def test_depthwise_box_kernel_row():
    x = np.ones((1, 1, 5))
    y, _ = depthwise_hconv1d(x, np.array([[1.0, 1.0, 1.0]]))
    assert np.allclose(y[0, 0], [2.0, 3.0, 3.0, 3.0, 2.0])


def test_depthwise_never_mixes_rows():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(2, 5, 8))
    x[:, 2, :] = 0.0
    y, _ = depthwise_hconv1d(x, rng.normal(size=(2, 3)))
    assert np.allclose(y[:, 2, :], 0.0)


def test_conv1d_channels_k1():
    v = np.array([1.0, -2.0, 3.0])
    y, _ = conv1d_channels(v, np.array([1.0]), 0.0)
    assert np.allclose(y, v)
    y, _ = conv1d_channels(v, np.array([0.0]), 2.5)
    assert np.allclose(y, 2.5)


def test_conv1d_channels_linearity():
    rng = np.random.default_rng(7)
    v = rng.normal(size=12)
    w = rng.normal(size=3)
    y1, _ = conv1d_channels(3.0 * v, w, 0.0)
    y2, _ = conv1d_channels(v, w, 0.0)
    assert np.allclose(y1, 3.0 * y2, rtol=1e-6)


def test_gap2d_values_and_gradient():
    x = np.full((2, 3, 4), 5.0)
    y, cache = gap2d(x)
    assert np.allclose(y, 5.0)
    one_hot = np.zeros((1, 2, 2))
    one_hot[0, 1, 1] = 4.0  # H*W == 4
    y, _ = gap2d(one_hot)
    assert np.allclose(y, 1.0)
    dx = gap2d_backward(np.array([1.0, 1.0]), cache)
    assert np.allclose(dx, 1.0 / 12.0)


def test_batchnorm_eval_identity_stats():
    bn = BatchNorm2d(3, dtype=np.float64)
    x = np.random.default_rng(8).normal(size=(2, 3, 4, 4))
    y, _ = bn.forward(x, training=False)
    assert np.allclose(y, x, rtol=1e-4)


def test_batchnorm_train_normalizes():
    bn = BatchNorm2d(3, dtype=np.float64)
    x = np.random.default_rng(9).normal(loc=3.0, scale=2.0, size=(4, 3, 8, 8))
    y, _ = bn.forward(x, training=True)
    assert np.allclose(y.mean(axis=(0, 2, 3)), 0.0, atol=1e-4)
    assert np.allclose(y.var(axis=(0, 2, 3)), 1.0, atol=1e-4)


def test_batchnorm_updates_running_stats():
    bn = BatchNorm2d(1, dtype=np.float64)
    x = np.full((2, 1, 2, 2), 10.0)
    bn.forward(x, training=True)
    assert np.allclose(bn.running_mean, 1.0)  # 0.9 * 0 + 0.1 * 10


def test_activations():
    y, _ = sigmoid(np.array([0.0]))
    assert np.allclose(y, 0.5)
    y, _ = relu(np.array([-3.0, 2.0]))
    assert np.allclose(y, [0.0, 2.0])


def test_softmax_ce_uniform_logits():
    loss, grad, probs = softmax_cross_entropy(np.zeros(50), 7)
    assert np.isclose(loss, np.log(50.0))
    assert np.isclose(loss, 3.912, atol=1e-3)
    assert np.allclose(probs, 1.0 / 50.0)


def test_softmax_ce_large_margin():
    logits = np.zeros(5)
    logits[2] = 50.0
    loss, grad, _ = softmax_cross_entropy(logits, 2)
    assert loss < 1e-8
    expected = np.exp(logits - logits.max())
    expected /= expected.sum()
    expected[2] -= 1.0
    assert np.allclose(grad, expected)


def test_softmax_ce_batch_grad_is_softmax_minus_onehot():
    rng = np.random.default_rng(10)
    logits = rng.normal(size=(6, 4))
    labels = rng.integers(0, 4, 6)
    loss, grad, probs = softmax_cross_entropy(logits, labels)
    onehot = np.zeros_like(logits)
    onehot[np.arange(6), labels] = 1.0
    assert np.allclose(grad, (probs - onehot) / 6)


def test_conv2d_stride_and_identity():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(2, 3, 8, 9)).astype(np.float64)
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    y, _ = conv2d(x, w, np.zeros(3), stride=1, pad=1)
    assert np.allclose(y, x)
    y2, _ = conv2d(x, w, np.zeros(3), stride=2, pad=1)
    assert y2.shape == (2, 3, 4, 5)
    assert np.allclose(y2, x[:, :, ::2, ::2])


def test_conv2d_backward_shapes_and_fd():
    rng = np.random.default_rng(12)
    x = rng.normal(size=(2, 2, 5, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    r = rng.normal(size=(2, 3, 3, 3))
    y, cache = conv2d(x, w, b, stride=2, pad=1)
    dx, dw, db = conv2d_backward(r, cache)
    assert dx.shape == x.shape and dw.shape == w.shape and db.shape == b.shape
    h = 1e-6
    for idx in [(0, 1, 2, 3), (1, 0, 4, 5)]:
        xp = x.copy(); xp[idx] += h
        xm = x.copy(); xm[idx] -= h
        num = (np.sum(conv2d(xp, w, b, 2, 1)[0] * r)
               - np.sum(conv2d(xm, w, b, 2, 1)[0] * r)) / (2 * h)
        assert np.isclose(dx[idx], num, rtol=1e-4)


def test_linear():
    x = np.array([[1.0, 2.0]])
    w = np.array([[3.0, 4.0], [0.5, -1.0]])
    y, _ = linear(x, w, np.array([1.0, 0.0]))
    assert np.allclose(y, [[12.0, -1.5]])


# -- Adam ---------------------------------------------------------------------


def test_adam_zero_grad_no_change():
    p = Parameter("p", np.array([1.0, -2.0]))
    opt = Adam([p], lr=1e-2)
    opt.step()
    assert np.allclose(p.value, [1.0, -2.0])


def test_adam_first_step_magnitude():
    p = Parameter("p", np.array([0.0]))
    p.grad[...] = 3.7
    opt = Adam([p], lr=1e-3)
    opt.step()
    # bias-corrected first step moves by ~lr regardless of gradient size
    assert np.isclose(abs(p.value[0]), 1e-3, rtol=1e-4)


def scalar_adam_oracle(grads, lr=0.05, b1=0.9, b2=0.999, eps=1e-8):
    """Independent hand-rolled Adam trajectory for one scalar parameter."""
    theta, m, v = 0.5, 0.0, 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        theta -= lr * m_hat / (np.sqrt(v_hat) + eps)
        out.append(theta)
    return out


def test_adam_matches_scalar_oracle():
    p = Parameter("p", np.array([0.5]))
    opt = Adam([p], lr=0.05)
    grads = [0.3, -0.8]
    seen = []
    for g in grads:
        opt.zero_grad()
        p.grad[...] = g
        opt.step()
        seen.append(float(p.value[0]))
    expected = scalar_adam_oracle(grads)
    assert np.allclose(seen, expected, atol=1e-10)


def test_adam_rejects_duplicate_names():
    with pytest.raises(ValueError):
        Adam([Parameter("a", np.zeros(1)), Parameter("a", np.zeros(2))])


# -- checkpoint ----------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    tensors = {
        "w": rng.normal(size=(3, 4)).astype(np.float32),
        "b": rng.normal(size=(5,)).astype(np.float32),
        "scalar": np.array(2.5, dtype=np.float32),
    }
    meta = {"classes": [1, 2, 3]}
    path = tmp_path / "ckpt.ntc"
    save_tensors(path, tensors, meta)
    loaded, loaded_meta = load_tensors(path)
    assert loaded_meta == meta
    for name, arr in tensors.items():
        assert np.array_equal(loaded[name], arr)


def test_checkpoint_bytes_deterministic(tmp_path):
    rng = np.random.default_rng(14)
    tensors = {"a": rng.normal(size=(7,)).astype(np.float32)}
    p1, p2 = tmp_path / "1.ntc", tmp_path / "2.ntc"
    save_tensors(p1, tensors, {"k": 1})
    save_tensors(p2, tensors, {"k": 1})
    assert p1.read_bytes() == p2.read_bytes()
