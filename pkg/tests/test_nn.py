import math

import numpy as np
import pytest

from linac import lnt1
from linac.nn import (BlockLinear, ChannelAffine, Conv2d, Dense, Flatten, GlobalAvgPool, ReLU,
                      Sequential, ShapeError, Swish, adam_init, adam_step, cosine_lr, ema_init,
                      ema_update, momentum_init, nesterov_step, softmax, softmax_cross_entropy)
from linac.nn.optim import EmaState, OptimizerShapeError, adam_update, step_lr
from linac.rng import derive_stream

from .gradcheck import check_layer_gradients, check_network_gradients

LAYER_CASES = [
    (Dense(5, 4), (3, 5)),
    (Dense(5, 4, bias=False), (2, 3, 5)),
    (Conv2d(3, 4, kernel=3, stride=1), (2, 5, 5, 3)),
    (Conv2d(2, 3, kernel=3, stride=2), (2, 6, 6, 2)),
    (Conv2d(2, 3, kernel=3, stride=2), (1, 5, 7, 2)),
    (ReLU(), (4, 6)),
    (Swish(), (4, 6)),
    (GlobalAvgPool(), (2, 3, 4, 5)),
    (Flatten(), (2, 3, 2, 2)),
    (BlockLinear(2, channels=3), (2, 4, 4, 3)),
    (ChannelAffine((0.1, -0.2, 0.3), (0.5, 2.0, 1.5)), (2, 3, 3, 3)),
]


@pytest.mark.parametrize("layer,shape", LAYER_CASES, ids=lambda v: getattr(v, "kind", ""))
def test_layer_gradients_match_finite_differences(layer, shape):
    worst = check_layer_gradients(layer, shape, probes=20, seed=len(shape))
    assert worst <= 1e-5


def test_classifier_network_gradients():
    net = Sequential([Conv2d(3, 4), Swish(), Conv2d(4, 6, stride=2), Swish(),
                      GlobalAvgPool(), Dense(6, 10)])
    assert check_network_gradients(net, (2, 6, 6, 3), probes=20) <= 1e-5


def test_dense_identity_forward():
    x = np.array([[1.5, -2.0]])
    y, _ = Dense(2, 2).forward({"W": np.eye(2), "b": np.zeros(2)}, x)
    assert np.array_equal(y, x)


def test_relu_and_swish_values():
    assert ReLU().forward({}, np.array([-1.0, 2.0]))[0].tolist() == [0.0, 2.0]
    assert Swish().forward({}, np.array([0.0]))[0].tolist() == [0.0]


def test_dense_input_grad_hand_case():
    W = np.array([[1.0, 2.0], [3.0, 4.0]])
    layer = Dense(2, 2)
    params = {"W": W, "b": np.zeros(2)}
    _, cache = layer.forward(params, np.array([[0.5, -1.0]]))
    gx, _ = layer.backward(params, cache, np.array([[1.0, -1.0]]))
    # W @ g = [1 - 2, 3 - 4]
    assert gx.tolist() == [[-1.0, -1.0]]


def test_zero_output_grad_gives_zero_grads():
    net = Sequential([Conv2d(3, 4), Swish(), GlobalAvgPool(), Dense(4, 2)])
    params, _ = net.init_params(derive_stream(0, "t"), np.float64)
    x = np.random.default_rng(0).normal(size=(2, 4, 4, 3))
    y, caches = net.forward(params, x)
    gx, grads = net.backward(params, caches, np.zeros_like(y))
    assert not gx.any()
    assert all(not g.any() for group in grads for g in group.values())


def test_shape_mismatch_rejected_before_compute():
    net = Sequential([Dense(3, 4), ReLU(), Dense(5, 2)])
    with pytest.raises(ShapeError, match="layer 2"):
        net.output_shape((1, 3))
    with pytest.raises(ShapeError):
        Sequential([Conv2d(3, 4)]).forward([{"W": np.zeros((3, 3, 3, 4)), "b": np.zeros(4)}],
                                           np.zeros((1, 4, 4, 2)))


def test_conv_same_padding_shapes():
    assert Conv2d(3, 8).output_shape((2, 16, 16, 3)) == (2, 16, 16, 8)
    assert Conv2d(8, 8, stride=2).output_shape((2, 16, 16, 8)) == (2, 8, 8, 8)
    assert Conv2d(8, 8, stride=2).output_shape((2, 5, 5, 8)) == (2, 3, 3, 8)


def test_conv_matches_direct_loops():
    rs = np.random.default_rng(1)
    layer = Conv2d(2, 3, stride=2)
    W, b = rs.normal(size=(3, 3, 2, 3)), rs.normal(size=3)
    x = rs.normal(size=(1, 5, 5, 2))
    y, _ = layer.forward({"W": W, "b": b}, x)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros((1, 3, 3, 3))
    for i in range(3):
        for j in range(3):
            patch = xp[0, 2 * i:2 * i + 3, 2 * j:2 * j + 3, :]
            ref[0, i, j] = np.einsum("abc,abcd->d", patch, W) + b
    assert np.allclose(y, ref)


def test_block_linear_identity_init_is_exact():
    layer = BlockLinear(4, channels=3)
    params, _ = layer.init_params(derive_stream(0, "x"))
    x = np.random.default_rng(0).random((2, 8, 8, 3)).astype(np.float32)
    assert np.array_equal(layer.forward(params, x)[0], x)


def test_init_params_statistics_and_determinism():
    net = Sequential([Dense(20, 256), ReLU(), Dense(256, 3)])
    p1, _ = net.init_params(derive_stream(5, "init"))
    p2, _ = net.init_params(derive_stream(5, "init"))
    for a, b in zip(p1, p2):
        for k in a:
            assert np.array_equal(a[k], b[k])
    std = p1[0]["W"].std()
    assert 0.9 / math.sqrt(20) <= std <= 1.1 / math.sqrt(20)
    assert not p1[0]["b"].any() and not p1[2]["b"].any()


def test_softmax_cross_entropy_values():
    loss, grad = softmax_cross_entropy(np.zeros(10), 3)
    assert loss == pytest.approx(math.log(10), abs=1e-12)
    assert grad.sum() == pytest.approx(0.0, abs=1e-12)
    big = np.zeros(10)
    big[2] = 1000.0
    assert softmax_cross_entropy(big, 2)[0] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        softmax_cross_entropy(np.zeros(10), 10)


def test_softmax_cross_entropy_gradient_fd():
    z = np.random.default_rng(2).normal(size=7)
    _, g = softmax_cross_entropy(z, 4)
    h = 1e-6
    for i in range(7):
        e = np.zeros(7)
        e[i] = h
        fd = (softmax_cross_entropy(z + e, 4)[0] - softmax_cross_entropy(z - e, 4)[0]) / (2 * h)
        assert abs(fd - g[i]) <= 1e-6 * max(1.0, abs(g[i]))


def test_softmax_sums_to_one():
    p = softmax(np.random.default_rng(0).normal(size=(5, 10)) * 10)
    assert np.allclose(p.sum(axis=1), 1.0)


def _scalar(v):
    return [{"p": np.array([v], dtype=np.float64)}]


def test_adam_first_step_hand_value():
    params = _scalar(0.0)
    st = adam_init(params)
    new, st = adam_step(params, _scalar(1.0), st, 0.001)
    # m_hat = v_hat = 1  ->  step = lr / (1 + eps)
    assert new[0]["p"][0] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)
    assert new[0]["p"][0] == pytest.approx(-0.000999999995, abs=1e-11)
    assert st.t == 1


def test_adam_zero_grad_is_noop_and_pure():
    params = [{"W": np.arange(4.0).reshape(2, 2)}]
    st = adam_init(params)
    zero = [{"W": np.zeros((2, 2))}]
    new, _ = adam_step(params, zero, st, 0.01)
    assert np.array_equal(new[0]["W"], params[0]["W"])
    g = [{"W": np.ones((2, 2))}]
    a, _ = adam_step(params, g, st, 0.01)
    b, _ = adam_step(params, g, st, 0.01)
    assert np.array_equal(a[0]["W"], b[0]["W"])
    with pytest.raises(OptimizerShapeError):
        adam_step(params, [{"W": np.ones(3)}], st, 0.01)


def test_fused_adam_kernel_matches_reference_bitwise():
    from linac.inr import _adam_fused

    rs = np.random.default_rng(0)
    p = rs.normal(size=1000).astype(np.float32)
    g = rs.normal(size=1000).astype(np.float32)
    m = rs.normal(size=1000).astype(np.float32)
    v = rs.random(1000).astype(np.float32)
    t, lr = 7, 3e-4
    ref_p, ref_m, ref_v = adam_update(p, g, m, v, lr, t)
    f = np.float32
    p2, m2, v2 = p.copy(), m.copy(), v.copy()
    _adam_fused(p2, g, m2, v2, f(0.9), f(1) - f(0.9), f(0.999), f(1) - f(0.999),
                f(lr / (1 - 0.9 ** t)), f(1 / math.sqrt(1 - 0.999 ** t)), f(1e-8),
                np.finfo(np.float32).tiny)
    assert np.array_equal(p2, ref_p) and np.array_equal(m2, ref_m) and np.array_equal(v2, ref_v)


def test_adam_flushes_subnormal_moments():
    tiny = np.finfo(np.float32).tiny
    p = np.ones(3, np.float32)
    g = np.zeros(3, np.float32)
    m = np.array([tiny, -tiny * 4, 1e-3], np.float32)
    v = np.array([tiny, tiny * 4, 1e-6], np.float32)
    _, m2, v2 = adam_update(p, g, m, v, 1e-3, 5)
    # 0.9 * tiny is subnormal and becomes exactly zero; larger values decay normally
    assert m2[0] == 0 and m2[1] == np.float32(0.9) * np.float32(-tiny * 4) and m2[2] != 0
    assert v2[0] == 0 and v2[1] != 0
    assert not np.any((m2 != 0) & (np.abs(m2) < tiny))


def test_sgd_without_momentum_is_plain():
    params, grads = _scalar(1.0), _scalar(0.5)
    new, _ = nesterov_step(params, grads, momentum_init(params, momentum=0.0), 0.1)
    assert new[0]["p"][0] == pytest.approx(0.95)


def test_nesterov_two_step_hand_trace():
    params = _scalar(1.0)
    st = momentum_init(params, momentum=0.9)
    p1, st = nesterov_step(params, _scalar(1.0), st, 0.1)
    # v1 = 1; p1 = 1 - 0.1 * (0.9 * 1 + 1) = 0.81
    assert p1[0]["p"][0] == pytest.approx(0.81)
    p2, st = nesterov_step(p1, _scalar(2.0), st, 0.1)
    # v2 = 0.9 + 2 = 2.9; p2 = 0.81 - 0.1 * (0.9 * 2.9 + 2) = 0.349
    assert st.velocity[0]["p"][0] == pytest.approx(2.9)
    assert p2[0]["p"][0] == pytest.approx(0.349)


def test_weight_decay_alone_shrinks():
    params = _scalar(-2.0)
    new, _ = nesterov_step(params, _scalar(0.0), momentum_init(params), 0.1, weight_decay=0.1)
    assert abs(new[0]["p"][0]) < 2.0


def test_cosine_schedule():
    assert cosine_lr(0, 320, 1e-3, 1e-4) == pytest.approx(1e-3)
    assert cosine_lr(320, 320, 1e-3, 1e-4) == pytest.approx(1e-7)
    assert cosine_lr(160, 320, 1e-3, 1e-4) == pytest.approx(1e-3 * (1e-4 + (1 - 1e-4) / 2))
    lrs = [cosine_lr(t, 100, 1.0, 0.01) for t in range(101)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_step_schedule():
    drops = (650, 800, 900, 950)
    assert step_lr(0, 0.4, drops) == 0.4
    assert step_lr(700, 0.4, drops) == pytest.approx(0.04)
    assert step_lr(999, 0.4, drops) == pytest.approx(0.4e-4)


def test_ema():
    st = ema_init(_scalar(0.0), decay=0.995)
    st = ema_update(st, _scalar(1.0))
    assert st.shadow[0]["p"][0] == pytest.approx(0.005)
    st0 = ema_update(ema_init(_scalar(0.0), decay=0.0), _scalar(3.0))
    assert st0.shadow[0]["p"][0] == 3.0
    with pytest.raises(ValueError):
        EmaState(_scalar(0.0), decay=1.0)


@pytest.mark.parametrize("dtype", ["<f4", "<f8", "u1", "<i8"])
def test_lnt1_roundtrip(tmp_path, dtype):
    a = (np.arange(24).reshape(2, 3, 4) % 7).astype(dtype)
    lnt1.save(tmp_path / "a.lnt1", a)
    b = lnt1.load(tmp_path / "a.lnt1")
    assert b.dtype == np.dtype(dtype) and np.array_equal(a, b)


def test_lnt1_layout():
    buf = lnt1.dumps(np.array([[1.0, 2.0]], dtype=np.float32))
    assert buf[:4] == b"LNT1"
    assert buf[4] == 0 and buf[5] == 2
    assert buf[6:14] == (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
    assert np.frombuffer(buf[14:], "<f4").tolist() == [1.0, 2.0]
    with pytest.raises(lnt1.LNT1Error):
        lnt1.loads(b"XXXX" + buf[4:])
    with pytest.raises(lnt1.LNT1Error):
        lnt1.loads(buf[:-1])


def test_param_bundle_roundtrip(tmp_path):
    net = Sequential([Dense(3, 4), ReLU(), Dense(4, 2)])
    params, _ = net.init_params(derive_stream(1, "x"))
    lnt1.save_params(tmp_path, params, {"layers": net.to_list()})
    loaded, doc = lnt1.load_params(tmp_path)
    assert Sequential.from_list(doc["layers"]) == net
    for a, b in zip(params, loaded):
        assert all(np.array_equal(a[k], b[k]) for k in a)
