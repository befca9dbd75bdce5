import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linac.datasets import natural_patches
from linac.inr import (FitConfig, FitError, InrArch, InrParams, batch_loss_grads, encode_grid,
                       epoch_orders, fit_inr, fit_inr_batch, hidden_activations, initial_params,
                       pixel_grid, positional_encode, reconstruct, reconstruction_error)

SMALL = InrArch(layers=3, width=16, freqs=3)


def test_positional_encoding_values():
    assert np.allclose(positional_encode(0.0, 1), [0, 1])
    assert np.allclose(positional_encode(1.0, 2), [0, -1, 0, 1])
    assert np.allclose(positional_encode(0.5, 1), [1, 0])


@settings(max_examples=50, deadline=None)
@given(st.floats(-1, 1), st.integers(1, 8))
def test_positional_encoding_pairs_on_unit_circle(d, freqs):
    enc = positional_encode(d, freqs)
    assert enc.shape == (2 * freqs,)
    assert np.allclose(enc[0::2] ** 2 + enc[1::2] ** 2, 1.0)


def test_pixel_grids():
    assert pixel_grid(2, 1, "endpoints")[:, 0, 0].tolist() == [-1.0, 1.0]
    assert pixel_grid(3, 1, "endpoints")[:, 0, 0].tolist() == [-1.0, 0.0, 1.0]
    assert pixel_grid(2, 1)[:, 0, 0].tolist() == [-0.5, 0.5]
    for grid in ("centers", "endpoints"):
        assert pixel_grid(1, 1, grid).tolist() == [[[0.0, 0.0]]]
    g = pixel_grid(4, 6)
    assert g.shape == (4, 6, 2) and g.min() > -1 and g.max() < 1


def test_endpoint_grid_aliases_opposite_borders():
    # the encoding has period 2, so rows at -1 and +1 look identical
    enc = encode_grid(8, 8, 5, "endpoints").reshape(8, 8, -1)
    assert np.allclose(enc[0], enc[-1])
    enc = encode_grid(8, 8, 5).reshape(64, -1)
    assert len(np.unique(enc.round(9), axis=0)) == 64


def test_encode_grid_layout():
    enc = encode_grid(3, 4, 5)
    assert enc.shape == (12, 20)
    g = pixel_grid(3, 4).reshape(-1, 2)
    assert np.allclose(enc[5, :10], positional_encode(g[5, 0], 5))
    assert np.allclose(enc[5, 10:], positional_encode(g[5, 1], 5))


def test_batch_gradients_match_finite_differences():
    rs = np.random.default_rng(0)
    arch = InrArch(layers=3, width=8, freqs=2)
    dims = arch.dims()
    Ws = [rs.normal(size=(2, i, o)) / np.sqrt(i) for i, o in dims]
    bs = [0.1 * rs.normal(size=(2, o)) for _, o in dims]
    inputs = rs.normal(size=(2, 5, arch.input_dim))
    targets = rs.normal(size=(2, 5, 3))
    scale = 0.7

    def loss(Ws, bs):
        gW = [np.empty_like(w) for w in Ws]
        gb = [np.empty_like(b) for b in bs]
        d = batch_loss_grads(Ws, bs, inputs, targets, scale, gW, gb)
        return 0.5 * scale * float((d ** 2).sum()), gW, gb

    _, gW, gb = loss(Ws, bs)
    h, worst = 1e-6, 0.0
    for probe in range(40):
        group, grads = (Ws, gW) if probe % 2 == 0 else (bs, gb)
        layer = rs.integers(0, len(group))
        idx = tuple(rs.integers(0, s) for s in group[layer].shape)
        plus = [a.copy() for a in group]
        minus = [a.copy() for a in group]
        plus[layer][idx] += h
        minus[layer][idx] -= h
        fp = loss(plus, bs)[0] if group is Ws else loss(Ws, plus)[0]
        fm = loss(minus, bs)[0] if group is Ws else loss(Ws, minus)[0]
        fd = (fp - fm) / (2 * h)
        a = grads[layer][idx]
        worst = max(worst, abs(a - fd) / max(abs(a) + abs(fd), 1e-8))
    assert worst <= 1e-5


def test_step_count_32x32():
    img = natural_patches(1, 32, key=3)[0]
    res = fit_inr_batch(img[None], FitConfig(epochs=10, batch_size=32), SMALL)
    assert res.steps == 320 and res.trace.shape == (1, 320)


def test_step_count_truncates_partial_batch():
    img = np.random.default_rng(0).random((5, 7, 3))
    res = fit_inr_batch(img[None], FitConfig(epochs=3, batch_size=4), SMALL)
    assert res.steps == (35 // 4) * 3


def test_batch_larger_than_image_rejected():
    with pytest.raises(ValueError):
        fit_inr_batch(np.zeros((1, 4, 4, 3)), FitConfig(batch_size=32), SMALL)


def test_non_finite_input_rejected():
    img = np.zeros((1, 8, 8, 3))
    img[0, 1, 1, 1] = np.nan
    with pytest.raises(FitError):
        fit_inr_batch(img, FitConfig(batch_size=8), SMALL)


def test_diverging_fit_raises():
    img = np.full((1, 8, 8, 3), 1e30, dtype=np.float32)
    with pytest.raises(FitError, match="non-finite loss"):
        fit_inr_batch(img, FitConfig(batch_size=8, learning_rate=1e30), SMALL)


def test_shared_start_and_epoch_coverage():
    a = initial_params(SMALL, 11)
    b = initial_params(SMALL, 11)
    c = initial_params(SMALL, 12)
    assert all(np.array_equal(p["W"], q["W"]) for p, q in zip(a, b))
    assert not np.array_equal(a[0]["W"], c[0]["W"])
    orders = epoch_orders(11, 64, 4)
    for row in orders:
        assert sorted(row.tolist()) == list(range(64))
    assert not np.array_equal(orders[0], orders[1])


def test_fit_is_deterministic_and_stack_invariant():
    imgs = natural_patches(3, 16, key=1)
    cfg = FitConfig(epochs=2, batch_size=16, key=5)
    together = fit_inr_batch(imgs, cfg, SMALL)
    again = fit_inr_batch(imgs, cfg, SMALL)
    alone = fit_inr_batch(imgs[1:2], cfg, SMALL)
    for l in range(len(SMALL.dims())):
        assert np.array_equal(together.params.weights[l], again.params.weights[l])
        assert np.array_equal(together.params.weights[l][1], alone.params.weights[l][0])
        assert np.array_equal(together.params.biases[l][1], alone.params.biases[l][0])
    assert np.array_equal(together.trace[1], alone.trace[0])


def test_per_image_keys():
    img = natural_patches(1, 16, key=2)
    cfg = FitConfig(epochs=1, batch_size=16)
    res = fit_inr_batch(np.concatenate([img, img]), cfg, SMALL, keys=[1, 2])
    solo = fit_inr_batch(img, FitConfig(epochs=1, batch_size=16, key=2), SMALL)
    assert np.array_equal(res.params.weights[0][1], solo.params.weights[0][0])
    assert not np.array_equal(res.params.weights[0][0], res.params.weights[0][1])


def test_zero_image_fits_nearly_exactly():
    params, trace = fit_inr(np.zeros((32, 32, 3), np.float32), FitConfig(), InrArch())
    _, err = reconstruct(params, 32, 32, np.zeros((1, 32, 32, 3)))
    assert err[0] <= 1e-3
    assert np.all(np.isfinite(trace))


def test_trace_decreases_on_natural_images():
    imgs = natural_patches(4, 32, key=7)
    imgs = (imgs - imgs.mean()) / imgs.std()
    res = fit_inr_batch(imgs, FitConfig(), InrArch())
    assert np.all(res.trace[:, -1] < res.trace[:, 0])
    _, err = reconstruct(res.params, 32, 32, imgs)
    # every pixel is visited in the last epoch, so the last-epoch mean of the
    # mini-batch trace tracks the full-grid error
    assert np.allclose(res.trace[:, -32:].mean(axis=1), err, rtol=0.5)


def test_hidden_activations():
    imgs = natural_patches(2, 8, key=1)
    res = fit_inr_batch(imgs, FitConfig(epochs=1, batch_size=8), SMALL)
    h = res.params.hidden(1, 8, 8)
    assert h.shape == (2, 8, 8, SMALL.width) and h.min() >= 0
    p = pixel_grid(8, 8)[3, 5]
    assert np.allclose(hidden_activations(res.params, p, 1, index=1), h[1, 3, 5], atol=1e-6)
    assert np.array_equal(res.params.hidden(1, 8, 8), h)
    with pytest.raises(ValueError):
        res.params.hidden(SMALL.layers, 8, 8)
    with pytest.raises(ValueError):
        hidden_activations(res.params, p, -1)


def test_reconstruction_error_definition():
    a = np.zeros((1, 2, 2, 3))
    b = np.zeros((1, 2, 2, 3))
    b[0, 0, 0] = [1.0, 2.0, 0.0]
    assert reconstruction_error(a, b).tolist() == [5.0 / 4]


def test_params_save_load_roundtrip(tmp_path):
    res = fit_inr_batch(natural_patches(2, 8, key=0), FitConfig(epochs=1, batch_size=8), SMALL)
    res.params.save(tmp_path)
    loaded = InrParams.load(tmp_path)
    assert loaded.arch == SMALL
    assert all(np.array_equal(a, b) for a, b in zip(res.params.weights, loaded.weights))
    assert np.array_equal(loaded.reconstruct(8, 8), res.params.reconstruct(8, 8))


def test_invalid_configs():
    with pytest.raises(ValueError):
        FitConfig(epochs=0)
    with pytest.raises(ValueError):
        FitConfig(alpha=0)
    with pytest.raises(ValueError):
        InrArch(layers=0)
    with pytest.raises(ValueError):
        InrArch(grid="corners")
