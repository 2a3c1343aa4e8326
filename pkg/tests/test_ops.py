"""Operator semantics against nested-loop oracles, plus float64
gradient checks for every differentiable op."""

import numpy as np
import pytest

from dpcsearch.engine import (
    ConvParams,
    Tensor,
    atrous_sep_conv3x3,
    avg_pyramid_pool,
    backward,
    bilinear_resize,
    concat_channels,
    conv1x1,
    depthwise_atrous3x3,
    gradcheck,
    grid_avg_pool,
    relu,
    softmax_xent_loss,
)
from dpcsearch.errors import DataError, ShapeError

from .oracles import (
    ref_bilinear_resize,
    ref_conv1x1,
    ref_depthwise_atrous3x3,
    ref_grid_avg_pool,
    ref_sep_conv,
    ref_softmax_xent,
)


def _t(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


# --- forward vs oracle ---


def test_conv1x1_matches_oracle(rng):
    for _ in range(5):
        n, c, co = rng.integers(1, 4), int(rng.integers(1, 5)), int(rng.integers(1, 5))
        h, w = int(rng.integers(4, 9)), int(rng.integers(4, 9))
        x = rng.standard_normal((int(n), c, h, w))
        wt = rng.standard_normal((co, c))
        b = rng.standard_normal(co)
        got = conv1x1(Tensor(x), ConvParams(Tensor(wt), Tensor(b))).data
        np.testing.assert_allclose(got, ref_conv1x1(x, wt, b), rtol=0, atol=1e-6)


def test_depthwise_matches_oracle(rng):
    for rh, rw in [(1, 1), (1, 3), (3, 6), (6, 1), (21, 21)]:
        x = rng.standard_normal((2, 3, 8, 8))
        wt = rng.standard_normal((3, 3, 3))
        got = depthwise_atrous3x3(Tensor(x), rh, rw, Tensor(wt)).data
        np.testing.assert_allclose(
            got, ref_depthwise_atrous3x3(x, wt, rh, rw), rtol=0, atol=1e-6
        )


def test_large_rate_reduces_to_center_tap(rng):
    # taps at +-21 fall entirely off an 8x8 map
    x = rng.standard_normal((1, 2, 8, 8))
    wt = rng.standard_normal((2, 3, 3))
    got = depthwise_atrous3x3(Tensor(x), 21, 21, Tensor(wt)).data
    np.testing.assert_allclose(got, x * wt[:, 1, 1][None, :, None, None], atol=1e-6)


def test_sep_conv_matches_oracle(rng):
    x = rng.standard_normal((1, 3, 6, 7))
    dw = rng.standard_normal((3, 3, 3))
    pw = rng.standard_normal((4, 3))
    pb = rng.standard_normal(4)
    got = atrous_sep_conv3x3(
        Tensor(x), 3, 1, ConvParams(Tensor(dw)), ConvParams(Tensor(pw), Tensor(pb))
    ).data
    np.testing.assert_allclose(got, ref_sep_conv(x, dw, pw, pb, 3, 1), rtol=0, atol=1e-5)


def test_sep_conv_rejects_depthwise_bias(rng):
    x = _t(rng, 1, 2, 4, 4)
    dw = ConvParams(_t(rng, 2, 3, 3), _t(rng, 2))
    pw = ConvParams(_t(rng, 3, 2), _t(rng, 3))
    with pytest.raises(ShapeError):
        atrous_sep_conv3x3(x, 1, 1, dw, pw)


def test_grid_pool_matches_oracle(rng):
    for gh, gw in [(1, 1), (2, 2), (4, 2), (2, 4), (4, 4), (8, 8)]:
        x = rng.standard_normal((2, 3, 8, 8))
        got = grid_avg_pool(Tensor(x), gh, gw).data
        np.testing.assert_allclose(got, ref_grid_avg_pool(x, gh, gw), rtol=0, atol=1e-6)


def test_grid_pool_uneven_partition(rng):
    # 7 rows over a grid of 4: cell edges floor to 0,1,3,5,7
    x = rng.standard_normal((1, 1, 7, 7))
    got = grid_avg_pool(Tensor(x), 4, 4).data
    np.testing.assert_allclose(got, ref_grid_avg_pool(x, 4, 4), rtol=0, atol=1e-6)
    np.testing.assert_allclose(got[0, 0, 0, 0], x[0, 0, 0, 0], atol=1e-7)


def test_pool_grid_larger_than_input_rejected(rng):
    with pytest.raises(ShapeError):
        grid_avg_pool(_t(rng, 1, 1, 4, 4), 8, 1)


def test_bilinear_matches_oracle(rng):
    for oh, ow in [(8, 8), (16, 16), (5, 9), (3, 3), (1, 1), (1, 7)]:
        x = rng.standard_normal((2, 2, 4, 6))
        got = bilinear_resize(Tensor(x), oh, ow).data
        np.testing.assert_allclose(got, ref_bilinear_resize(x, oh, ow), rtol=0, atol=1e-5)


def test_bilinear_identity_when_same_size(rng):
    x = rng.standard_normal((1, 3, 5, 5)).astype(np.float32)
    got = bilinear_resize(Tensor(x), 5, 5).data
    np.testing.assert_array_equal(got, x)


def test_bilinear_corners_align(rng):
    x = rng.standard_normal((1, 1, 4, 4))
    up = bilinear_resize(Tensor(x), 9, 9).data
    np.testing.assert_allclose(up[0, 0, 0, 0], x[0, 0, 0, 0], atol=1e-6)
    np.testing.assert_allclose(up[0, 0, -1, -1], x[0, 0, -1, -1], atol=1e-6)
    np.testing.assert_allclose(up[0, 0, 0, -1], x[0, 0, 0, -1], atol=1e-6)


def test_pyramid_pool_composes(rng):
    x = rng.standard_normal((1, 3, 8, 8))
    proj = ConvParams(Tensor(rng.standard_normal((4, 3))), Tensor(rng.standard_normal(4)))
    got = avg_pyramid_pool(Tensor(x), 2, 2, proj).data
    pooled = ref_grid_avg_pool(x, 2, 2)
    projected = ref_conv1x1(pooled, proj.weight.data, proj.bias.data)
    np.testing.assert_allclose(got, ref_bilinear_resize(projected, 8, 8), rtol=0, atol=1e-5)


def test_relu_clamps_and_masks(rng):
    x = np.array([[-1.0, 0.0], [2.0, -3.0]], dtype=np.float32).reshape(1, 1, 2, 2)
    t = Tensor(x, requires_grad=True)
    out = relu(t)
    np.testing.assert_array_equal(out.data.reshape(-1), [0, 0, 2, 0])
    backward(out, grad=np.ones_like(x))
    np.testing.assert_array_equal(t.grad.reshape(-1), [0, 0, 1, 0])


def test_concat_matches_numpy(rng):
    a, b, c = rng.standard_normal((2, 1, 4, 4)), rng.standard_normal((2, 3, 4, 4)), rng.standard_normal((2, 2, 4, 4))
    got = concat_channels([Tensor(a), Tensor(b), Tensor(c)]).data
    np.testing.assert_array_equal(got, np.concatenate([a, b, c], axis=1))


def test_concat_rejects_mismatched_spatial(rng):
    with pytest.raises(ShapeError):
        concat_channels([_t(rng, 1, 1, 4, 4), _t(rng, 1, 1, 5, 4)])


def test_xent_matches_oracle(rng):
    logits = rng.standard_normal((2, 5, 6, 6))
    labels = rng.integers(0, 5, (2, 6, 6)).astype(np.int64)
    labels[0, :2] = 255
    got = softmax_xent_loss(Tensor(logits), labels).item()
    assert got == pytest.approx(ref_softmax_xent(logits, labels), rel=1e-6)


def test_xent_all_ignored_is_zero(rng):
    logits = _t(rng, 1, 3, 2, 2)
    labels = np.full((1, 2, 2), 255, dtype=np.int64)
    loss = softmax_xent_loss(logits, labels)
    assert loss.item() == 0.0
    backward(loss)
    np.testing.assert_array_equal(logits.grad, np.zeros_like(logits.data))


def test_xent_rejects_bad_labels(rng):
    logits = _t(rng, 1, 3, 2, 2)
    with pytest.raises(DataError):
        softmax_xent_loss(logits, np.full((1, 2, 2), 3, dtype=np.int64))
    with pytest.raises(DataError):
        softmax_xent_loss(logits, np.full((1, 2, 2), -1, dtype=np.int64))
    with pytest.raises(DataError):
        softmax_xent_loss(logits, np.zeros((1, 2, 2), dtype=np.float32))


def test_xent_uniform_logits_give_log_k(rng):
    logits = Tensor(np.zeros((1, 4, 3, 3), dtype=np.float64))
    labels = rng.integers(0, 4, (1, 3, 3)).astype(np.int64)
    assert softmax_xent_loss(logits, labels).item() == pytest.approx(np.log(4.0), rel=1e-6)


# --- gradients ---


def test_gradcheck_conv1x1(rng):
    worst = 0.0
    for _ in range(4):
        x, w, b = _t(rng, 2, 3, 5, 5), _t(rng, 4, 3), _t(rng, 4)
        worst = max(worst, gradcheck(lambda x, w, b: conv1x1(x, ConvParams(w, b)), [x, w, b]))
    assert worst < 1e-6


def test_gradcheck_depthwise(rng):
    worst = 0.0
    for rh, rw in [(1, 1), (1, 6), (3, 3), (21, 1)]:
        x, w = _t(rng, 1, 2, 6, 6), _t(rng, 2, 3, 3)
        worst = max(
            worst, gradcheck(lambda x, w, rh=rh, rw=rw: depthwise_atrous3x3(x, rh, rw, w), [x, w])
        )
    assert worst < 1e-6


def test_gradcheck_sep_conv(rng):
    x, dw, pw, pb = _t(rng, 1, 3, 5, 5), _t(rng, 3, 3, 3), _t(rng, 4, 3), _t(rng, 4)
    worst = gradcheck(
        lambda x, dw, pw, pb: atrous_sep_conv3x3(x, 3, 6, ConvParams(dw), ConvParams(pw, pb)),
        [x, dw, pw, pb],
    )
    assert worst < 1e-6


def test_gradcheck_pool(rng):
    worst = 0.0
    for gh, gw in [(1, 1), (2, 4), (4, 4)]:
        x = _t(rng, 2, 2, 7, 7)
        worst = max(worst, gradcheck(lambda x, gh=gh, gw=gw: grid_avg_pool(x, gh, gw), [x]))
    assert worst < 1e-6


def test_gradcheck_bilinear(rng):
    worst = 0.0
    for oh, ow in [(9, 9), (3, 5), (1, 1), (8, 8)]:
        x = _t(rng, 1, 2, 8, 8)
        worst = max(worst, gradcheck(lambda x, oh=oh, ow=ow: bilinear_resize(x, oh, ow), [x]))
    assert worst < 1e-6


def test_gradcheck_pyramid_pool(rng):
    x, w, b = _t(rng, 1, 3, 6, 6), _t(rng, 2, 3), _t(rng, 2)
    worst = gradcheck(
        lambda x, w, b: avg_pyramid_pool(x, 2, 2, ConvParams(w, b)), [x, w, b]
    )
    assert worst < 1e-6


def test_gradcheck_concat(rng):
    a, b = _t(rng, 2, 2, 4, 4), _t(rng, 2, 3, 4, 4)
    assert gradcheck(lambda a, b: concat_channels([a, b]), [a, b]) < 1e-6


def test_gradcheck_xent(rng):
    logits = _t(rng, 2, 4, 4, 4)
    labels = rng.integers(0, 4, (2, 4, 4)).astype(np.int64)
    labels[1, 0, 0] = 255
    assert gradcheck(lambda l: softmax_xent_loss(l, labels), [logits]) < 1e-6


def test_float32_forward_matches_float64(rng):
    # the engine runs float32 in training; drift against float64 stays small
    x64 = rng.standard_normal((1, 3, 6, 6))
    w64 = rng.standard_normal((4, 3))
    got32 = conv1x1(Tensor(x64.astype(np.float32)), ConvParams(Tensor(w64.astype(np.float32)))).data
    got64 = conv1x1(Tensor(x64), ConvParams(Tensor(w64))).data
    np.testing.assert_allclose(got32, got64, rtol=0, atol=1e-5)
