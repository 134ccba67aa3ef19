import numpy as np
import pytest

from maskcount.grids import make_rng
from maskcount.nn import (
    LayerSpec,
    bilinear_resize,
    clip_global_norm,
    conv2d_backward,
    conv2d_forward,
    global_norm,
    init_params,
    softplus,
    stack_backward,
    stack_forward,
)


def naive_conv2d(x, w, b, stride, pad):
    """Direct nested-loop convolution oracle."""
    c, h, wd = x.shape
    oc, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((oc, ho, wo))
    for o in range(oc):
        for i in range(ho):
            for j in range(wo):
                region = xp[:, i * stride : i * stride + kh, j * stride : j * stride + kw]
                out[o, i, j] = (region * w[o]).sum() + b[o]
    return out


@pytest.mark.parametrize("stride,pad,k", [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 2)])
def test_conv_forward_matches_naive(stride, pad, k):
    rng = make_rng(10 * stride + pad + k)
    x = rng.normal(size=(3, 9, 8))
    w = rng.normal(size=(4, 3, k, k))
    b = rng.normal(size=4)
    out, _ = conv2d_forward(x, w, b, stride, pad)
    np.testing.assert_allclose(out, naive_conv2d(x, w, b, stride, pad), atol=1e-12)


@pytest.mark.parametrize("stride,pad", [(1, 1), (2, 1)])
def test_conv_backward_finite_difference(stride, pad):
    rng = make_rng(42 + stride)
    x = rng.normal(size=(2, 6, 7))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)

    def loss(x_, w_, b_):
        out, _ = conv2d_forward(x_, w_, b_, stride, pad)
        return (out**2).sum()

    out, cache = conv2d_forward(x, w, b, stride, pad)
    dx, dw, db = conv2d_backward(2.0 * out, cache)

    eps = 1e-6
    for arr, grad in ((x, dx), (w, dw), (b, db)):
        flat = arr.ravel()
        gflat = grad.ravel()
        for idx in range(0, flat.size, max(1, flat.size // 17)):
            orig = flat[idx]
            flat[idx] = orig + eps
            up = loss(x, w, b)
            flat[idx] = orig - eps
            down = loss(x, w, b)
            flat[idx] = orig
            fd = (up - down) / (2 * eps)
            assert gflat[idx] == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_stack_forward_backward_finite_difference():
    layers = [
        LayerSpec("a", 2, 3, 3, 2, 1, "relu"),
        LayerSpec("b", 3, 2, 3, 1, 1, "softplus"),
    ]
    rng = make_rng(5)
    params = init_params(layers, rng)
    for key in params:
        params[key] = rng.normal(scale=0.5, size=params[key].shape)
    x = rng.normal(size=(2, 8, 8))
    target = rng.normal(size=(2, 4, 4))

    def loss_fn():
        out, _ = stack_forward(params, layers, x)
        return ((out - target) ** 2).sum()

    out, caches = stack_forward(params, layers, x)
    _, grads = stack_backward(caches, 2.0 * (out - target))

    eps = 1e-6
    for key, grad in grads.items():
        flat = params[key].ravel()
        gflat = grad.ravel()
        for idx in range(0, flat.size, max(1, flat.size // 11)):
            orig = flat[idx]
            flat[idx] = orig + eps
            up = loss_fn()
            flat[idx] = orig - eps
            down = loss_fn()
            flat[idx] = orig
            fd = (up - down) / (2 * eps)
            assert gflat[idx] == pytest.approx(fd, rel=1e-4, abs=1e-7), key


def test_softplus_stable_and_positive():
    x = np.array([-800.0, -10.0, 0.0, 10.0, 800.0])
    out = softplus(x)
    assert np.all(np.isfinite(out))
    assert np.all(out >= 0.0)
    assert out[2] == pytest.approx(np.log(2.0))
    assert out[4] == pytest.approx(800.0)


def test_init_params_range_and_determinism():
    layers = [LayerSpec("a", 3, 8, 3, 2, 1, "relu")]
    p1 = init_params(layers, make_rng(9))
    p2 = init_params(layers, make_rng(9))
    np.testing.assert_array_equal(p1["a.w"], p2["a.w"])
    bound = np.sqrt(6.0 / (3 * 9 + 8 * 9))
    assert np.max(np.abs(p1["a.w"])) <= bound
    assert np.all(p1["a.b"] == 0.0)


def test_clip_global_norm():
    grads = {"x": np.array([3.0, 4.0])}
    clipped = clip_global_norm(grads, 1.0)
    assert global_norm(clipped) == pytest.approx(1.0)
    untouched = clip_global_norm(grads, 100.0)
    np.testing.assert_array_equal(untouched["x"], grads["x"])


class TestBilinearResize:
    def test_identity(self):
        rng = make_rng(2)
        vol = rng.uniform(size=(3, 5, 6))
        np.testing.assert_allclose(bilinear_resize(vol, 5, 6), vol, atol=1e-12)

    def test_constant_preserved(self):
        vol = np.full((2, 7, 3), 0.4)
        np.testing.assert_allclose(bilinear_resize(vol, 4, 9), 0.4, atol=1e-12)

    def test_downscale_average_of_two(self):
        vol = np.array([[[0.0], [1.0]]])  # (1, 2, 1)
        out = bilinear_resize(vol, 1, 1)
        assert out[0, 0, 0] == pytest.approx(0.5)
