import numpy as np
import pytest

from validmark.kernels import _reference

try:
    from validmark.kernels import _fastops
except ImportError:
    _fastops = None

needs_ext = pytest.mark.skipif(_fastops is None, reason="compiled kernels not built")


def random_case(rng, stride, pad):
    n, c, f = (int(v) for v in rng.integers(1, 5, size=3))
    k = int(rng.choice([1, 3, 5]))
    h = int(rng.integers(k + 2, 14))
    w = int(rng.integers(k + 2, 14))
    x = rng.normal(size=(n, c, h, w))
    wgt = rng.normal(size=(f, c, k, k))
    b = rng.normal(size=f)
    return x, wgt, b


@needs_ext
def test_backends_agree_conv():
    rng = np.random.default_rng(0)
    for stride in (1, 2):
        for pad in (0, 1, 2):
            for _ in range(5):
                x, w, b = random_case(rng, stride, pad)
                y_ref = _reference.conv2d_forward(x, w, b, stride, pad)
                y_fast = _fastops.conv2d_forward(x, w, b, stride, pad)
                np.testing.assert_allclose(y_fast, y_ref, rtol=1e-12, atol=1e-12)
                dy = rng.normal(size=y_ref.shape)
                ref = _reference.conv2d_backward(x, w, dy, stride, pad)
                fast = _fastops.conv2d_backward(x, w, dy, stride, pad)
                for a, b2 in zip(fast, ref):
                    np.testing.assert_allclose(a, b2, rtol=1e-12, atol=1e-12)


@needs_ext
def test_backends_agree_maxpool_including_ties():
    rng = np.random.default_rng(1)
    x = rng.integers(0, 4, size=(3, 2, 8, 8)).astype(np.float64)  # many ties
    y_ref, arg_ref = _reference.maxpool2_forward(x)
    y_fast, arg_fast = _fastops.maxpool2_forward(x)
    np.testing.assert_array_equal(y_fast, y_ref)
    np.testing.assert_array_equal(arg_fast, arg_ref)
    dy = rng.normal(size=y_ref.shape)
    np.testing.assert_array_equal(
        _fastops.maxpool2_backward(dy, arg_fast, 8, 8),
        _reference.maxpool2_backward(dy, arg_ref, 8, 8))


def test_reference_conv_matches_finite_differences():
    rng = np.random.default_rng(2)
    x, w, b = random_case(rng, 1, 1)
    y = _reference.conv2d_forward(x, w, b, 1, 1)
    dy = rng.normal(size=y.shape)
    dx, dw, db = _reference.conv2d_backward(x, w, dy, 1, 1)
    h = 1e-6

    def f():
        return float((_reference.conv2d_forward(x, w, b, 1, 1) * dy).sum())

    for arr, grad in ((x, dx), (w, dw), (b, db)):
        flat = arr.reshape(-1)
        for i in rng.integers(0, flat.size, size=10):
            orig = flat[i]
            flat[i] = orig + h
            up = f()
            flat[i] = orig - h
            down = f()
            flat[i] = orig
            fd = (up - down) / (2 * h)
            assert fd == pytest.approx(grad.reshape(-1)[i], rel=1e-5, abs=1e-7)


def test_maxpool_first_max_wins_ties():
    x = np.zeros((1, 1, 2, 2))
    y, arg = _reference.maxpool2_forward(x)
    assert arg[0, 0, 0, 0] == 0
    x[0, 0, 0, 1] = 1.0
    x[0, 0, 1, 0] = 1.0
    _, arg = _reference.maxpool2_forward(x)
    assert arg[0, 0, 0, 0] == 1  # row-major window order, first maximum


def test_odd_sizes_drop_trailing():
    x = np.arange(25, dtype=np.float64).reshape(1, 1, 5, 5)
    y, arg = _reference.maxpool2_forward(x)
    assert y.shape == (1, 1, 2, 2)
    dx = _reference.maxpool2_backward(np.ones_like(y), arg, 5, 5)
    assert dx.shape == (1, 1, 5, 5)
    assert dx[:, :, 4, :].sum() == 0 and dx[:, :, :, 4].sum() == 0
