"""Backend parity: the compiled kernels and the numpy reference must agree.

Pooling paths (selection + scatter) are integer decisions, so equality is
exact; convolution accumulates in a different order and gets a tight
tolerance instead.
"""

import numpy as np
import pytest

from fcnet import _kernels

needs_native = pytest.mark.skipif(
    "native" not in _kernels.available_backends(),
    reason="compiled extension not built")


@pytest.fixture
def both_backends():
    yield
    _kernels.set_backend("native" if "native" in _kernels.available_backends() else "python")


def _run_both(fn, *args):
    _kernels.set_backend("python")
    ref = fn(*args)
    _kernels.set_backend("native")
    got = fn(*args)
    return ref, got


@needs_native
def test_conv2d_fwd_parity(both_backends, rng):
    for _ in range(5):
        x = rng.normal(size=(3, 9, 7))
        k = rng.normal(size=(5, 3, 3, 3))
        b = rng.normal(size=5)
        ref, got = _run_both(_kernels.conv2d_fwd, x, k, b)
        assert np.allclose(ref, got, rtol=1e-12, atol=1e-12)


@needs_native
def test_conv2d_bwd_parity(both_backends, rng):
    x = rng.normal(size=(3, 8, 6))
    k = rng.normal(size=(4, 3, 3, 3))
    d_y = rng.normal(size=(4, 8, 6))
    (rx, rk, rb), (gx, gk, gb) = _run_both(_kernels.conv2d_bwd, x, k, d_y)
    assert np.allclose(rx, gx, rtol=1e-12, atol=1e-12)
    assert np.allclose(rk, gk, rtol=1e-12, atol=1e-12)
    assert np.allclose(rb, gb, rtol=1e-12, atol=1e-12)


@needs_native
def test_maxpool2_parity_exact(both_backends, rng):
    for _ in range(5):
        x = rng.normal(size=(4, 10, 6))
        (ry, ri), (gy, gi) = _run_both(_kernels.maxpool2_fwd, x)
        assert np.array_equal(ry, gy)
        assert np.array_equal(ri, gi)
        d_y = rng.normal(size=ry.shape)
        rd, gd = _run_both(_kernels.maxpool2_bwd, ri, d_y, 10, 6)
        assert np.array_equal(rd, gd)


@needs_native
def test_maxpool2_parity_with_ties(both_backends):
    x = np.zeros((2, 4, 4))
    x[1, 2, 2] = x[1, 2, 3] = 5.0  # tied pair inside one window
    (ry, ri), (gy, gi) = _run_both(_kernels.maxpool2_fwd, x)
    assert np.array_equal(ry, gy) and np.array_equal(ri, gi)


@needs_native
def test_roi_pool_parity_exact(both_backends, rng):
    for _ in range(20):
        x = rng.normal(size=(3, 14, 12))
        ry0, rx0 = int(rng.integers(0, 8)), int(rng.integers(0, 6))
        ry1 = int(rng.integers(ry0 + 1, 15))
        rx1 = int(rng.integers(rx0 + 1, 13))
        use_mask = bool(rng.integers(2))
        my0, mx0 = ry0, rx0
        my1, mx1 = min(ry1, my0 + 2), min(rx1, mx0 + 3)
        args = (x, ry0, rx0, ry1, rx1, my0, mx0, my1, mx1, use_mask, 6, 6)
        ref, got = _run_both(_kernels.roi_pool_max, *args)
        assert np.array_equal(ref, got)
        (rv, ra), (gv, ga) = _run_both(_kernels.roi_pool_max_argmax, *args)
        assert np.array_equal(rv, gv)
        assert np.array_equal(ra, ga)
        d = rng.normal(size=rv.shape)
        rs, gs = _run_both(_kernels.roi_pool_scatter, ra, d, 14, 12)
        assert np.array_equal(rs, gs)


def test_set_backend_validation():
    with pytest.raises(ValueError):
        _kernels.set_backend("cuda")
    assert _kernels.backend() in ("python", "native")


def test_python_backend_always_available():
    assert "python" in _kernels.available_backends()
