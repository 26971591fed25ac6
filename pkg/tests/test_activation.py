import time

import numpy as np
import pytest

from conftest import central_diff, max_rel_err
from fcnet.activation import (ActivationMap, SPAN_EPS, normalize, normalize_bwd,
                              read_raw_csv, rect_sum, self_activation_map,
                              write_pgm, write_raw_csv)
from fcnet.geometry import Box


def weighted_sum_naive(y, w):
    """Triple loop oracle for the raw map, same channel accumulation order."""
    c, m, n = y.shape
    raw = np.zeros((m, n))
    for ch in range(c):
        for i in range(m):
            for j in range(n):
                raw[i, j] += w[ch] * y[ch, i, j]
    return raw


def rect_sum_naive(norm, box):
    total = 0.0
    for i in range(box.y0, box.y1):
        for j in range(box.x0, box.x1):
            total += norm[i, j]
    return total


def test_raw_map_matches_naive_exactly(rng):
    for _ in range(10):
        y = rng.normal(size=(6, 9, 7))
        w = rng.normal(size=6)
        amap = self_activation_map(y, w)
        assert np.array_equal(amap.raw, weighted_sum_naive(y, w))


def test_map_shape_checks(rng):
    with pytest.raises(ValueError):
        self_activation_map(rng.normal(size=(4, 5)), np.ones(4))
    with pytest.raises(ValueError):
        self_activation_map(rng.normal(size=(4, 5, 5)), np.ones(3))


def test_normalize_hand_example():
    raw = np.array([[3.0, 0.0], [0.0, -2.0]])
    assert np.array_equal(normalize(raw), [[1.0, 0.0], [0.0, 0.0]])


def test_normalize_constant_gives_zeros():
    for v in (0.0, -1.5, 2.5):
        out = normalize(np.full((3, 4), v))
        assert np.array_equal(out, np.zeros((3, 4)))


def test_normalize_range_and_extremes(rng):
    for _ in range(20):
        raw = rng.normal(size=(8, 8)) * float(rng.uniform(0.1, 10))
        out = normalize(raw)
        if np.ptp(np.maximum(raw, 0)) > SPAN_EPS:
            assert out.min() == 0.0 and out.max() == 1.0
        assert (out >= 0.0).all() and (out <= 1.0).all()


def test_normalize_invariant_to_positive_scaling(rng):
    raw = rng.normal(size=(6, 6))
    base = normalize(raw)
    # power-of-two scale: exact in binary floating point
    assert np.array_equal(normalize(raw * 4.0), base)
    assert np.allclose(normalize(raw * 3.7), base, rtol=0, atol=1e-12)


def test_normalize_bwd_finite_difference(rng):
    for trial in range(5):
        raw = rng.normal(size=(5, 4))
        d_norm = rng.normal(size=(5, 4))
        fd = central_diff(lambda t: float((normalize(t) * d_norm).sum()), raw.copy())
        assert max_rel_err(normalize_bwd(raw, d_norm), fd) < 1e-5


def test_normalize_bwd_constant_map_zero_gradient():
    raw = np.full((4, 4), 3.0)
    assert np.array_equal(normalize_bwd(raw, np.ones((4, 4))), np.zeros((4, 4)))


def test_rect_sum_matches_naive(rng):
    for _ in range(200):
        m, n = int(rng.integers(2, 17)), int(rng.integers(2, 17))
        amap = self_activation_map(rng.normal(size=(3, m, n)), rng.normal(size=3))
        y0 = int(rng.integers(0, m))
        x0 = int(rng.integers(0, n))
        box = Box(x0, y0, int(rng.integers(x0 + 1, n + 1)), int(rng.integers(y0 + 1, m + 1)))
        assert rect_sum(amap, box) == pytest.approx(rect_sum_naive(amap.norm, box), abs=1e-9)


def test_rect_sum_additivity(rng):
    amap = self_activation_map(rng.normal(size=(2, 10, 10)), rng.normal(size=2))
    whole = rect_sum(amap, Box(2, 1, 8, 9))
    left = rect_sum(amap, Box(2, 1, 5, 9))
    right = rect_sum(amap, Box(5, 1, 8, 9))
    assert whole == pytest.approx(left + right, abs=1e-9)


def test_rect_sum_rejects_out_of_bounds(rng):
    amap = self_activation_map(rng.normal(size=(2, 5, 5)), rng.normal(size=2))
    with pytest.raises(ValueError):
        rect_sum(amap, Box(0, 0, 6, 3))


def test_rect_sum_constant_time(rng):
    """Query cost must not scale with box area (integral image, not a scan)."""
    amap = self_activation_map(rng.normal(size=(1, 400, 400)), np.ones(1))
    small, big = Box(0, 0, 2, 2), Box(0, 0, 400, 400)

    def best_of(box):
        runs = []
        for _ in range(5):
            t0 = time.perf_counter()
            for _ in range(2000):
                rect_sum(amap, box)
            runs.append(time.perf_counter() - t0)
        return min(runs)

    assert best_of(big) < 10 * best_of(small)  # area ratio is 40000x


def test_scale_equivariance_of_raw(rng):
    y = rng.normal(size=(4, 6, 6))
    w = rng.normal(size=4)
    a = self_activation_map(y, w)
    b = self_activation_map(y * 2.0, w)
    assert np.allclose(b.raw, a.raw * 2.0, rtol=0, atol=1e-10)


def test_pgm_output(tmp_path, rng):
    norm = normalize(rng.normal(size=(5, 7)))
    p = tmp_path / "map.pgm"
    write_pgm(p, norm)
    blob = p.read_bytes()
    assert blob.startswith(b"P5\n7 5\n255\n")
    pixels = np.frombuffer(blob[len(b"P5\n7 5\n255\n"):], dtype=np.uint8)
    assert pixels.shape == (35,)
    assert np.array_equal(pixels.reshape(5, 7),
                          np.clip(np.rint(norm * 255.0), 0, 255).astype(np.uint8))


def test_raw_csv_roundtrip(tmp_path, rng):
    raw = rng.normal(size=(4, 6))
    p = tmp_path / "raw.csv"
    write_raw_csv(p, raw)
    assert np.array_equal(read_raw_csv(p), raw)  # repr round-trips float64
