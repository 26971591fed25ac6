"""Numpy reference implementations of the hot kernels.

Semantics are shared with the compiled backend and pinned by tests:

* conv2d: 3x3 cross-correlation, stride 1, zero padding 1.
* maxpool2: 2x2/stride-2 max pooling; ties go to the first cell in
  row-major window order.
* roi_pool_max: crop a half-open region, optionally zero a masked
  sub-rectangle, then max-pool to a fixed grid with quantized bins
  (bin b covers rows floor(b*h/P) .. floor((b+1)*h/P), at least one
  cell). Masked cells take part in the max as zeros; when a masked
  cell wins a bin, no gradient is routed for that bin.

All arrays are float64 and C-contiguous.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pad1(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    out = np.zeros((c, h + 2, w + 2), dtype=np.float64)
    out[:, 1:-1, 1:-1] = x
    return out


def conv2d_fwd(x: np.ndarray, k: np.ndarray, b: np.ndarray) -> np.ndarray:
    win = sliding_window_view(_pad1(x), (3, 3), axis=(1, 2))  # [ci, h, w, 3, 3]
    y = np.tensordot(k, win, axes=([1, 2, 3], [0, 3, 4]))
    y += b[:, None, None]
    return np.ascontiguousarray(y)


def conv2d_bwd(x: np.ndarray, k: np.ndarray, d_y: np.ndarray):
    win = sliding_window_view(_pad1(x), (3, 3), axis=(1, 2))
    d_k = np.tensordot(d_y, win, axes=([1, 2], [1, 2]))  # [co, ci, 3, 3]
    d_b = d_y.sum(axis=(1, 2))
    # d_x is a correlation of the padded upstream gradient with the
    # spatially flipped, channel-transposed kernels.
    k_flip = np.ascontiguousarray(k[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    win_dy = sliding_window_view(_pad1(d_y), (3, 3), axis=(1, 2))
    d_x = np.tensordot(k_flip, win_dy, axes=([1, 2, 3], [0, 3, 4]))
    return (
        np.ascontiguousarray(d_x),
        np.ascontiguousarray(d_k),
        np.ascontiguousarray(d_b),
    )


def maxpool2_fwd(x: np.ndarray):
    c, h, w = x.shape
    v = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4)
    v = np.ascontiguousarray(v).reshape(c, h // 2, w // 2, 4)
    a = v.argmax(axis=3)  # first max wins: window order (0,0),(0,1),(1,0),(1,1)
    y = np.take_along_axis(v, a[..., None], axis=3)[..., 0]
    rows = 2 * np.arange(h // 2)[None, :, None] + a // 2
    cols = 2 * np.arange(w // 2)[None, None, :] + a % 2
    idx = rows * w + cols
    return np.ascontiguousarray(y), np.ascontiguousarray(idx.astype(np.int64))


def maxpool2_bwd(idx: np.ndarray, d_y: np.ndarray, h: int, w: int) -> np.ndarray:
    c = d_y.shape[0]
    d_x = np.zeros((c, h * w), dtype=np.float64)
    flat = idx.reshape(c, -1)
    # window winners are unique within a channel, so plain assignment works
    d_x[np.arange(c)[:, None], flat] = d_y.reshape(c, -1)
    return d_x.reshape(c, h, w)


def _bin_edges(extent: int, p: int):
    b = np.arange(p, dtype=np.int64)
    starts = (b * extent) // p
    ends = np.maximum(((b + 1) * extent) // p, starts + 1)
    return starts, ends


def _crop_masked(x, ry0, rx0, ry1, rx1, my0, mx0, my1, mx1, use_mask):
    crop = x[:, ry0:ry1, rx0:rx1].copy()
    if use_mask:
        crop[:, my0 - ry0 : my1 - ry0, mx0 - rx0 : mx1 - rx0] = 0.0
    return crop


def roi_pool_max(x, ry0, rx0, ry1, rx1, my0, mx0, my1, mx1, use_mask, p_r, p_c):
    crop = _crop_masked(x, ry0, rx0, ry1, rx1, my0, mx0, my1, mx1, use_mask)
    h, w = ry1 - ry0, rx1 - rx0
    rs, re = _bin_edges(h, p_r)
    cs, ce = _bin_edges(w, p_c)
    if h >= p_r and w >= p_c:
        # bins tile the crop exactly, so max-pooling is separable
        out = np.maximum.reduceat(crop, rs, axis=1)
        out = np.maximum.reduceat(out, cs, axis=2)
        return np.ascontiguousarray(out)
    c = x.shape[0]
    out = np.empty((c, p_r, p_c), dtype=np.float64)
    for br in range(p_r):
        for bc in range(p_c):
            out[:, br, bc] = crop[:, rs[br] : re[br], cs[bc] : ce[bc]].max(axis=(1, 2))
    return out


def roi_pool_max_argmax(x, ry0, rx0, ry1, rx1, my0, mx0, my1, mx1, use_mask, p_r, p_c):
    crop = _crop_masked(x, ry0, rx0, ry1, rx1, my0, mx0, my1, mx1, use_mask)
    c = x.shape[0]
    n = x.shape[2]
    h, w = ry1 - ry0, rx1 - rx0
    rs, re = _bin_edges(h, p_r)
    cs, ce = _bin_edges(w, p_c)
    out = np.empty((c, p_r, p_c), dtype=np.float64)
    arg = np.empty((c, p_r, p_c), dtype=np.int64)
    ch = np.arange(c)
    for br in range(p_r):
        for bc in range(p_c):
            bw = ce[bc] - cs[bc]
            sub = crop[:, rs[br] : re[br], cs[bc] : ce[bc]].reshape(c, -1)
            aj = sub.argmax(axis=1)
            out[:, br, bc] = sub[ch, aj]
            rr = rs[br] + aj // bw
            cc = cs[bc] + aj % bw
            flat = (ry0 + rr) * n + (rx0 + cc)
            if use_mask:
                masked = (
                    (rr >= my0 - ry0)
                    & (rr < my1 - ry0)
                    & (cc >= mx0 - rx0)
                    & (cc < mx1 - rx0)
                )
                flat = np.where(masked, -1, flat)
            arg[:, br, bc] = flat
    return out, arg


def roi_pool_scatter(arg: np.ndarray, d_out: np.ndarray, m: int, n: int) -> np.ndarray:
    c = arg.shape[0]
    d_x = np.zeros((c, m * n), dtype=np.float64)
    a = arg.reshape(c, -1)
    d = d_out.reshape(c, -1)
    valid = a >= 0
    rows = np.broadcast_to(np.arange(c)[:, None], a.shape)[valid]
    np.add.at(d_x, (rows, a[valid]), d[valid])
    return d_x.reshape(c, m, n)
