# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: conv2d, 2x2 max pooling, masked RoI max pooling.

Mirrors fcnet._kernels.pyref exactly (same tie-breaking, same masking
semantics); parity is enforced by tests.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv2d_fwd(double[:, :, ::1] x, double[:, :, :, ::1] k, double[::1] b):
    # One streaming pass per (out-channel, in-channel, kernel tap): the
    # inner j loop is contiguous on both sides so the compiler vectorizes.
    cdef Py_ssize_t ci = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t co = k.shape[0]
    out = np.empty((co, h, w), dtype=np.float64)
    cdef double[:, :, ::1] y = out
    cdef Py_ssize_t o, c, i, j, di, dj, i_lo, i_hi, j_lo, j_hi, oi, oj
    cdef double kv
    for o in range(co):
        for i in range(h):
            for j in range(w):
                y[o, i, j] = b[o]
        for c in range(ci):
            for di in range(3):
                oi = di - 1
                i_lo = 0 if di >= 1 else 1
                i_hi = h if di <= 1 else h - 1
                for dj in range(3):
                    oj = dj - 1
                    j_lo = 0 if dj >= 1 else 1
                    j_hi = w if dj <= 1 else w - 1
                    kv = k[o, c, di, dj]
                    for i in range(i_lo, i_hi):
                        for j in range(j_lo, j_hi):
                            y[o, i, j] += kv * x[c, i + oi, j + oj]
    return out


def conv2d_bwd(double[:, :, ::1] x, double[:, :, :, ::1] k, double[:, :, ::1] d_y):
    cdef Py_ssize_t ci = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t co = k.shape[0]
    dx_arr = np.zeros((ci, h, w), dtype=np.float64)
    dk_arr = np.zeros((co, ci, 3, 3), dtype=np.float64)
    db_arr = np.zeros(co, dtype=np.float64)
    cdef double[:, :, ::1] d_x = dx_arr
    cdef double[:, :, :, ::1] d_k = dk_arr
    cdef double[::1] d_b = db_arr
    cdef Py_ssize_t o, c, i, j, di, dj, i_lo, i_hi, j_lo, j_hi, oi, oj
    cdef double kv, acc
    for o in range(co):
        acc = 0.0
        for i in range(h):
            for j in range(w):
                acc += d_y[o, i, j]
        d_b[o] = acc
        for c in range(ci):
            for di in range(3):
                oi = di - 1
                i_lo = 0 if di >= 1 else 1
                i_hi = h if di <= 1 else h - 1
                for dj in range(3):
                    oj = dj - 1
                    j_lo = 0 if dj >= 1 else 1
                    j_hi = w if dj <= 1 else w - 1
                    kv = k[o, c, di, dj]
                    acc = 0.0
                    for i in range(i_lo, i_hi):
                        for j in range(j_lo, j_hi):
                            acc += d_y[o, i, j] * x[c, i + oi, j + oj]
                            d_x[c, i + oi, j + oj] += kv * d_y[o, i, j]
                    d_k[o, c, di, dj] = acc
    return dx_arr, dk_arr, db_arr


def maxpool2_fwd(double[:, :, ::1] x):
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t h2 = h // 2, w2 = w // 2
    out = np.empty((c, h2, w2), dtype=np.float64)
    idx_arr = np.empty((c, h2, w2), dtype=np.int64)
    cdef double[:, :, ::1] y = out
    cdef long long[:, :, ::1] idx = idx_arr
    cdef Py_ssize_t ch, i, j, di, dj, bi, bj
    cdef double best, v
    cdef Py_ssize_t br, bc
    for ch in range(c):
        for i in range(h2):
            for j in range(w2):
                bi = 2 * i
                bj = 2 * j
                best = x[ch, bi, bj]
                br = bi
                bc = bj
                for di in range(2):
                    for dj in range(2):
                        v = x[ch, bi + di, bj + dj]
                        if v > best:
                            best = v
                            br = bi + di
                            bc = bj + dj
                y[ch, i, j] = best
                idx[ch, i, j] = br * w + bc
    return out, idx_arr


def maxpool2_bwd(long long[:, :, ::1] idx, double[:, :, ::1] d_y, Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t c = d_y.shape[0], h2 = d_y.shape[1], w2 = d_y.shape[2]
    dx_arr = np.zeros((c, h, w), dtype=np.float64)
    cdef double[:, :, ::1] d_x = dx_arr
    cdef Py_ssize_t ch, i, j
    cdef long long f
    for ch in range(c):
        for i in range(h2):
            for j in range(w2):
                f = idx[ch, i, j]
                d_x[ch, f // w, f % w] += d_y[ch, i, j]
    return dx_arr


cdef inline Py_ssize_t _bin_start(Py_ssize_t b, Py_ssize_t extent, Py_ssize_t p):
    return (b * extent) // p


cdef inline Py_ssize_t _bin_end(Py_ssize_t b, Py_ssize_t extent, Py_ssize_t p):
    cdef Py_ssize_t s = (b * extent) // p
    cdef Py_ssize_t e = ((b + 1) * extent) // p
    if e <= s:
        e = s + 1
    return e


def roi_pool_max(double[:, :, ::1] x,
                 Py_ssize_t ry0, Py_ssize_t rx0, Py_ssize_t ry1, Py_ssize_t rx1,
                 Py_ssize_t my0, Py_ssize_t mx0, Py_ssize_t my1, Py_ssize_t mx1,
                 bint use_mask, Py_ssize_t p_r, Py_ssize_t p_c):
    cdef Py_ssize_t c = x.shape[0]
    cdef Py_ssize_t h = ry1 - ry0, w = rx1 - rx0
    out = np.empty((c, p_r, p_c), dtype=np.float64)
    cdef double[:, :, ::1] y = out
    cdef Py_ssize_t ch, br, bc, r, cc, r0, r1, c0, c1
    cdef double best, v
    cdef bint masked
    for ch in range(c):
        for br in range(p_r):
            r0 = _bin_start(br, h, p_r)
            r1 = _bin_end(br, h, p_r)
            for bc in range(p_c):
                c0 = _bin_start(bc, w, p_c)
                c1 = _bin_end(bc, w, p_c)
                best = -1e308
                for r in range(r0, r1):
                    for cc in range(c0, c1):
                        if use_mask and my0 <= ry0 + r < my1 and mx0 <= rx0 + cc < mx1:
                            v = 0.0
                        else:
                            v = x[ch, ry0 + r, rx0 + cc]
                        if v > best:
                            best = v
                y[ch, br, bc] = best
    return out


def roi_pool_max_argmax(double[:, :, ::1] x,
                        Py_ssize_t ry0, Py_ssize_t rx0, Py_ssize_t ry1, Py_ssize_t rx1,
                        Py_ssize_t my0, Py_ssize_t mx0, Py_ssize_t my1, Py_ssize_t mx1,
                        bint use_mask, Py_ssize_t p_r, Py_ssize_t p_c):
    cdef Py_ssize_t c = x.shape[0], n = x.shape[2]
    cdef Py_ssize_t h = ry1 - ry0, w = rx1 - rx0
    out = np.empty((c, p_r, p_c), dtype=np.float64)
    arg_arr = np.empty((c, p_r, p_c), dtype=np.int64)
    cdef double[:, :, ::1] y = out
    cdef long long[:, :, ::1] arg = arg_arr
    cdef Py_ssize_t ch, br, bc, r, cc, r0, r1, c0, c1
    cdef double best, v
    cdef bint masked, best_masked
    cdef Py_ssize_t best_r, best_c
    for ch in range(c):
        for br in range(p_r):
            r0 = _bin_start(br, h, p_r)
            r1 = _bin_end(br, h, p_r)
            for bc in range(p_c):
                c0 = _bin_start(bc, w, p_c)
                c1 = _bin_end(bc, w, p_c)
                best = -1e308
                best_r = -1
                best_c = -1
                best_masked = True
                for r in range(r0, r1):
                    for cc in range(c0, c1):
                        masked = use_mask and my0 <= ry0 + r < my1 and mx0 <= rx0 + cc < mx1
                        v = 0.0 if masked else x[ch, ry0 + r, rx0 + cc]
                        if v > best or best_r < 0:
                            best = v
                            best_r = r
                            best_c = cc
                            best_masked = masked
                y[ch, br, bc] = best
                if best_masked:
                    arg[ch, br, bc] = -1
                else:
                    arg[ch, br, bc] = (ry0 + best_r) * n + (rx0 + best_c)
    return out, arg_arr


def roi_pool_scatter(long long[:, :, ::1] arg, double[:, :, ::1] d_out,
                     Py_ssize_t m, Py_ssize_t n):
    cdef Py_ssize_t c = arg.shape[0], p_r = arg.shape[1], p_c = arg.shape[2]
    dx_arr = np.zeros((c, m, n), dtype=np.float64)
    cdef double[:, :, ::1] d_x = dx_arr
    cdef Py_ssize_t ch, br, bc
    cdef long long f
    for ch in range(c):
        for br in range(p_r):
            for bc in range(p_c):
                f = arg[ch, br, bc]
                if f >= 0:
                    d_x[ch, f // n, f % n] += d_out[ch, br, bc]
    return dx_arr
