# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: 3x3 conv (s1 p1), 4x4 transposed conv (s2 p1), 2x2 max pool."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def conv3x3_forward(double[:, :, ::1] x, double[:, :, :, ::1] w, double[::1] b):
    cdef Py_ssize_t cin = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t cout = w.shape[0]
    y_arr = np.empty((cout, h, wd))
    cdef double[:, :, ::1] y = y_arr
    cdef Py_ssize_t o, c, i, j, u, v, ii, jj
    cdef double acc
    for o in range(cout):
        for i in range(h):
            for j in range(wd):
                acc = b[o]
                for c in range(cin):
                    for u in range(3):
                        ii = i + u - 1
                        if ii < 0 or ii >= h:
                            continue
                        for v in range(3):
                            jj = j + v - 1
                            if 0 <= jj < wd:
                                acc += x[c, ii, jj] * w[o, c, u, v]
                y[o, i, j] = acc
    return y_arr


def conv3x3_backward(double[:, :, ::1] x, double[:, :, :, ::1] w, double[:, :, ::1] gy):
    cdef Py_ssize_t cin = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t cout = w.shape[0]
    gx_arr = np.zeros((cin, h, wd))
    gw_arr = np.zeros((cout, cin, 3, 3))
    gb_arr = np.zeros(cout)
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t o, c, i, j, u, v, ii, jj
    cdef double g
    for o in range(cout):
        for i in range(h):
            for j in range(wd):
                g = gy[o, i, j]
                gb[o] += g
                for c in range(cin):
                    for u in range(3):
                        ii = i + u - 1
                        if ii < 0 or ii >= h:
                            continue
                        for v in range(3):
                            jj = j + v - 1
                            if 0 <= jj < wd:
                                gw[o, c, u, v] += x[c, ii, jj] * g
                                gx[c, ii, jj] += w[o, c, u, v] * g
    return gx_arr, gw_arr, gb_arr


def convt4x4_forward(double[:, :, ::1] x, double[:, :, :, ::1] w, double[::1] b):
    cdef Py_ssize_t cin = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t cout = w.shape[1]
    cdef Py_ssize_t oh = 2 * h, ow = 2 * wd
    y_arr = np.empty((cout, oh, ow))
    cdef double[:, :, ::1] y = y_arr
    cdef Py_ssize_t o, c, i, j, u, v, a, bb
    cdef double xv
    for o in range(cout):
        for a in range(oh):
            for bb in range(ow):
                y[o, a, bb] = b[o]
    for c in range(cin):
        for i in range(h):
            for j in range(wd):
                xv = x[c, i, j]
                for u in range(4):
                    a = 2 * i + u - 1
                    if a < 0 or a >= oh:
                        continue
                    for v in range(4):
                        bb = 2 * j + v - 1
                        if 0 <= bb < ow:
                            for o in range(cout):
                                y[o, a, bb] += xv * w[c, o, u, v]
    return y_arr


def convt4x4_backward(double[:, :, ::1] x, double[:, :, :, ::1] w, double[:, :, ::1] gy):
    cdef Py_ssize_t cin = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t cout = w.shape[1]
    cdef Py_ssize_t oh = 2 * h, ow = 2 * wd
    gx_arr = np.zeros((cin, h, wd))
    gw_arr = np.zeros((cin, cout, 4, 4))
    gb_arr = np.zeros(cout)
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t o, c, i, j, u, v, a, bb
    cdef double xv, g, acc
    for o in range(cout):
        for a in range(oh):
            for bb in range(ow):
                gb[o] += gy[o, a, bb]
    for c in range(cin):
        for i in range(h):
            for j in range(wd):
                xv = x[c, i, j]
                acc = 0.0
                for u in range(4):
                    a = 2 * i + u - 1
                    if a < 0 or a >= oh:
                        continue
                    for v in range(4):
                        bb = 2 * j + v - 1
                        if 0 <= bb < ow:
                            for o in range(cout):
                                g = gy[o, a, bb]
                                acc += g * w[c, o, u, v]
                                gw[c, o, u, v] += xv * g
                gx[c, i, j] = acc
    return gx_arr, gw_arr, gb_arr


def maxpool2x2_forward(double[:, :, ::1] x):
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t h2 = h // 2, w2 = w // 2
    y_arr = np.empty((c, h2, w2))
    idx_arr = np.empty((c, h2, w2), dtype=np.int64)
    cdef double[:, :, ::1] y = y_arr
    cdef long long[:, :, ::1] idx = idx_arr
    cdef Py_ssize_t k, i, j, u, v, best
    cdef double m, val
    for k in range(c):
        for i in range(h2):
            for j in range(w2):
                m = x[k, 2 * i, 2 * j]
                best = 0
                for u in range(2):
                    for v in range(2):
                        val = x[k, 2 * i + u, 2 * j + v]
                        if val > m:
                            m = val
                            best = 2 * u + v
                y[k, i, j] = m
                idx[k, i, j] = best
    return y_arr, idx_arr


def maxpool2x2_backward(long long[:, :, ::1] idx, double[:, :, ::1] gy, Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t c = gy.shape[0], h2 = gy.shape[1], w2 = gy.shape[2]
    gx_arr = np.zeros((c, h, w))
    cdef double[:, :, ::1] gx = gx_arr
    cdef Py_ssize_t k, i, j, b
    for k in range(c):
        for i in range(h2):
            for j in range(w2):
                b = idx[k, i, j]
                gx[k, 2 * i + b // 2, 2 * j + b % 2] = gy[k, i, j]
    return gx_arr
