"""Pure-numpy implementations of the convolution/pooling hot kernels.

These are the fallback backend; the compiled Cython module `_convops`
provides the same signatures.  All arrays are float64 and C-contiguous.
Geometries are fixed: 3x3 conv (stride 1, pad 1), 4x4 transposed conv
(stride 2, pad 1) and 2x2 max pooling (stride 2).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv3x3_forward(x, w, b):
    # x (Cin,H,W), w (Cout,Cin,3,3), b (Cout,) -> (Cout,H,W)
    cin, h, wd = x.shape
    cout = w.shape[0]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))
    cols = np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4)).reshape(h * wd, cin * 9)
    y = cols @ w.reshape(cout, cin * 9).T + b
    return np.ascontiguousarray(y.T).reshape(cout, h, wd)


def conv3x3_backward(x, w, gy):
    cin, h, wd = x.shape
    cout = w.shape[0]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))
    cols = np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4)).reshape(h * wd, cin * 9)
    gyf = gy.reshape(cout, h * wd)
    gw = (gyf @ cols).reshape(cout, cin, 3, 3)
    gb = gy.sum(axis=(1, 2))
    # gx = correlation of gy with the flipped kernel
    wf = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    gyp = np.pad(gy, ((0, 0), (1, 1), (1, 1)))
    gwin = sliding_window_view(gyp, (3, 3), axis=(1, 2))
    gcols = np.ascontiguousarray(gwin.transpose(1, 2, 0, 3, 4)).reshape(h * wd, cout * 9)
    gx = np.ascontiguousarray((gcols @ wf.reshape(cin, cout * 9).T).T).reshape(cin, h, wd)
    return gx, gw, gb


def convt4x4_forward(x, w, b):
    # x (Cin,H,W), w (Cin,Cout,4,4), b (Cout,) -> (Cout,2H,2W)
    cin, h, wd = x.shape
    cout = w.shape[1]
    xs = np.zeros((cin, 2 * h + 3, 2 * wd + 3))
    xs[:, 2:2 * h + 1:2, 2:2 * wd + 1:2] = x
    win = sliding_window_view(xs, (4, 4), axis=(1, 2))
    cols = np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4)).reshape(4 * h * wd, cin * 16)
    wf = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(cout, cin * 16)
    y = cols @ wf.T + b
    return np.ascontiguousarray(y.T).reshape(cout, 2 * h, 2 * wd)


def convt4x4_backward(x, w, gy):
    cin, h, wd = x.shape
    cout = w.shape[1]
    gyp = np.pad(gy, ((0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(gyp, (4, 4), axis=(1, 2))[:, ::2, ::2]
    cols = np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4)).reshape(h * wd, cout * 16)
    gx = np.ascontiguousarray((cols @ w.reshape(cin, cout * 16).T).T).reshape(cin, h, wd)
    gw = (x.reshape(cin, h * wd) @ cols).reshape(cin, cout, 4, 4)
    gb = gy.sum(axis=(1, 2))
    return gx, gw, gb


def maxpool2x2_forward(x):
    c, h, w = x.shape
    r = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)
    idx = r.argmax(axis=3)
    y = np.take_along_axis(r, idx[..., None], axis=3)[..., 0]
    return np.ascontiguousarray(y), idx.astype(np.int64)


def maxpool2x2_backward(idx, gy, h, w):
    c, h2, w2 = gy.shape
    g4 = np.zeros((c, h2, w2, 4))
    np.put_along_axis(g4, idx[..., None], gy[..., None], axis=3)
    return np.ascontiguousarray(g4.reshape(c, h2, w2, 2, 2).transpose(0, 1, 3, 2, 4)).reshape(c, h, w)
