"""Pure-numpy convolution kernels.

Mirrors the compiled extension in ``_core.pyx`` function for function. Each
convolution is decomposed into its kH*kW taps; every tap is one batched
matmul over channels, so the heavy lifting stays inside BLAS. Two layouts
exist: odd-kernel stride-1 convs with replicate padding (output size equals
input size) and 2x2 stride-2 convs without padding (output size halved).
"""

import numpy as np


def forward_s1(x, w):
    n, c, h, wd = x.shape
    co, _, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), mode="edge") if ph or pw else x
    out = np.zeros((n, co, h, wd), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            tap = xp[:, :, i:i + h, j:j + wd].reshape(n, c, h * wd)
            out += np.matmul(w[:, :, i, j], tap).reshape(n, co, h, wd)
    return out


def forward_s2(x, w):
    n, c, h, wd = x.shape
    co = w.shape[0]
    h2, w2 = h // 2, wd // 2
    out = np.zeros((n, co, h2, w2), dtype=x.dtype)
    for i in range(2):
        for j in range(2):
            tap = x[:, :, i::2, j::2].reshape(n, c, h2 * w2)
            out += np.matmul(w[:, :, i, j], tap).reshape(n, co, h2, w2)
    return out


def backward_input_s1(gy, w):
    n, co, h, wd = gy.shape
    c, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    ph, pw = kh // 2, kw // 2
    gyf = gy.reshape(n, co, h * wd)
    gxp = np.zeros((n, c, h + 2 * ph, wd + 2 * pw), dtype=gy.dtype)
    for i in range(kh):
        for j in range(kw):
            g = np.matmul(w[:, :, i, j].T, gyf).reshape(n, c, h, wd)
            gxp[:, :, i:i + h, j:j + wd] += g
    return _fold_edge_pad(gxp, ph, pw)


def _fold_edge_pad(gxp, ph, pw):
    # Adjoint of replicate padding: pad-border gradients collapse onto the
    # nearest interior cell, one axis at a time.
    if pw:
        mid = gxp[:, :, :, pw:gxp.shape[3] - pw].copy()
        mid[:, :, :, 0] += gxp[:, :, :, :pw].sum(axis=3)
        mid[:, :, :, -1] += gxp[:, :, :, gxp.shape[3] - pw:].sum(axis=3)
    else:
        mid = gxp
    if ph:
        out = mid[:, :, ph:mid.shape[2] - ph, :].copy()
        out[:, :, 0, :] += mid[:, :, :ph, :].sum(axis=2)
        out[:, :, -1, :] += mid[:, :, mid.shape[2] - ph:, :].sum(axis=2)
    else:
        out = mid
    return out


def backward_input_s2(gy, w):
    n, co, h2, w2 = gy.shape
    c = w.shape[1]
    gyf = gy.reshape(n, co, h2 * w2)
    gx = np.empty((n, c, 2 * h2, 2 * w2), dtype=gy.dtype)
    for i in range(2):
        for j in range(2):
            gx[:, :, i::2, j::2] = np.matmul(w[:, :, i, j].T, gyf).reshape(n, c, h2, w2)
    return gx


def backward_weight_s1(gy, x, kh, kw):
    n, co, h, wd = gy.shape
    c = x.shape[1]
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), mode="edge") if ph or pw else x
    gyf = gy.reshape(n, co, h * wd)
    gw = np.empty((co, c, kh, kw), dtype=gy.dtype)
    for i in range(kh):
        for j in range(kw):
            tap = xp[:, :, i:i + h, j:j + wd].reshape(n, c, h * wd)
            gw[:, :, i, j] = np.matmul(gyf, tap.transpose(0, 2, 1)).sum(axis=0)
    return gw


def backward_weight_s2(gy, x):
    n, co, h2, w2 = gy.shape
    c = x.shape[1]
    gyf = gy.reshape(n, co, h2 * w2)
    gw = np.empty((co, c, 2, 2), dtype=gy.dtype)
    for i in range(2):
        for j in range(2):
            tap = x[:, :, i::2, j::2].reshape(n, c, h2 * w2)
            gw[:, :, i, j] = np.matmul(gyf, tap.transpose(0, 2, 1)).sum(axis=0)
    return gw
