"""Numba-compiled kernels.

Loop nesting mirrors reference.py exactly: per output element the
accumulator starts at the bias (or a typed zero) and adds taps in
lexicographic order, so forward results are bit-identical to the numpy
backend (LLVM does not fuse multiply-adds without fastmath, which stays
off).
"""

import numpy as np
from numba import njit

_OPTS = dict(cache=True, fastmath=False)


@njit(**_OPTS)
def conv2d_fwd(x, w, b, stride, pad):
    co, ci, k, _ = w.shape
    _, h, wi = x.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wi + 2 * pad - k) // stride + 1
    xp = np.zeros((ci, h + 2 * pad, wi + 2 * pad), dtype=x.dtype)
    xp[:, pad:pad + h, pad:pad + wi] = x
    out = np.empty((co, oh, ow), dtype=x.dtype)
    for o in range(co):
        for i in range(oh):
            for j in range(ow):
                acc = b[o]
                for c in range(ci):
                    for kh in range(k):
                        for kw in range(k):
                            acc = acc + xp[c, i * stride + kh, j * stride + kw] * w[o, c, kh, kw]
                out[o, i, j] = acc
    return out


@njit(**_OPTS)
def conv2d_bwd_input(g, w, stride, pad, h, wi):
    co, ci, k, _ = w.shape
    oh, ow = g.shape[1], g.shape[2]
    zero = np.zeros(1, dtype=g.dtype)[0]
    gx = np.empty((ci, h, wi), dtype=g.dtype)
    for c in range(ci):
        for ih in range(h):
            for iw in range(wi):
                acc = zero
                for o in range(co):
                    for kh in range(k):
                        t = ih + pad - kh
                        if t < 0 or t % stride != 0:
                            continue
                        i = t // stride
                        if i >= oh:
                            continue
                        for kw in range(k):
                            u = iw + pad - kw
                            if u < 0 or u % stride != 0:
                                continue
                            j = u // stride
                            if j >= ow:
                                continue
                            acc = acc + g[o, i, j] * w[o, c, kh, kw]
                gx[c, ih, iw] = acc
    return gx


@njit(**_OPTS)
def conv2d_bwd_weight(x, g, k, stride, pad):
    ci, h, wi = x.shape
    co, oh, ow = g.shape
    xp = np.zeros((ci, h + 2 * pad, wi + 2 * pad), dtype=x.dtype)
    xp[:, pad:pad + h, pad:pad + wi] = x
    zero = np.zeros(1, dtype=x.dtype)[0]
    gw = np.empty((co, ci, k, k), dtype=x.dtype)
    for o in range(co):
        for c in range(ci):
            for kh in range(k):
                for kw in range(k):
                    acc = zero
                    for i in range(oh):
                        for j in range(ow):
                            acc = acc + xp[c, i * stride + kh, j * stride + kw] * g[o, i, j]
                    gw[o, c, kh, kw] = acc
    return gw


@njit(**_OPTS)
def deconv2d_fwd(y, w, b, stride):
    ci, co, k, _ = w.shape
    _, h, wi = y.shape
    pad = (k - 1) // 2
    oh, ow = stride * h, stride * wi
    out = np.empty((co, oh, ow), dtype=y.dtype)
    for o in range(co):
        for ih in range(oh):
            for iw in range(ow):
                acc = b[o]
                for c in range(ci):
                    for kh in range(k):
                        t = ih - kh + pad
                        if t < 0 or t % stride != 0:
                            continue
                        r = t // stride
                        if r >= h:
                            continue
                        for kw in range(k):
                            u = iw - kw + pad
                            if u < 0 or u % stride != 0:
                                continue
                            s = u // stride
                            if s >= wi:
                                continue
                            acc = acc + y[c, r, s] * w[c, o, kh, kw]
                out[o, ih, iw] = acc
    return out


@njit(**_OPTS)
def deconv2d_bwd_input(g, w, stride):
    ci = w.shape[0]
    k = w.shape[2]
    pad = (k - 1) // 2
    zeros = np.zeros(ci, dtype=g.dtype)
    return conv2d_fwd(g, w, zeros, stride, pad)


@njit(**_OPTS)
def deconv2d_bwd_weight(y, g, k, stride):
    pad = (k - 1) // 2
    return conv2d_bwd_weight(g, y, k, stride, pad)


@njit(**_OPTS)
def conv3d_fwd(x, w, b, mask):
    fo, fi, k, _, _ = w.shape
    _, d, h, wi = x.shape
    pad = (k - 1) // 2
    xp = np.zeros((fi, d + 2 * pad, h + 2 * pad, wi + 2 * pad), dtype=x.dtype)
    xp[:, pad:pad + d, pad:pad + h, pad:pad + wi] = x
    out = np.empty((fo, d, h, wi), dtype=x.dtype)
    for o in range(fo):
        for dd in range(d):
            for i in range(h):
                for j in range(wi):
                    acc = b[o]
                    for c in range(fi):
                        for kd in range(k):
                            for kh in range(k):
                                for kw in range(k):
                                    if mask[kd, kh, kw]:
                                        acc = acc + xp[c, dd + kd, i + kh, j + kw] * w[o, c, kd, kh, kw]
                    out[o, dd, i, j] = acc
    return out


@njit(**_OPTS)
def conv3d_bwd_input(g, w, mask):
    fo, fi, k, _, _ = w.shape
    _, d, h, wi = g.shape
    pad = (k - 1) // 2
    gxp = np.zeros((fi, d + 2 * pad, h + 2 * pad, wi + 2 * pad), dtype=g.dtype)
    for o in range(fo):
        for kd in range(k):
            for kh in range(k):
                for kw in range(k):
                    if not mask[kd, kh, kw]:
                        continue
                    for c in range(fi):
                        for dd in range(d):
                            for i in range(h):
                                for j in range(wi):
                                    gxp[c, dd + kd, i + kh, j + kw] += g[o, dd, i, j] * w[o, c, kd, kh, kw]
    return np.ascontiguousarray(gxp[:, pad:pad + d, pad:pad + h, pad:pad + wi])


@njit(**_OPTS)
def conv3d_bwd_weight(x, g, k, mask):
    fi, d, h, wi = x.shape
    fo = g.shape[0]
    pad = (k - 1) // 2
    xp = np.zeros((fi, d + 2 * pad, h + 2 * pad, wi + 2 * pad), dtype=x.dtype)
    xp[:, pad:pad + d, pad:pad + h, pad:pad + wi] = x
    zero = np.zeros(1, dtype=x.dtype)[0]
    gw = np.zeros((fo, fi, k, k, k), dtype=x.dtype)
    for o in range(fo):
        for c in range(fi):
            for kd in range(k):
                for kh in range(k):
                    for kw in range(k):
                        if not mask[kd, kh, kw]:
                            continue
                        acc = zero
                        for dd in range(d):
                            for i in range(h):
                                for j in range(wi):
                                    acc = acc + xp[c, dd + kd, i + kh, j + kw] * g[o, dd, i, j]
                        gw[o, c, kd, kh, kw] = acc
    return gw


@njit(**_OPTS)
def matmul_fwd(a, b):
    n, k = a.shape
    m = b.shape[1]
    zero = np.zeros(1, dtype=a.dtype)[0]
    out = np.empty((n, m), dtype=a.dtype)
    for r in range(n):
        for c in range(m):
            acc = zero
            for i in range(k):
                acc = acc + a[r, i] * b[i, c]
            out[r, c] = acc
    return out


@njit(**_OPTS)
def ctx_predict_at(volp, hyper, mw, mb, mmask, w1, b1, w2, b2, w3, b3, d, i, j):
    k = mw.shape[1]
    nf = mw.shape[0]
    zero = np.zeros(1, dtype=volp.dtype)[0]
    feats = np.empty(2 + nf, dtype=volp.dtype)
    feats[0] = hyper[0, d, i, j]
    feats[1] = hyper[1, d, i, j]
    for f in range(nf):
        acc = mb[f]
        for kd in range(k):
            for kh in range(k):
                for kw in range(k):
                    if mmask[kd, kh, kw]:
                        acc = acc + volp[d + kd, i + kh, j + kw] * mw[f, kd, kh, kw]
        feats[2 + f] = acc
    n1 = w1.shape[0]
    h1 = np.empty(n1, dtype=volp.dtype)
    for r in range(n1):
        acc = b1[r]
        for t in range(feats.shape[0]):
            acc = acc + w1[r, t] * feats[t]
        h1[r] = acc if acc > 0 else zero
    n2 = w2.shape[0]
    h2 = np.empty(n2, dtype=volp.dtype)
    for r in range(n2):
        acc = b2[r]
        for t in range(n1):
            acc = acc + w2[r, t] * h1[t]
        h2[r] = acc if acc > 0 else zero
    out = np.empty(2, dtype=volp.dtype)
    for r in range(2):
        acc = b3[r]
        for t in range(n2):
            acc = acc + w3[r, t] * h2[t]
        out[r] = acc
    return out
