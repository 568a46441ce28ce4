"""Pure-numpy kernels.

Every forward kernel accumulates tap contributions in a fixed order
(bias first, then taps in lexicographic index order). The numba twins in
``jit.py`` use the same order, so forward outputs are bit-identical across
backends. Backward kernels agree to float tolerance only.
"""

import numpy as np


def conv2d_fwd(x, w, b, stride, pad):
    co, ci, k, _ = w.shape
    _, h, wi = x.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wi + 2 * pad - k) // stride + 1
    xp = np.zeros((ci, h + 2 * pad, wi + 2 * pad), dtype=x.dtype)
    xp[:, pad:pad + h, pad:pad + wi] = x
    out = np.empty((co, oh, ow), dtype=x.dtype)
    for o in range(co):
        acc = np.full((oh, ow), b[o], dtype=x.dtype)
        for c in range(ci):
            for kh in range(k):
                for kw in range(k):
                    sl = xp[c, kh:kh + oh * stride:stride, kw:kw + ow * stride:stride]
                    acc = acc + sl * w[o, c, kh, kw]
        out[o] = acc
    return out


def conv2d_bwd_input(g, w, stride, pad, h, wi):
    co, ci, k, _ = w.shape
    oh, ow = g.shape[1], g.shape[2]
    gxp = np.zeros((ci, h + 2 * pad, wi + 2 * pad), dtype=g.dtype)
    for o in range(co):
        for kh in range(k):
            for kw in range(k):
                gxp[:, kh:kh + oh * stride:stride, kw:kw + ow * stride:stride] += (
                    g[o][None, :, :] * w[o, :, kh, kw][:, None, None]
                )
    return np.ascontiguousarray(gxp[:, pad:pad + h, pad:pad + wi])


def conv2d_bwd_weight(x, g, k, stride, pad):
    ci, h, wi = x.shape
    co, oh, ow = g.shape
    xp = np.zeros((ci, h + 2 * pad, wi + 2 * pad), dtype=x.dtype)
    xp[:, pad:pad + h, pad:pad + wi] = x
    gw = np.empty((co, ci, k, k), dtype=x.dtype)
    for kh in range(k):
        for kw in range(k):
            sl = xp[:, kh:kh + oh * stride:stride, kw:kw + ow * stride:stride]
            # [co, ci] <- sum over spatial of g[o] * x[c]
            gw[:, :, kh, kw] = np.tensordot(g, sl, axes=([1, 2], [1, 2]))
    return gw


def deconv2d_fwd(y, w, b, stride):
    ci, co, k, _ = w.shape
    _, h, wi = y.shape
    pad = (k - 1) // 2
    oh, ow = stride * h, stride * wi
    out = np.empty((co, oh, ow), dtype=y.dtype)
    # adjoint of conv2d_fwd with the same weight: each input element scatters
    # through the kernel; output row ih receives input row r iff
    # ih = r*stride + kh - pad for some tap row kh.
    for o in range(co):
        acc = np.full((oh, ow), b[o], dtype=y.dtype)
        for c in range(ci):
            for kh in range(k):
                for kw in range(k):
                    ih0 = kh - pad
                    lo_r = max(0, int(np.ceil(-ih0 / stride)))
                    hi_r = min(h, int(np.floor((oh - 1 - ih0) / stride)) + 1)
                    iw0 = kw - pad
                    lo_c = max(0, int(np.ceil(-iw0 / stride)))
                    hi_c = min(wi, int(np.floor((ow - 1 - iw0) / stride)) + 1)
                    if lo_r >= hi_r or lo_c >= hi_c:
                        continue
                    dst = acc[lo_r * stride + ih0:(hi_r - 1) * stride + ih0 + 1:stride,
                              lo_c * stride + iw0:(hi_c - 1) * stride + iw0 + 1:stride]
                    dst += y[c, lo_r:hi_r, lo_c:hi_c] * w[c, o, kh, kw]
        out[o] = acc
    return out


def deconv2d_bwd_input(g, w, stride):
    # d/dy <deconv(y; w), g> = conv(g; w) with w's first axis as output channels
    ci = w.shape[0]
    k = w.shape[2]
    pad = (k - 1) // 2
    zeros = np.zeros(ci, dtype=g.dtype)
    return conv2d_fwd(g, w, zeros, stride, pad)


def deconv2d_bwd_weight(y, g, k, stride):
    # gw[ci, co, kh, kw] = sum_r y[ci, r] * g[co, r*stride + kh - pad];
    # conv2d_bwd_weight with roles swapped already lands in [ci, co] layout
    pad = (k - 1) // 2
    return conv2d_bwd_weight(g, y, k, stride, pad)


def conv3d_fwd(x, w, b, mask):
    fo, fi, k, _, _ = w.shape
    _, d, h, wi = x.shape
    pad = (k - 1) // 2
    xp = np.zeros((fi, d + 2 * pad, h + 2 * pad, wi + 2 * pad), dtype=x.dtype)
    xp[:, pad:pad + d, pad:pad + h, pad:pad + wi] = x
    out = np.empty((fo, d, h, wi), dtype=x.dtype)
    for o in range(fo):
        acc = np.full((d, h, wi), b[o], dtype=x.dtype)
        for c in range(fi):
            for kd in range(k):
                for kh in range(k):
                    for kw in range(k):
                        if not mask[kd, kh, kw]:
                            continue
                        sl = xp[c, kd:kd + d, kh:kh + h, kw:kw + wi]
                        acc = acc + sl * w[o, c, kd, kh, kw]
        out[o] = acc
    return out


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
                    gxp[:, kd:kd + d, kh:kh + h, kw:kw + wi] += (
                        g[o][None] * w[o, :, kd, kh, kw][:, None, None, None]
                    )
    return np.ascontiguousarray(gxp[:, pad:pad + d, pad:pad + h, pad:pad + wi])


def conv3d_bwd_weight(x, g, k, mask):
    fi, d, h, wi = x.shape
    fo = g.shape[0]
    pad = (k - 1) // 2
    xp = np.zeros((fi, d + 2 * pad, h + 2 * pad, wi + 2 * pad), dtype=x.dtype)
    xp[:, pad:pad + d, pad:pad + h, pad:pad + wi] = x
    gw = np.zeros((fo, fi, k, k, k), dtype=x.dtype)
    gf = g.reshape(fo, -1)
    for kd in range(k):
        for kh in range(k):
            for kw in range(k):
                if not mask[kd, kh, kw]:
                    continue
                sl = xp[:, kd:kd + d, kh:kh + h, kw:kw + wi].reshape(fi, -1)
                gw[:, :, kd, kh, kw] = gf @ sl.T
    return gw


def matmul_fwd(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m), dtype=a.dtype)
    for i in range(k):
        out += a[:, i:i + 1] * b[i:i + 1, :]
    return out


def ctx_predict_at(volp, hyper, mw, mb, mmask, w1, b1, w2, b2, w3, b3, d, i, j):
    """Conditional mean/log-scale prediction for a single volume position.

    volp is the zero-padded (by k//2 on every axis) single-feature work
    volume of already-coded values; hyper the 2-feature side-information
    volume. Returns a 2-vector (mu, raw log-scale).
    """
    k = mw.shape[1]
    nf = mw.shape[0]
    feats = np.empty(2 + nf, dtype=volp.dtype)
    feats[0] = hyper[0, d, i, j]
    feats[1] = hyper[1, d, i, j]
    acc = mb.copy()
    for kd in range(k):
        for kh in range(k):
            for kw in range(k):
                if not mmask[kd, kh, kw]:
                    continue
                acc = acc + volp[d + kd, i + kh, j + kw] * mw[:, kd, kh, kw]
    feats[2:] = acc
    h1 = b1.copy()
    for t in range(feats.shape[0]):
        h1 = h1 + w1[:, t] * feats[t]
    h1[h1 <= 0] = 0
    h2 = b2.copy()
    for t in range(h1.shape[0]):
        h2 = h2 + w2[:, t] * h1[t]
    h2[h2 <= 0] = 0
    out = b3.copy()
    for t in range(h2.shape[0]):
        out = out + w3[:, t] * h2[t]
    return out
