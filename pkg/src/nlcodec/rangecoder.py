"""Byte-oriented carry-propagating range coder and the sequential driver
that interleaves context-model evaluation with symbol coding.

The coder keeps a 32-bit range renormalized a byte at a time against a
2^24 threshold, with the classic cache + pending-0xFF carry chain, so the
emitted byte string is a pure function of the (symbol, CDF) sequence.
Symbols are indices into 16-bit-total quantized CDF tables.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .entropy import CDF_TOTAL, build_cdf_gaussian, build_cdf_factorized
from .errors import ContractError, DecodeError

_KTOP = 1 << 24
_MASK32 = (1 << 32) - 1
_PROB_BITS = 16


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def _shift_low(self):
        if self.low < 0xFF000000 or self.low > _MASK32:
            carry = self.low >> 32
            temp = self.cache
            while self.cache_size:
                self.out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
            self.cache = (self.low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (self.low << 8) & _MASK32

    def encode(self, cum_lo, cum_hi):
        r = self.range >> _PROB_BITS
        self.low += r * cum_lo
        self.range = r * (cum_hi - cum_lo)
        while self.range < _KTOP:
            self._shift_low()
            self.range = (self.range << 8) & _MASK32

    def finish(self):
        for _ in range(5):
            self._shift_low()
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data):
        self.data = data
        self.pos = 0
        self.range = _MASK32
        self.code = 0
        self._byte()  # first byte is the encoder's empty cache
        for _ in range(4):
            self.code = (self.code << 8) | self._byte()
        self._r = 0

    def _byte(self):
        if self.pos >= len(self.data):
            raise DecodeError("truncated range-coded stream")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def decode_symbol(self, table):
        self._r = self.range >> _PROB_BITS
        target = self.code // self._r
        if target >= CDF_TOTAL:
            target = CDF_TOTAL - 1
        s = int(np.searchsorted(table, target, side="right")) - 1
        cum_lo = int(table[s])
        cum_hi = int(table[s + 1])
        self.code -= self._r * cum_lo
        self.range = self._r * (cum_hi - cum_lo)
        while self.range < _KTOP:
            self.code = (self.code << 8) | self._byte()
            self.range = (self.range << 8) & _MASK32
        return s


def encode_symbols(symbols, cdfs):
    """Encode a sequence of table indices with per-symbol CDF tables.

    ``cdfs`` is either one table shared by every symbol or a sequence of
    equal length. The empty sequence encodes to the empty byte string.
    """
    symbols = list(symbols)
    if not symbols:
        return b""
    shared = isinstance(cdfs, np.ndarray)
    if not shared and len(cdfs) != len(symbols):
        raise ContractError("one CDF table per symbol required")
    enc = RangeEncoder()
    for idx, s in enumerate(symbols):
        table = cdfs if shared else cdfs[idx]
        if not 0 <= s < len(table) - 1:
            raise ContractError(f"symbol {s} outside CDF support (size {len(table) - 1})")
        enc.encode(int(table[s]), int(table[s + 1]))
    return enc.finish()


def decode_symbols(data, cdfs, count=None):
    """Inverse of encode_symbols; requires bit-identical tables."""
    shared = isinstance(cdfs, np.ndarray)
    n = count if shared else len(cdfs)
    if n is None:
        raise ContractError("symbol count required with a shared table")
    if n == 0:
        return []
    dec = RangeDecoder(data)
    out = []
    for idx in range(n):
        table = cdfs if shared else cdfs[idx]
        out.append(dec.decode_symbol(table))
    return out


# ---------------------------------------------------------------------------
# latent coding drivers

@dataclass
class CtxWeights:
    """Flat float32 views of the conditional context model, as consumed by
    the per-position prediction kernel."""
    mw: np.ndarray     # [24, k, k, k]
    mb: np.ndarray     # [24]
    mask: np.ndarray   # [k, k, k] uint8, type-A causal
    w1: np.ndarray     # [48, 26]
    b1: np.ndarray
    w2: np.ndarray     # [96, 48]
    b2: np.ndarray
    w3: np.ndarray     # [2, 96]
    b3: np.ndarray

    @property
    def pad(self):
        return (self.mw.shape[1] - 1) // 2


def _predict(volp, hyper2, cw, d, i, j):
    out = kernels.ctx_predict_at(volp, hyper2, cw.mw, cw.mb, cw.mask,
                                 cw.w1, cw.b1, cw.w2, cw.b2, cw.w3, cw.b3,
                                 d, i, j)
    mu = out[0]
    sigma = np.exp(np.clip(out[1], -10.0, 10.0).astype(out.dtype, copy=False))
    return mu, sigma


def encode_y_joint(enc, y_int, hyper2, cw, bounds):
    """Sequential joint coding of the main latent.

    The encoder runs the same routine as the decoder: predictions at each
    position read only already-coded positions from the work volume, so
    mu/sigma are bit-identical on both sides.
    """
    n_min, n_max = bounds
    nch, h, w = y_int.shape
    pad = cw.pad
    volp = np.zeros((nch + 2 * pad, h + 2 * pad, w + 2 * pad), dtype=np.float32)
    for d in range(nch):
        for i in range(h):
            for j in range(w):
                mu, sigma = _predict(volp, hyper2, cw, d, i, j)
                table = build_cdf_gaussian(mu, sigma, n_min, n_max)
                s = int(y_int[d, i, j]) - n_min
                if not 0 <= s < len(table) - 1:
                    raise ContractError("latent value outside declared support")
                enc.encode(int(table[s]), int(table[s + 1]))
                volp[d + pad, i + pad, j + pad] = np.float32(y_int[d, i, j])


def decode_y_joint(dec, shape, hyper2, cw, bounds):
    n_min, n_max = bounds
    nch, h, w = shape
    pad = cw.pad
    volp = np.zeros((nch + 2 * pad, h + 2 * pad, w + 2 * pad), dtype=np.float32)
    y = np.zeros(shape, dtype=np.int32)
    for d in range(nch):
        for i in range(h):
            for j in range(w):
                mu, sigma = _predict(volp, hyper2, cw, d, i, j)
                table = build_cdf_gaussian(mu, sigma, n_min, n_max)
                s = dec.decode_symbol(table)
                v = s + n_min
                y[d, i, j] = v
                volp[d + pad, i + pad, j + pad] = np.float32(v)
    return y


def encode_gaussian_array(enc, values, mu, sigma, bounds):
    """Baseline-mode coding: one table per position from batched (mu, sigma)."""
    n_min, n_max = bounds
    vf = values.reshape(-1)
    mf = mu.reshape(-1)
    sf = sigma.reshape(-1)
    for idx in range(vf.size):
        table = build_cdf_gaussian(mf[idx], sf[idx], n_min, n_max)
        s = int(vf[idx]) - n_min
        if not 0 <= s < len(table) - 1:
            raise ContractError("latent value outside declared support")
        enc.encode(int(table[s]), int(table[s + 1]))


def decode_gaussian_array(dec, shape, mu, sigma, bounds):
    n_min, n_max = bounds
    mf = mu.reshape(-1)
    sf = sigma.reshape(-1)
    out = np.empty(int(np.prod(shape)), dtype=np.int32)
    for idx in range(out.size):
        table = build_cdf_gaussian(mf[idx], sf[idx], n_min, n_max)
        out[idx] = dec.decode_symbol(table) + n_min
    return out.reshape(shape)


def encode_factorized_array(enc, z_int, density, bounds):
    """Hyper-latent coding: one table per channel, shared across positions."""
    n_min, n_max = bounds
    nch = z_int.shape[0]
    tables = [build_cdf_factorized(density, c, n_min, n_max) for c in range(nch)]
    for c in range(nch):
        table = tables[c]
        for v in z_int[c].reshape(-1):
            s = int(v) - n_min
            if not 0 <= s < len(table) - 1:
                raise ContractError("hyper-latent value outside declared support")
            enc.encode(int(table[s]), int(table[s + 1]))


def decode_factorized_array(dec, shape, density, bounds):
    n_min, n_max = bounds
    nch = shape[0]
    per = int(np.prod(shape[1:]))
    tables = [build_cdf_factorized(density, c, n_min, n_max) for c in range(nch)]
    out = np.empty(shape, dtype=np.int32)
    for c in range(nch):
        table = tables[c]
        flat = out[c].reshape(-1)
        for idx in range(per):
            flat[idx] = dec.decode_symbol(table) + n_min
    return out
