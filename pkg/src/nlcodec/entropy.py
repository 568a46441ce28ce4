"""Probability models for the quantized latents and hyper-latents.

* a learned per-channel factorized density for the hyper-latent, built as a
  K=4 stack of monotone scalar transforms (positivity-reparameterized
  weights, tanh-gated skips, sigmoid output) so its CDF is strictly
  increasing for any parameter values
* a conditional Gaussian convolved with U(-1/2,1/2) for the main latent,
  evaluated as a CDF difference across the unit interval
* differentiable bit estimates and deterministic 16-bit quantized CDF
  tables for the range coder
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import special as _special

from . import tensor as T
from .errors import ContractError

R_FILTERS = (1, 3, 3, 3, 1)
TAIL_BOUND = 30.0
PMF_FLOOR = 1e-9
CDF_TOTAL = 1 << 16
SUPPORT_LIMIT = 255


@dataclass
class DensityStage:
    h: T.Tensor  # pre-softplus weight [N, r_out, r_in]
    b: T.Tensor  # bias [N, r_out, 1]
    a: T.Tensor  # pre-tanh gate [N, r_out, 1]


@dataclass
class DensityParams:
    stages: list

    @property
    def channels(self):
        return self.stages[0].h.data.shape[0]


def init_density(rng, channels, dtype=np.float32):
    stages = []
    for k in range(len(R_FILTERS) - 1):
        r_in, r_out = R_FILTERS[k], R_FILTERS[k + 1]
        # softplus(h) ~ 1/r_in keeps the end-to-end slope near 1
        h0 = math.log(math.expm1(1.0 / r_in))
        h = h0 + 0.01 * rng.standard_normal((channels, r_out, r_in))
        b = rng.uniform(-0.5, 0.5, size=(channels, r_out, 1))
        a = np.zeros((channels, r_out, 1))
        stages.append(DensityStage(
            h=T.tensor(h.astype(dtype), dtype=dtype, requires_grad=True),
            b=T.tensor(b.astype(dtype), dtype=dtype, requires_grad=True),
            a=T.tensor(a.astype(dtype), dtype=dtype, requires_grad=True),
        ))
    return DensityParams(stages)


def _sigmoid(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def _flow_forward(x, raw):
    """Evaluate the monotone CDF c(x) for x [N, M].

    raw is a list of (h_raw, b, a_raw) arrays per stage. Returns (c, saved)
    with everything needed for the backward pass.
    """
    u = x[:, None, :]
    saved = []
    n_stages = len(raw)
    for k, (hr, b, ar) in enumerate(raw):
        big_h = np.logaddexp(0, hr)  # softplus, strictly positive
        t = np.einsum("nij,njm->nim", big_h, u) + b
        a = np.tanh(ar)
        th = np.tanh(t)
        w = t + a * th
        saved.append((u, t, a, th, big_h, _sigmoid(hr)))
        if k < n_stages - 1:
            u = w
        else:
            c = _sigmoid(w)
    saved.append(c)
    return c[:, 0, :], saved


def _flow_backward(saved, g):
    c = saved[-1]
    stages = saved[:-1]
    gw = (g[:, None, :] * c * (1.0 - c)).astype(g.dtype, copy=False)
    grads = [None] * (1 + 3 * len(stages))
    for k in range(len(stages) - 1, -1, -1):
        u, t, a, th, big_h, sig_hr = stages[k]
        gt = gw * (1.0 + a * (1.0 - th * th))
        ga = (gw * th).sum(axis=2, keepdims=True) * (1.0 - a * a)
        gb = gt.sum(axis=2, keepdims=True)
        gh = np.einsum("nim,njm->nij", gt, u) * sig_hr
        gu = np.einsum("nij,nim->njm", big_h, gt)
        grads[1 + 3 * k] = gh
        grads[2 + 3 * k] = gb
        grads[3 + 3 * k] = ga
        gw = gu
    grads[0] = gu[:, 0, :]
    return grads


def density_cdf(x, density):
    """Differentiable per-channel CDF evaluated elementwise on x [N, M]."""
    inputs = [x]
    for st in density.stages:
        inputs.extend((st.h, st.b, st.a))
    n_stages = len(density.stages)
    def fwd(*arrays):
        xa, rest = arrays[0], arrays[1:]
        raw = [tuple(rest[3 * k:3 * k + 3]) for k in range(n_stages)]
        return _flow_forward(xa, raw)
    return T.custom_op("density_cdf", inputs, fwd, _flow_backward)


def density_cdf_np(x, density, dtype=np.float64):
    """Non-recording float64 evaluation used on the coding path."""
    raw = [(st.h.data.astype(dtype), st.b.data.astype(dtype), st.a.data.astype(dtype))
           for st in density.stages]
    c, _ = _flow_forward(np.asarray(x, dtype=dtype), raw)
    return c


def factorized_pmf(z_hat, density):
    """P(ẑ = n) = c(n + 1/2) - c(n - 1/2), floored before any log."""
    n, h, w = z_hat.data.shape
    zf = T.reshape(z_hat, (n, h * w))
    upper = density_cdf(T.add(zf, 0.5), density)
    lower = density_cdf(T.sub(zf, 0.5), density)
    p = T.clamp(T.sub(upper, lower), PMF_FLOOR, 1.0)
    return T.reshape(p, (n, h, w))


_NEG_INV_SQRT2 = -1.0 / math.sqrt(2.0)


def gaussian_pmf(y_hat, mu, sigma):
    """P(ŷ = n) under N(mu, sigma^2) * U(-1/2, 1/2), floored before any log."""
    if np.any(sigma.data <= 0):
        raise ContractError("sigma must be strictly positive")
    hi = T.div(T.sub(T.add(y_hat, 0.5), mu), sigma)
    lo = T.div(T.sub(T.sub(y_hat, 0.5), mu), sigma)
    # Phi(t) = erfc(-t/sqrt(2)) / 2
    p = T.mul(T.sub(T.erfc(T.mul(hi, _NEG_INV_SQRT2)), T.erfc(T.mul(lo, _NEG_INV_SQRT2))), 0.5)
    return T.clamp(p, PMF_FLOOR, 1.0)


def rate_estimate(pmf):
    """Total bits -sum(log2 p); differentiable through the PMF inputs."""
    return T.mul(T.tsum(T.log(pmf)), -1.0 / math.log(2.0))


# ---------------------------------------------------------------------------
# quantized CDF tables for the range coder

def support_bounds(values):
    """Per-tensor integer coding support, clamped to +-SUPPORT_LIMIT."""
    v = np.asarray(values)
    lo = int(np.clip(v.min(), -SUPPORT_LIMIT, SUPPORT_LIMIT))
    hi = int(np.clip(v.max(), -SUPPORT_LIMIT, SUPPORT_LIMIT))
    return lo, hi


def quantize_pmf(p):
    """Map a positive float64 PMF to a monotone integer CDF table with total
    2^16 and at least one unit of mass per symbol. Deterministic."""
    s = p.size
    table = np.empty(s + 1, dtype=np.uint32)
    table[0] = 0
    table[s] = CDF_TOTAL
    if s > 1:
        budget = CDF_TOTAL - s
        total = float(p.sum())
        cum = np.cumsum(p[:-1]) / total
        inner = np.floor(cum * budget + 0.5).astype(np.uint32)
        table[1:s] = np.arange(1, s, dtype=np.uint32) + inner
    return table


def _phi(t):
    return 0.5 * _special.erfc(-t / math.sqrt(2.0))


def gaussian_bin_masses(mu, sigma, n_min, n_max):
    edges = np.arange(n_min, n_max + 1, dtype=np.float64)
    upper = _phi((edges + 0.5 - mu) / sigma)
    lower = _phi((edges - 0.5 - mu) / sigma)
    p = upper - lower
    p[0] += lower[0]          # fold left tail
    p[-1] += 1.0 - upper[-1]  # fold right tail
    return np.maximum(p, 0.0)


def build_cdf_gaussian(mu, sigma, n_min, n_max):
    if n_min > n_max:
        raise ContractError("empty coding support")
    return quantize_pmf(gaussian_bin_masses(float(mu), float(sigma), n_min, n_max))


def build_cdf_factorized(density, channel, n_min, n_max):
    """Per-channel table for the hyper-latent; identical for every position
    of the channel."""
    if n_min > n_max:
        raise ContractError("empty coding support")
    sub = DensityParams([
        DensityStage(
            h=T.tensor(st.h.data[channel:channel + 1], dtype=st.h.data.dtype),
            b=T.tensor(st.b.data[channel:channel + 1], dtype=st.b.data.dtype),
            a=T.tensor(st.a.data[channel:channel + 1], dtype=st.a.data.dtype),
        ) for st in density.stages
    ])
    edges = np.arange(n_min, n_max + 1, dtype=np.float64)
    upper = density_cdf_np((edges + 0.5)[None, :], sub)[0]
    lower = density_cdf_np((edges - 0.5)[None, :], sub)[0]
    p = upper - lower
    p[0] += lower[0]
    p[-1] += 1.0 - upper[-1]
    return quantize_pmf(np.maximum(p, 0.0))


def density_tail_penalty(density):
    """Training-time regularizer pinning c(-TAIL_BOUND) to 0 and
    c(TAIL_BOUND) to 1."""
    n = density.channels
    dtype = density.stages[0].h.data.dtype
    lo = T.tensor(np.full((n, 1), -TAIL_BOUND, dtype=dtype), dtype=dtype)
    hi = T.tensor(np.full((n, 1), TAIL_BOUND, dtype=dtype), dtype=dtype)
    c_lo = density_cdf(lo, density)
    c_hi = density_cdf(hi, density)
    one_minus = T.mul(T.sub(c_hi, 1.0), -1.0)
    return T.add(T.tsum(T.mul(c_lo, c_lo)), T.tsum(T.mul(one_minus, one_minus)))
