"""Composite building blocks: residual blocks, global (non-local) attention,
and the two-branch gated attention unit used throughout the codec transforms.

All blocks are pure functions of (input, params): safe to share read-only
across threads.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T


@dataclass
class Conv2dParams:
    w: T.Tensor
    b: T.Tensor

    @property
    def kernel(self):
        return self.w.data.shape[-1]


@dataclass
class ResBlockParams:
    """3x3 -> ReLU -> 3x3 with a skip; a single ReLU and no normalization."""
    conv1: Conv2dParams
    conv2: Conv2dParams


@dataclass
class NonLocalParams:
    """1x1 (channel) transforms of the global-attention block, bias-free."""
    w_query: T.Tensor
    w_key: T.Tensor
    w_value: T.Tensor
    w_out: T.Tensor


@dataclass
class AttentionParams:
    """Two-branch block: main = 3 ResBlocks + zero-init 1x1 conv, mask =
    non-local block + 3 ResBlocks + 1x1 conv + sigmoid gate.

    The trailing 1x1 conv on the main branch starts at zero so the whole
    block is an exact identity at initialization. Mask fields are None
    when the mask branch is ablated away.
    """
    main: list
    main_conv: Conv2dParams
    nl: NonLocalParams | None
    mask_res: list | None
    mask_conv: Conv2dParams | None

    @property
    def has_mask(self):
        return self.nl is not None


def init_conv2d(rng, c_out, c_in, k, dtype=np.float32, zero=False):
    if zero:
        w = np.zeros((c_out, c_in, k, k), dtype=dtype)
    else:
        bound = 1.0 / np.sqrt(c_in * k * k)
        w = rng.uniform(-bound, bound, size=(c_out, c_in, k, k)).astype(dtype)
    return Conv2dParams(
        w=T.tensor(w, dtype=dtype, requires_grad=True),
        b=T.tensor(np.zeros(c_out, dtype=dtype), dtype=dtype, requires_grad=True),
    )


def init_res_block(rng, c, dtype=np.float32):
    return ResBlockParams(init_conv2d(rng, c, c, 3, dtype), init_conv2d(rng, c, c, 3, dtype))


def init_non_local(rng, c, dtype=np.float32):
    bound = 1.0 / np.sqrt(c)
    def mat():
        return T.tensor(rng.uniform(-bound, bound, size=(c, c)).astype(dtype),
                        dtype=dtype, requires_grad=True)
    # w_out starts at zero: the block is the identity until training moves it
    return NonLocalParams(
        w_query=mat(), w_key=mat(), w_value=mat(),
        w_out=T.tensor(np.zeros((c, c), dtype=dtype), dtype=dtype, requires_grad=True),
    )


def init_attention(rng, c, with_mask=True, dtype=np.float32):
    main = [init_res_block(rng, c, dtype) for _ in range(3)]
    main_conv = init_conv2d(rng, c, c, 1, dtype, zero=True)
    if not with_mask:
        return AttentionParams(main, main_conv, None, None, None)
    nl = init_non_local(rng, c, dtype)
    mask_res = [init_res_block(rng, c, dtype) for _ in range(3)]
    mask_conv = init_conv2d(rng, c, c, 1, dtype)
    return AttentionParams(main, main_conv, nl, mask_res, mask_conv)


def res_block(x, p):
    t = T.relu(T.conv2d(x, p.conv1.w, p.conv1.b, stride=1))
    t = T.conv2d(t, p.conv2.w, p.conv2.b, stride=1)
    return T.add(x, t)


def non_local(x, p):
    """Global attention: every output position is a normalized weighted sum
    of value-transformed features over all positions, plus a projected skip."""
    c, h, w = x.data.shape
    xf = T.reshape(x, (c, h * w))
    q = T.matmul(p.w_query, xf)
    k = T.matmul(p.w_key, xf)
    v = T.matmul(p.w_value, xf)
    scores = T.matmul(T.transpose(q), k)          # [HW, HW]
    attn = T.softmax(scores, axis=1)              # rows sum to 1
    y = T.matmul(v, T.transpose(attn))
    z = T.add(T.matmul(p.w_out, y), xf)
    return T.reshape(z, (c, h, w))


def attention_block(x, p, mask_sink=None, name=""):
    """x + main(x) * gate(x); the gate is dropped entirely when ablated."""
    t = x
    for rb in p.main:
        t = res_block(t, rb)
    t = T.conv2d(t, p.main_conv.w, p.main_conv.b, stride=1)
    if not p.has_mask:
        return T.add(x, t)
    m = non_local(x, p.nl)
    for rb in p.mask_res:
        m = res_block(m, rb)
    m = T.conv2d(m, p.mask_conv.w, p.mask_conv.b, stride=1)
    mask = T.sigmoid(m)
    if mask_sink is not None:
        mask_sink.append((name, mask.numpy()))
    return T.add(x, T.mul(t, mask))
