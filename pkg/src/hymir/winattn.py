"""Window-partitioned multi-head self-attention.

The map is tiled into non-overlapping w_s x w_s windows; attention runs
inside each window independently (no shifting, no relative position bias),
so windows never exchange information within one block. Successive
attention blocks in a stage widen the window by a fixed step instead.
"""

import logging
import math

from . import ops
from .nn import LayerNorm, Linear, Mlp, Module
from .tensor import as_tensor

log = logging.getLogger(__name__)


def window_schedule(block_index, base=8, step=8):
    """Window edge for the i-th attention block of a stage: base + step*i."""
    if block_index < 0:
        raise ValueError(f"block_index must be >= 0, got {block_index}")
    return base + step * block_index


def window_partition(x, window_size):
    """(B, C, H, W) -> (B*(H/w)*(W/w), w*w, C), row-major inside each tile."""
    x = as_tensor(x)
    b, c, h, w = x.shape
    ws = int(window_size)
    if ws < 1:
        raise ValueError(f"window_size must be >= 1, got {ws}")
    if h % ws or w % ws:
        need_h = math.ceil(h / ws) * ws
        need_w = math.ceil(w / ws) * ws
        raise ValueError(
            f"extent {h}x{w} not divisible by window {ws}; pad to {need_h}x{need_w} first"
        )
    nh, nw = h // ws, w // ws
    t = ops.reshape(x, (b, c, nh, ws, nw, ws))
    t = ops.transpose(t, (0, 2, 4, 3, 5, 1))
    return ops.reshape(t, (b * nh * nw, ws * ws, c))


def window_merge(windows, window_size, batch, height, width):
    """Exact inverse of window_partition."""
    windows = as_tensor(windows)
    ws = int(window_size)
    nh, nw = height // ws, width // ws
    bw, t, c = windows.shape
    if bw != batch * nh * nw or t != ws * ws:
        raise ValueError(
            f"window batch {windows.shape} does not fit batch={batch}, extent {height}x{width}, window {ws}"
        )
    x = ops.reshape(windows, (batch, nh, nw, ws, ws, c))
    x = ops.transpose(x, (0, 5, 1, 3, 2, 4))
    return ops.reshape(x, (batch, c, height, width))


class WindowAttention(Module):
    """Scaled dot-product attention over (B_w, T, C) token windows."""

    def __init__(self, channels, heads, rng):
        super().__init__()
        if channels % heads:
            raise ValueError(f"channels {channels} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = channels // heads
        self.w_q = Linear(channels, channels, rng)
        self.w_k = Linear(channels, channels, rng)
        self.w_v = Linear(channels, channels, rng)
        self.w_o = Linear(channels, channels, rng)

    def _split_heads(self, x):
        bw, t, c = x.shape
        return ops.transpose(ops.reshape(x, (bw, t, self.heads, self.head_dim)), (0, 2, 1, 3))

    def forward(self, windows):
        bw, t, c = windows.shape
        q = self._split_heads(self.w_q(windows))
        k = self._split_heads(self.w_k(windows))
        v = self._split_heads(self.w_v(windows))
        scores = ops.mul(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(self.head_dim))
        attn = ops.softmax(scores, axis=-1)
        ctx = ops.transpose(ops.matmul(attn, v), (0, 2, 1, 3))
        return self.w_o(ops.reshape(ctx, (bw, t, c)))


class WindowAttentionBlock(Module):
    """Pre-norm window attention plus a pre-norm pointwise MLP, both residual.

    A window larger than the incoming map is clamped to the map extent (the
    degenerate single-window case); the clamp is logged once per block.
    """

    def __init__(self, channels, window_size, rng, heads=None, mlp_ratio=2.0):
        super().__init__()
        if window_size < 1:
            raise ValueError(f"window_size must be >= 1, got {window_size}")
        if heads is None:
            heads = max(1, channels // 32)
        self.channels = channels
        self.window_size = int(window_size)
        self.norm1 = LayerNorm(channels, axis=1)
        self.attn = WindowAttention(channels, heads, rng)
        self.norm2 = LayerNorm(channels, axis=1)
        self.mlp = Mlp(channels, mlp_ratio, rng)
        self._clamp_warned = False

    def forward(self, x):
        b, c, h, w = x.shape
        ws = self.window_size
        if ws > h or ws > w:
            ws = min(h, w)
            if not self._clamp_warned:
                log.warning("window %d exceeds %dx%d map, clamped to %d", self.window_size, h, w, ws)
                self._clamp_warned = True
        wins = window_partition(self.norm1(x), ws)
        x = ops.add(x, window_merge(self.attn(wins), ws, b, h, w))
        tok = ops.transpose(ops.reshape(self.norm2(x), (b, c, h * w)), (0, 2, 1))
        refined = ops.reshape(ops.transpose(self.mlp(tok), (0, 2, 1)), (b, c, h, w))
        return ops.add(x, refined)
